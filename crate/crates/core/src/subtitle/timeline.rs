use serde::{Deserialize, Serialize};

use super::{CueList, TimeSpan};

/// Word-level view of a subtitle track.
///
/// Each cue's span is divided among its words in proportion to their
/// character length, so the word spans of one cue tile that cue exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordTimeline {
    words: Vec<String>,
    spans: Vec<TimeSpan>,
    cue_index: Vec<usize>,
    cue_spans: Vec<TimeSpan>,
}

impl WordTimeline {
    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn spans(&self) -> &[TimeSpan] {
        &self.spans
    }

    pub fn cue_index(&self) -> &[usize] {
        &self.cue_index
    }

    /// Span of the cue word `i` came from.
    pub fn cue_span_of(&self, i: usize) -> TimeSpan {
        self.cue_spans[self.cue_index[i]]
    }

    pub fn cue_spans(&self) -> &[TimeSpan] {
        &self.cue_spans
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Range covered by the subtitle track.
    pub fn extent(&self) -> Option<TimeSpan> {
        let first = self.cue_spans.first()?;
        Some(self.cue_spans.iter().fold(*first, |acc, s| acc.envelope(s)))
    }

    /// Indices of the words whose spans intersect `window`.
    pub fn words_in(&self, window: &TimeSpan) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.spans[i].intersects(window))
            .collect()
    }
}

pub fn build_word_timeline(cues: &CueList) -> WordTimeline {
    let mut words = Vec::new();
    let mut spans = Vec::new();
    let mut cue_index = Vec::new();
    let mut cue_spans = Vec::with_capacity(cues.len());
    for (ci, cue) in cues.cues().iter().enumerate() {
        cue_spans.push(cue.span);
        let toks: Vec<&str> = cue.text.split_whitespace().collect();
        let lens: Vec<usize> = toks.iter().map(|t| t.chars().count()).collect();
        let total: usize = lens.iter().sum();
        let (start, dur) = (cue.span.start_s, cue.span.duration());
        let at = |chars: usize| start + dur * chars as f64 / total as f64;
        let mut before = 0usize;
        for (k, (tok, len)) in toks.iter().zip(&lens).enumerate() {
            let s = if k == 0 { start } else { at(before) };
            before += len;
            let e = if k + 1 == toks.len() {
                cue.span.end_s
            } else {
                at(before)
            };
            words.push((*tok).to_string());
            spans.push(TimeSpan {
                start_s: s,
                end_s: e,
            });
            cue_index.push(ci);
        }
    }
    WordTimeline {
        words,
        spans,
        cue_index,
        cue_spans,
    }
}
