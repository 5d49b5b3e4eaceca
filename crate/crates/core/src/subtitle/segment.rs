use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{TimeSpan, WordTimeline};
use crate::error::{Error, Result};

pub const DEFAULT_WORD_BUDGET: usize = 40;

/// Contiguous run of timeline words with its aligned time span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub word_range: Range<usize>,
    pub span: TimeSpan,
    pub text: String,
}

impl Segment {
    /// Builds the segment covering `range`, deriving span and text from the
    /// timeline.
    pub fn from_range(timeline: &WordTimeline, range: Range<usize>) -> Result<Self> {
        if range.is_empty() || range.end > timeline.len() {
            return Err(Error::Integrity(format!(
                "segment range {range:?} invalid for {} words",
                timeline.len()
            )));
        }
        let spans = timeline.spans();
        Ok(Self {
            span: TimeSpan {
                start_s: spans[range.start].start_s,
                end_s: spans[range.end - 1].end_s,
            },
            text: timeline.words()[range.clone()].join(" "),
            word_range: range,
        })
    }

    pub fn word_count(&self) -> usize {
        self.word_range.len()
    }
}

/// Supplies segment boundaries for a word sequence.
pub trait TopicSegmenter {
    /// Exclusive end index of every segment, strictly increasing, the last
    /// one equal to `words.len()`.
    fn boundaries(&self, words: &[String]) -> Vec<usize>;
}

/// Splits after sentence-final punctuation, then packs whole sentences into
/// segments of at most `word_budget` words. A sentence longer than the budget
/// is cut into budget-sized pieces.
#[derive(Debug, Clone, Copy)]
pub struct PunctuationSegmenter {
    pub word_budget: usize,
}

impl Default for PunctuationSegmenter {
    fn default() -> Self {
        Self {
            word_budget: DEFAULT_WORD_BUDGET,
        }
    }
}

fn ends_sentence(word: &str) -> bool {
    let trimmed = word.trim_end_matches(['"', '\'', ')', ']', '”', '’']);
    trimmed.ends_with(['.', '!', '?'])
}

impl TopicSegmenter for PunctuationSegmenter {
    fn boundaries(&self, words: &[String]) -> Vec<usize> {
        let budget = self.word_budget.max(1);
        let mut sentence_ends = Vec::new();
        for (i, w) in words.iter().enumerate() {
            if ends_sentence(w) {
                sentence_ends.push(i + 1);
            }
        }
        if sentence_ends.last() != Some(&words.len()) {
            sentence_ends.push(words.len());
        }

        let mut out = Vec::new();
        let mut seg_start = 0;
        let mut sent_start = 0;
        for end in sentence_ends {
            if end == 0 {
                continue;
            }
            let sent_len = end - sent_start;
            if sent_start > seg_start && (sent_start - seg_start) + sent_len > budget {
                out.push(sent_start);
                seg_start = sent_start;
            }
            while end - seg_start > budget {
                seg_start += budget;
                out.push(seg_start);
            }
            sent_start = end;
        }
        if seg_start < words.len() {
            out.push(words.len());
        }
        out
    }
}

/// Partitions the timeline into segments using `segmenter`.
pub fn topic_segment(
    timeline: &WordTimeline,
    segmenter: &dyn TopicSegmenter,
) -> Result<Vec<Segment>> {
    if timeline.is_empty() {
        return Err(Error::Input("cannot segment an empty timeline".into()));
    }
    let ends = segmenter.boundaries(timeline.words());
    let mut start = 0;
    let mut out = Vec::with_capacity(ends.len());
    for &end in &ends {
        if end <= start || end > timeline.len() {
            return Err(Error::Integrity(format!(
                "segmenter boundaries {ends:?} do not partition {} words",
                timeline.len()
            )));
        }
        out.push(Segment::from_range(timeline, start..end)?);
        start = end;
    }
    if start != timeline.len() {
        return Err(Error::Integrity(format!(
            "segmenter boundaries {ends:?} stop before word {}",
            timeline.len()
        )));
    }
    Ok(out)
}

/// Recomputes each segment's span as (first word start, last word end).
pub fn align_timestamps(segments: &[Segment], timeline: &WordTimeline) -> Result<Vec<Segment>> {
    segments
        .iter()
        .map(|s| Segment::from_range(timeline, s.word_range.clone()))
        .collect()
}
