//! Subtitle ingestion: parsing, rolling-caption cleanup, word timelines and
//! topic-aware segments with aligned timestamps.

mod parse;
mod segment;
mod timeline;

use serde::{Deserialize, Serialize};

pub use parse::{
    dedup_overlap, dedup_overlap_with, parse_subtitles, to_srt, to_webvtt, SubtitleFormat,
};
pub use segment::{
    align_timestamps, topic_segment, PunctuationSegmenter, Segment, TopicSegmenter,
    DEFAULT_WORD_BUDGET,
};
pub use timeline::{build_word_timeline, WordTimeline};

use crate::error::{Error, Result};

/// Closed time interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSpan {
    pub start_s: f64,
    pub end_s: f64,
}

impl TimeSpan {
    pub fn new(start_s: f64, end_s: f64) -> Result<Self> {
        if !start_s.is_finite() || !end_s.is_finite() {
            return Err(Error::Input(format!(
                "non-finite time span ({start_s}, {end_s})"
            )));
        }
        if start_s < 0.0 {
            return Err(Error::Input(format!(
                "time span starts before zero: {start_s}"
            )));
        }
        if end_s < start_s {
            return Err(Error::Input(format!(
                "time span ends before it starts: ({start_s}, {end_s})"
            )));
        }
        Ok(Self { start_s, end_s })
    }

    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }

    /// Whether the two spans share time. Intervals of positive length must
    /// overlap on a set of positive measure; a zero-length span counts when
    /// it lies inside (or on the boundary of) the other.
    pub fn intersects(&self, other: &TimeSpan) -> bool {
        if self.duration() == 0.0 || other.duration() == 0.0 {
            self.start_s <= other.end_s && other.start_s <= self.end_s
        } else {
            self.start_s.max(other.start_s) < self.end_s.min(other.end_s)
        }
    }

    pub fn envelope(&self, other: &TimeSpan) -> TimeSpan {
        TimeSpan {
            start_s: self.start_s.min(other.start_s),
            end_s: self.end_s.max(other.end_s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cue {
    pub text: String,
    pub span: TimeSpan,
}

/// Subtitle cues sorted by start time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CueList {
    cues: Vec<Cue>,
}

impl CueList {
    /// Sorts the cues (stable on equal starts) and drops cues whose text is
    /// empty after whitespace normalization.
    pub fn new(mut cues: Vec<Cue>) -> Self {
        for c in &mut cues {
            c.text = normalize_whitespace(&c.text);
        }
        cues.retain(|c| !c.text.is_empty());
        cues.sort_by(|a, b| a.span.start_s.total_cmp(&b.span.start_s));
        Self { cues }
    }

    pub fn cues(&self) -> &[Cue] {
        &self.cues
    }

    pub fn len(&self) -> usize {
        self.cues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cues.is_empty()
    }

    pub fn into_cues(self) -> Vec<Cue> {
        self.cues
    }
}

pub(crate) fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
