//! Segment tagging with B-Seg / I-Seg / O labels: a linear-chain CRF over
//! contextualized segment encodings, and a prompt/verbalizer tagger.

pub mod crf;
mod crf_model;
mod encoder;
mod prompt;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use crf::{crf_log_partition, crf_nll_grad, crf_score, viterbi, CrfGrad};
pub use crf_model::{CrfConfig, CrfModel, CrfTrainConfig, TaggedSequence, TrainReport};
pub use encoder::{encode_segments, SegmentEncoder, ToyEncoder, MASK_TOKEN, SEP_TOKEN};
pub use prompt::{
    apply_prompt, prompt_label_distribution, table_template, verbalize, PromptConfig, PromptInput,
    PromptTagger, PromptTrainConfig, Template, Verbalizer, TABLE_TEMPLATES,
};

use crate::error::{Error, Result};
use crate::subtitle::{Segment, TimeSpan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    #[serde(rename = "B-Seg")]
    BSeg,
    #[serde(rename = "I-Seg")]
    ISeg,
    #[serde(rename = "O")]
    O,
}

impl Tag {
    pub const ALL: [Tag; 3] = [Tag::BSeg, Tag::ISeg, Tag::O];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Tag> {
        Tag::ALL.get(i).copied().ok_or(Error::Index {
            index: i,
            len: Tag::COUNT,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tag::BSeg => "B-Seg",
            Tag::ISeg => "I-Seg",
            Tag::O => "O",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "B-Seg" => Ok(Tag::BSeg),
            "I-Seg" => Ok(Tag::ISeg),
            "O" => Ok(Tag::O),
            other => Err(Error::Schema(format!("unknown tag `{other}`"))),
        }
    }
}

/// Tags for the segments of one video, in order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TagSequence(pub Vec<Tag>);

impl TagSequence {
    pub fn from_indices(idx: &[usize]) -> Result<Self> {
        idx.iter()
            .map(|&i| Tag::from_index(i))
            .collect::<Result<_>>()
            .map(Self)
    }

    pub fn indices(&self) -> Vec<usize> {
        self.0.iter().map(|t| t.index()).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tags(&self) -> &[Tag] {
        &self.0
    }

    /// Turns every I-Seg that has no preceding B-Seg/I-Seg into a B-Seg.
    pub fn repaired(&self) -> TagSequence {
        let mut prev = Tag::O;
        TagSequence(
            self.0
                .iter()
                .map(|&t| {
                    let fixed = if t == Tag::ISeg && prev == Tag::O {
                        Tag::BSeg
                    } else {
                        t
                    };
                    prev = fixed;
                    fixed
                })
                .collect(),
        )
    }

    /// Maximal runs that start at a B-Seg and continue through I-Seg, as
    /// half-open index ranges. Call on a repaired sequence.
    pub fn runs(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < self.0.len() {
            if self.0[i] == Tag::BSeg {
                let start = i;
                i += 1;
                while i < self.0.len() && self.0[i] == Tag::ISeg {
                    i += 1;
                }
                out.push(start..i);
            } else {
                i += 1;
            }
        }
        out
    }
}

/// Gold tags from annotated answer spans: the first segment overlapping an
/// answer is B-Seg, later overlapping ones I-Seg, the rest O. A B-Seg wins
/// where two answers claim one segment.
pub fn tags_from_answers(segments: &[Segment], answers: &[TimeSpan]) -> TagSequence {
    let mut tags = vec![Tag::O; segments.len()];
    for a in answers {
        let mut first = true;
        for (i, s) in segments.iter().enumerate() {
            if s.span.intersects(a) {
                if first {
                    tags[i] = Tag::BSeg;
                    first = false;
                } else if tags[i] == Tag::O {
                    tags[i] = Tag::ISeg;
                }
            }
        }
    }
    TagSequence(tags)
}

impl From<Vec<Tag>> for TagSequence {
    fn from(v: Vec<Tag>) -> Self {
        Self(v)
    }
}
