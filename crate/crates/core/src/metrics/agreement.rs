use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The four human-evaluation questions asked of every sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Instructional,
    SegmentAnswer,
    QuestionQuality,
    Alignment,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [
        Criterion::Instructional,
        Criterion::SegmentAnswer,
        Criterion::QuestionQuality,
        Criterion::Alignment,
    ];

    /// Allowed labels, in table column order.
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            Criterion::Instructional => &["Yes", "No"],
            Criterion::SegmentAnswer | Criterion::Alignment => &["Yes", "No", "Partial"],
            Criterion::QuestionQuality => &["Correct", "Incorrect", "Partial Correct"],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Instructional => "instructional",
            Criterion::SegmentAnswer => "segment_answer",
            Criterion::QuestionQuality => "question_quality",
            Criterion::Alignment => "alignment",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Criterion::Instructional => "Medical-Instructional Videos",
            Criterion::SegmentAnswer => "Segment Containing Visual Answer",
            Criterion::QuestionQuality => "Question Generation Assessment",
            Criterion::Alignment => "Segment Question Alignment",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Schema(format!("unknown criterion `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub sample_id: String,
    pub annotator_id: String,
    pub criterion: Criterion,
    pub label: String,
    /// Milliseconds since the Unix epoch.
    #[serde(default)]
    pub timestamp: u64,
}

impl Judgment {
    pub fn validate(&self) -> Result<()> {
        if !self.criterion.labels().contains(&self.label.as_str()) {
            return Err(Error::Schema(format!(
                "label `{}` is not one of {:?} for {}",
                self.label,
                self.criterion.labels(),
                self.criterion
            )));
        }
        if self.sample_id.is_empty() || self.annotator_id.is_empty() {
            return Err(Error::Schema(
                "judgment needs a sample id and an annotator id".into(),
            ));
        }
        Ok(())
    }

    /// Identity under which the store accepts at most one record.
    pub fn key(&self) -> (&str, &str, Criterion) {
        (&self.sample_id, &self.annotator_id, self.criterion)
    }
}

/// Percentages for one label under the three summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelShare {
    pub label: String,
    /// Among samples where every annotator gave the same label.
    pub unanimous: f64,
    /// Among samples with a strict-majority label.
    pub majority: f64,
    /// Over all individual judgments.
    pub raw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionSummary {
    pub criterion: Criterion,
    pub judged_samples: usize,
    pub unanimous_samples: usize,
    pub majority_samples: usize,
    pub judgments: usize,
    pub labels: Vec<LabelShare>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub sample_count: usize,
    pub annotators: usize,
    pub criteria: Vec<CriterionSummary>,
}

fn percent(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

/// Per-criterion label distributions among annotators.
///
/// Repeated `(sample, annotator, criterion)` records keep the first one, as
/// the judgment store does. `sample_count` echoes the configured review-set
/// size; `None` counts distinct judged samples. Criteria with no agreeing
/// sample report zeros.
pub fn agreement_table(
    judgments: &[Judgment],
    sample_count: Option<usize>,
) -> Result<AgreementReport> {
    let mut seen = HashSet::new();
    // criterion → sample → labels (as indices into the criterion's set)
    let mut grouped: BTreeMap<Criterion, BTreeMap<&str, Vec<usize>>> = BTreeMap::new();
    let mut samples = HashSet::new();
    let mut annotators = HashSet::new();
    for j in judgments {
        j.validate()?;
        if !seen.insert(j.key()) {
            continue;
        }
        let idx = j
            .criterion
            .labels()
            .iter()
            .position(|l| *l == j.label)
            .expect("validated");
        grouped
            .entry(j.criterion)
            .or_default()
            .entry(&j.sample_id)
            .or_default()
            .push(idx);
        samples.insert(j.sample_id.as_str());
        annotators.insert(j.annotator_id.as_str());
    }
    let criteria = Criterion::ALL
        .into_iter()
        .map(|c| {
            let k = c.labels().len();
            let (mut unanimous, mut majority, mut raw) = (vec![0; k], vec![0; k], vec![0; k]);
            let by_sample = grouped.get(&c);
            for labels in by_sample.into_iter().flat_map(|m| m.values()) {
                let mut counts = vec![0usize; k];
                for &l in labels {
                    counts[l] += 1;
                    raw[l] += 1;
                }
                if let Some(l) = counts.iter().position(|&n| n == labels.len()) {
                    unanimous[l] += 1;
                }
                if let Some(l) = counts.iter().position(|&n| 2 * n > labels.len()) {
                    majority[l] += 1;
                }
            }
            let (u, m, r) = (
                unanimous.iter().sum(),
                majority.iter().sum(),
                raw.iter().sum(),
            );
            CriterionSummary {
                criterion: c,
                judged_samples: by_sample.map_or(0, BTreeMap::len),
                unanimous_samples: u,
                majority_samples: m,
                judgments: r,
                labels: c
                    .labels()
                    .iter()
                    .enumerate()
                    .map(|(i, l)| LabelShare {
                        label: l.to_string(),
                        unanimous: percent(unanimous[i], u),
                        majority: percent(majority[i], m),
                        raw: percent(raw[i], r),
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(AgreementReport {
        sample_count: sample_count.unwrap_or(samples.len()),
        annotators: annotators.len(),
        criteria,
    })
}

impl AgreementReport {
    pub fn criterion(&self, c: Criterion) -> &CriterionSummary {
        self.criteria
            .iter()
            .find(|s| s.criterion == c)
            .expect("every criterion is reported")
    }

    /// Four criterion blocks of label headers over unanimous percentages.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "samples: {}  annotators: {}",
            self.sample_count, self.annotators
        );
        for s in &self.criteria {
            let _ = writeln!(out, "\n{}", s.criterion.title());
            let widths: Vec<usize> = s.labels.iter().map(|l| l.label.len().max(6)).collect();
            let head: Vec<String> = s
                .labels
                .iter()
                .zip(&widths)
                .map(|(l, &w)| format!("{:>w$}", l.label))
                .collect();
            let vals: Vec<String> = s
                .labels
                .iter()
                .zip(&widths)
                .map(|(l, &w)| format!("{:>w$.2}", l.unanimous))
                .collect();
            let _ = writeln!(out, "{}", head.join("  "));
            let _ = writeln!(out, "{}", vals.join("  "));
        }
        out
    }
}
