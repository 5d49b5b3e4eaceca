use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::corpus::{Corpus, IngestedVideo, VideoRecord};
use super::Failure;
use crate::error::{Error, Result};
use crate::text::{fnv1a, tokenize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoClass {
    MedicalInstructional,
    MedicalNonInstructional,
    NonMedical,
}

impl VideoClass {
    pub const ALL: [VideoClass; 3] = [
        VideoClass::MedicalInstructional,
        VideoClass::MedicalNonInstructional,
        VideoClass::NonMedical,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VideoClass::MedicalInstructional => "medical_instructional",
            VideoClass::MedicalNonInstructional => "medical_non_instructional",
            VideoClass::NonMedical => "non_medical",
        }
    }
}

impl fmt::Display for VideoClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VideoClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VideoClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Schema(format!("unknown video class `{s}`")))
    }
}

pub trait TextClassifier {
    fn classify(&self, text: &str) -> VideoClass;
}

impl<F: Fn(&str) -> VideoClass> TextClassifier for F {
    fn classify(&self, text: &str) -> VideoClass {
        self(text)
    }
}

/// Multinomial logistic regression over hashed, L2-normalized word counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowClassifier {
    buckets: usize,
    /// `[class][bucket]`
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BowTrainConfig {
    pub buckets: usize,
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for BowTrainConfig {
    fn default() -> Self {
        Self {
            buckets: 4096,
            epochs: 200,
            lr: 1.0,
            l2: 1e-4,
        }
    }
}

fn features(text: &str, buckets: usize) -> Vec<(usize, f64)> {
    let mut counts = std::collections::BTreeMap::new();
    for t in tokenize(text) {
        *counts
            .entry((fnv1a(t.as_bytes()) % buckets as u64) as usize)
            .or_insert(0.0) += 1.0;
    }
    let norm = counts.values().map(|c: &f64| c * c).sum::<f64>().sqrt();
    counts
        .into_iter()
        .map(|(k, c)| (k, c / norm.max(1e-12)))
        .collect()
}

impl BowClassifier {
    /// Full-batch gradient descent; deterministic for a given input order.
    pub fn train(docs: &[(String, VideoClass)], cfg: &BowTrainConfig) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::Input("no training documents".into()));
        }
        if cfg.buckets == 0 {
            return Err(Error::Config("bucket count must be positive".into()));
        }
        let k = VideoClass::ALL.len();
        let mut m = Self {
            buckets: cfg.buckets,
            weights: vec![vec![0.0; cfg.buckets]; k],
            bias: vec![0.0; k],
        };
        let feats: Vec<_> = docs
            .iter()
            .map(|(t, c)| (features(t, cfg.buckets), *c as usize))
            .collect();
        let n = docs.len() as f64;
        for _ in 0..cfg.epochs {
            let mut gw = vec![vec![0.0; cfg.buckets]; k];
            let mut gb = vec![0.0; k];
            for (x, y) in &feats {
                let p = m.probabilities(x);
                for c in 0..k {
                    let d = (p[c] - if c == *y { 1.0 } else { 0.0 }) / n;
                    gb[c] += d;
                    for &(j, v) in x {
                        gw[c][j] += d * v;
                    }
                }
            }
            for c in 0..k {
                m.bias[c] -= cfg.lr * gb[c];
                for (w, g) in m.weights[c].iter_mut().zip(&gw[c]) {
                    *w -= cfg.lr * (g + cfg.l2 * *w);
                }
            }
        }
        Ok(m)
    }

    fn probabilities(&self, x: &[(usize, f64)]) -> Vec<f64> {
        let logits: Vec<f64> = (0..self.bias.len())
            .map(|c| self.bias[c] + x.iter().map(|&(j, v)| self.weights[c][j] * v).sum::<f64>())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / z).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_vec(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let m: Self =
            serde_json::from_slice(&std::fs::read(path).map_err(|e| Error::io(path, e))?)?;
        if m.weights.len() != VideoClass::ALL.len()
            || m.weights.iter().any(|w| w.len() != m.buckets)
        {
            return Err(Error::Format(format!(
                "{}: classifier shape mismatch",
                path.display()
            )));
        }
        Ok(m)
    }
}

impl TextClassifier for BowClassifier {
    /// Highest-probability class; ties go to the earlier class.
    fn classify(&self, text: &str) -> VideoClass {
        let p = self.probabilities(&features(text, self.buckets));
        let best = (1..p.len()).fold(0, |b, c| if p[c] > p[b] { c } else { b });
        VideoClass::ALL[best]
    }
}

/// Ingests every record and keeps the ones classified as medical
/// instructional. Records whose subtitles cannot be read are reported and
/// skipped.
pub fn select_instructional(
    corpus: &Corpus,
    records: &[VideoRecord],
    clf: &dyn TextClassifier,
) -> (Vec<IngestedVideo>, Vec<Failure>) {
    let mut kept = Vec::new();
    let mut failures = Vec::new();
    for r in records {
        match corpus.ingest(r) {
            Ok(v) if clf.classify(&v.text()) == VideoClass::MedicalInstructional => kept.push(v),
            Ok(_) => {}
            Err(e) => {
                log::warn!("skipping video `{}`: {e}", r.video_id);
                failures.push(Failure::new(&r.video_id, "ingest", &e));
            }
        }
    }
    (kept, failures)
}
