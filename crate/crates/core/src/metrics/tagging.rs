use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tagger::{Tag, TagSequence};

/// How the window size `w` maps to an allowed positional offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowRadius {
    /// `|i − j| ≤ w − 1`; `w = 1` is exact match.
    #[default]
    WMinusOne,
    /// `|i − j| ≤ w`.
    W,
}

impl WindowRadius {
    pub fn radius(self, w: usize) -> usize {
        match self {
            WindowRadius::WMinusOne => w - 1,
            WindowRadius::W => w,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// From matched, predicted and gold counts. An empty side scores 1 only
    /// when the other side is empty too.
    pub fn from_counts(matched: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |den: usize, other: usize| match den {
            0 if other == 0 => 1.0,
            0 => 0.0,
            d => matched as f64 / d as f64,
        };
        let precision = ratio(predicted, gold);
        let recall = ratio(gold, predicted);
        Self::from_pr(precision, recall)
    }

    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

fn b_positions(t: &TagSequence) -> Vec<usize> {
    t.tags()
        .iter()
        .enumerate()
        .filter(|(_, &x)| x == Tag::BSeg)
        .map(|(i, _)| i)
        .collect()
}

/// Boundary F1 over B-Seg positions with a positional tolerance.
///
/// Predictions are matched left to right, each to the leftmost unconsumed
/// gold boundary within the radius. Since every tolerance window has the
/// same width this greedy order yields a maximum matching.
pub fn windowed_f1(
    pred: &TagSequence,
    gold: &TagSequence,
    w: usize,
    rule: WindowRadius,
) -> Result<Prf> {
    let (m, np, ng) = boundary_counts(pred, gold, w, rule)?;
    Ok(Prf::from_counts(m, np, ng))
}

/// Micro-averaged windowed F1 over many sequences.
pub fn windowed_f1_corpus(
    pairs: &[(TagSequence, TagSequence)],
    w: usize,
    rule: WindowRadius,
) -> Result<Prf> {
    let (mut m, mut np, mut ng) = (0, 0, 0);
    for (pred, gold) in pairs {
        let c = boundary_counts(pred, gold, w, rule)?;
        m += c.0;
        np += c.1;
        ng += c.2;
    }
    Ok(Prf::from_counts(m, np, ng))
}

/// `(matched, predicted, gold)` boundary counts.
fn boundary_counts(
    pred: &TagSequence,
    gold: &TagSequence,
    w: usize,
    rule: WindowRadius,
) -> Result<(usize, usize, usize)> {
    if pred.len() != gold.len() {
        return Err(Error::Input(format!(
            "predicted and gold tag sequences differ in length: {} vs {}",
            pred.len(),
            gold.len()
        )));
    }
    if w == 0 {
        return Err(Error::Input("window must be at least 1".into()));
    }
    let r = rule.radius(w);
    let (p, g) = (b_positions(pred), b_positions(gold));
    let mut next = 0;
    let mut matched = 0;
    for &i in &p {
        while next < g.len() && g[next] + r < i {
            next += 1;
        }
        if next < g.len() && g[next] <= i + r {
            matched += 1;
            next += 1;
        }
    }
    Ok((matched, p.len(), g.len()))
}

/// Binary F1 for `positive`.
pub fn cls_f1<T: PartialEq>(preds: &[T], golds: &[T], positive: &T) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            preds.len(),
            golds.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (p, g) in preds.iter().zip(golds) {
        match (p == positive, g == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp + fp + fn_ == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
}
