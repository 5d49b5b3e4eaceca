use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::tagging::Prf;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-free sentence BLEU with uniform weights up to order `n`.
///
/// Orders ≥ 2 with no clipped match use `1 / (total + 1)` in place of zero.
/// The brevity penalty uses the reference length closest to the candidate,
/// the shorter one on ties.
pub fn bleu(candidate: &[String], references: &[Vec<String>], n: usize) -> Result<f64> {
    if !(1..=4).contains(&n) {
        return Err(Error::Input(format!("BLEU order must be 1..=4, got {n}")));
    }
    if references.is_empty() {
        return Err(Error::Undefined("BLEU without references".into()));
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let cand = ngram_counts(candidate, k);
        let refs: Vec<_> = references.iter().map(|r| ngram_counts(r, k)).collect();
        let total: usize = cand.values().sum();
        let clipped: usize = cand
            .iter()
            .map(|(g, &c)| {
                c.min(
                    refs.iter()
                        .map(|r| r.get(g).copied().unwrap_or(0))
                        .max()
                        .unwrap_or(0),
                )
            })
            .sum();
        let p = if clipped > 0 {
            clipped as f64 / total as f64
        } else if k == 1 {
            return Ok(0.0);
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let c = candidate.len();
    let r = references
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .expect("non-empty references");
    let bp = if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    Ok(bp * (log_sum / n as f64).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RougeVariant {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "L")]
    L,
}

impl std::str::FromStr for RougeVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(Self::One),
            "2" => Ok(Self::Two),
            "L" | "l" => Ok(Self::L),
            other => Err(Error::Input(format!("unknown ROUGE variant `{other}`"))),
        }
    }
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-N precision, recall and F1, or the LCS-based ROUGE-L.
pub fn rouge(candidate: &[String], reference: &[String], variant: RougeVariant) -> Result<Prf> {
    if reference.is_empty() {
        return Err(Error::Undefined("ROUGE against an empty reference".into()));
    }
    let (matched, c, r) = match variant {
        RougeVariant::L => (
            lcs_len(candidate, reference),
            candidate.len(),
            reference.len(),
        ),
        RougeVariant::One | RougeVariant::Two => {
            let n = if variant == RougeVariant::One { 1 } else { 2 };
            let cand = ngram_counts(candidate, n);
            let refs = ngram_counts(reference, n);
            let overlap = cand
                .iter()
                .map(|(g, &k)| k.min(refs.get(g).copied().unwrap_or(0)))
                .sum();
            (overlap, cand.values().sum(), refs.values().sum())
        }
    };
    Ok(Prf::from_counts(matched, c, r))
}
