//! Linear-chain CRF over `k` positions and `c` tags.
//!
//! A path `y` scores `Σ_{i≥1} M[y_{i−1}][y_i] + Σ_i l_i[y_i]` with no start
//! or stop terms. All lattice sums run in log space.

use crate::error::{Error, Result};
use crate::tensor::{log_sum_exp, Tensor};

fn check_lattice(l: &Tensor, m: &Tensor) -> Result<(usize, usize)> {
    if l.rank() != 2 {
        return Err(Error::dim("crf emissions", l.shape(), &[0, 0]));
    }
    let (k, c) = (l.rows(), l.cols());
    if m.shape() != [c, c] {
        return Err(Error::dim("crf transitions", m.shape(), &[c, c]));
    }
    if !l.is_finite() || !m.is_finite() {
        return Err(Error::Numeric("crf scores must be finite".into()));
    }
    Ok((k, c))
}

pub fn crf_score(l: &Tensor, m: &Tensor, y: &[usize]) -> Result<f64> {
    let (k, c) = check_lattice(l, m)?;
    if y.len() != k {
        return Err(Error::dim("crf_score tags", &[y.len()], &[k]));
    }
    if let Some(&bad) = y.iter().find(|&&t| t >= c) {
        return Err(Error::Index { index: bad, len: c });
    }
    let mut s = 0.0;
    for i in 0..k {
        if i > 0 {
            s += m.get(y[i - 1], y[i]);
        }
        s += l.get(i, y[i]);
    }
    Ok(s)
}

/// Forward log-messages `α[i][t]`.
fn forward(l: &Tensor, m: &Tensor, k: usize, c: usize) -> Vec<Vec<f64>> {
    let mut alpha = vec![l.row(0).to_vec()];
    let mut buf = vec![0.0; c];
    for i in 1..k {
        let prev = &alpha[i - 1];
        let row: Vec<f64> = (0..c)
            .map(|t| {
                for s in 0..c {
                    buf[s] = prev[s] + m.get(s, t);
                }
                l.get(i, t) + log_sum_exp(&buf)
            })
            .collect();
        alpha.push(row);
    }
    alpha
}

/// Backward log-messages `β[i][s]`.
fn backward(l: &Tensor, m: &Tensor, k: usize, c: usize) -> Vec<Vec<f64>> {
    let mut beta = vec![vec![0.0; c]; k];
    let mut buf = vec![0.0; c];
    for i in (0..k.saturating_sub(1)).rev() {
        for s in 0..c {
            for t in 0..c {
                buf[t] = m.get(s, t) + l.get(i + 1, t) + beta[i + 1][t];
            }
            beta[i][s] = log_sum_exp(&buf);
        }
    }
    beta
}

/// `log Σ_y exp score(y)` by the forward algorithm.
pub fn crf_log_partition(l: &Tensor, m: &Tensor) -> Result<f64> {
    let (k, c) = check_lattice(l, m)?;
    let alpha = forward(l, m, k, c);
    let z = log_sum_exp(&alpha[k - 1]);
    if !z.is_finite() {
        return Err(Error::Numeric("log partition is not finite".into()));
    }
    Ok(z)
}

#[derive(Debug, Clone)]
pub struct CrfGrad {
    pub loss: f64,
    /// Marginals minus observed one-hot, `[k×c]`.
    pub emissions: Tensor,
    /// Expected minus observed transition counts, `[c×c]`.
    pub transitions: Tensor,
}

/// Negative log-likelihood of `y` and its gradients via forward–backward.
pub fn crf_nll_grad(l: &Tensor, m: &Tensor, y: &[usize]) -> Result<CrfGrad> {
    let gold = crf_score(l, m, y)?;
    let (k, c) = (l.rows(), l.cols());
    let alpha = forward(l, m, k, c);
    let beta = backward(l, m, k, c);
    let log_z = log_sum_exp(&alpha[k - 1]);
    if !log_z.is_finite() {
        return Err(Error::Numeric("log partition is not finite".into()));
    }

    let mut ge = Tensor::zeros(&[k, c]);
    for i in 0..k {
        for t in 0..c {
            ge.set(i, t, (alpha[i][t] + beta[i][t] - log_z).exp());
        }
        ge.set(i, y[i], ge.get(i, y[i]) - 1.0);
    }
    let mut gt = Tensor::zeros(&[c, c]);
    for i in 1..k {
        for s in 0..c {
            for t in 0..c {
                let p = (alpha[i - 1][s] + m.get(s, t) + l.get(i, t) + beta[i][t] - log_z).exp();
                gt.set(s, t, gt.get(s, t) + p);
            }
        }
        gt.set(y[i - 1], y[i], gt.get(y[i - 1], y[i]) - 1.0);
    }
    Ok(CrfGrad {
        loss: (log_z - gold).max(0.0),
        emissions: ge,
        transitions: gt,
    })
}

/// Highest-scoring path and its score. Ties go to the lower tag index, both
/// for the final tag and for every back-pointer.
pub fn viterbi(l: &Tensor, m: &Tensor) -> Result<(Vec<usize>, f64)> {
    let (k, c) = check_lattice(l, m)?;
    let mut delta = l.row(0).to_vec();
    let mut back = vec![vec![0usize; c]; k];
    for i in 1..k {
        let mut next = vec![0.0; c];
        for t in 0..c {
            let mut best = (0usize, f64::NEG_INFINITY);
            for (s, &d) in delta.iter().enumerate() {
                let v = d + m.get(s, t);
                if v > best.1 {
                    best = (s, v);
                }
            }
            back[i][t] = best.0;
            next[t] = best.1 + l.get(i, t);
        }
        delta = next;
    }
    let mut last = 0;
    for t in 1..c {
        if delta[t] > delta[last] {
            last = t;
        }
    }
    let mut path = vec![0usize; k];
    path[k - 1] = last;
    for i in (1..k).rev() {
        path[i - 1] = back[i][path[i]];
    }
    let score = crf_score(l, m, &path)?;
    Ok((path, score))
}
