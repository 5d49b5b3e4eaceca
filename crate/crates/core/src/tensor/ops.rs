use super::Tensor;
use crate::error::{Error, Result};

/// `out = x·W + b` for `x: [k×d]`, `W: [d×c]`, `b: [c]`.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 || w.rank() != 2 || x.cols() != w.rows() {
        return Err(Error::dim("affine", x.shape(), w.shape()));
    }
    if b.rank() != 1 || b.len() != w.cols() {
        return Err(Error::dim("affine bias", w.shape(), b.shape()));
    }
    let mut out = x.matmul(w)?;
    let c = out.cols();
    for row in out.data_mut().chunks_mut(c) {
        for (o, bv) in row.iter_mut().zip(b.data()) {
            *o += bv;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct AffineGrads {
    pub x: Tensor,
    pub w: Tensor,
    pub b: Tensor,
}

/// Gradients of [`affine`] given the upstream gradient `grad_out: [k×c]`.
pub fn affine_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> Result<AffineGrads> {
    if grad_out.rows() != x.rows() || grad_out.cols() != w.cols() {
        return Err(Error::dim(
            "affine_backward",
            grad_out.shape(),
            &[x.rows(), w.cols()],
        ));
    }
    Ok(AffineGrads {
        x: grad_out.matmul_t(w)?,
        w: x.t_matmul(grad_out)?,
        b: grad_out.sum_rows(),
    })
}

/// Numerically stable `log Σ exp(v)`. Returns `-∞` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = out.iter().sum();
    for p in &mut out {
        *p /= z;
    }
    out
}

/// Negative log-likelihood of `target` under `softmax(logits)` and its
/// gradient `softmax(logits) − onehot(target)`.
pub fn softmax_xent(logits: &[f64], target: usize) -> Result<(f64, Tensor)> {
    let n = logits.len();
    if target >= n {
        return Err(Error::Index {
            index: target,
            len: n,
        });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "softmax_xent received a non-finite logit".into(),
        ));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = shifted.iter().sum();
    // Sum over everything except the target keeps precision when the target
    // dominates: loss = (m − l_t) + ln(e^{l_t−m} + rest).
    let rest: f64 = shifted
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != target)
        .map(|(_, v)| v)
        .sum();
    let loss = if logits[target] == m {
        (rest).ln_1p()
    } else {
        (m - logits[target]) + z.ln()
    };
    let mut grad: Vec<f64> = shifted.iter().map(|v| v / z).collect();
    grad[target] -= 1.0;
    Ok((loss.max(0.0), Tensor::vector(grad)))
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Upstream gradient masked by the sign of the pre-activation.
pub fn relu_backward(pre: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = pre
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&p, &g)| if p > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(pre.shape().to_vec(), data).expect("same shape")
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_identity() {
        let i2 = Tensor::identity(2);
        let out = affine(&i2, &i2, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(out, i2);
    }

    #[test]
    fn affine_hand_product() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let w = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let out = affine(&x, &w, &Tensor::vector(vec![0.5])).unwrap();
        assert_eq!(out.data(), &[3.5]);
    }

    #[test]
    fn affine_zero_weights() {
        let x = Tensor::from_rows(&[vec![3.0, -2.0, 7.0], vec![1.0, 1.0, 1.0]]).unwrap();
        let out = affine(&x, &Tensor::zeros(&[3, 4]), &Tensor::zeros(&[4])).unwrap();
        assert_eq!(out, Tensor::zeros(&[2, 4]));
    }

    #[test]
    fn affine_shape_error_names_both_shapes() {
        let err = affine(
            &Tensor::zeros(&[2, 3]),
            &Tensor::zeros(&[2, 2]),
            &Tensor::zeros(&[2]),
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn xent_uniform() {
        let (loss, grad) = softmax_xent(&[0.3; 4], 2).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        assert!(grad.sum().abs() < 1e-15);
    }

    #[test]
    fn xent_peaked() {
        let (loss, grad) = softmax_xent(&[10.0, -10.0], 0).unwrap();
        // ln(1 + e^-20) and e^-20 / (1 + e^-20)
        let expected = (-20f64).exp().ln_1p();
        assert!((loss - expected).abs() / expected < 1e-9, "{loss}");
        assert!((loss - 2.061_153_6e-9).abs() < 1e-15);
        assert!((grad.data()[1] - 2.061_153_6e-9).abs() < 1e-15);
    }

    #[test]
    fn xent_target_out_of_range() {
        assert!(matches!(
            softmax_xent(&[0.0, 1.0], 2),
            Err(Error::Index { index: 2, len: 2 })
        ));
    }

    #[test]
    fn softmax_normalizes() {
        let p = softmax(&[1.0, -3.0, 250.0, 0.5]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
