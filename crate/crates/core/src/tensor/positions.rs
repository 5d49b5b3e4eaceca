use super::Tensor;
use crate::error::{Error, Result};

/// Sine/cosine position table: even columns `sin(pos / 10000^(2i/d))`,
/// odd columns the matching cosine.
pub fn sinusoidal_positions(k: usize, d: usize) -> Result<Tensor> {
    if k == 0 {
        return Err(Error::Config("position table needs k ≥ 1".into()));
    }
    if d == 0 || d % 2 != 0 {
        return Err(Error::Config(format!(
            "position dimension must be even, got {d}"
        )));
    }
    let mut data = Vec::with_capacity(k * d);
    for pos in 0..k {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10_000f64.powf(2.0 * i as f64 / d as f64);
            data.push(angle.sin());
            data.push(angle.cos());
        }
    }
    Tensor::new(vec![k, d], data)
}
