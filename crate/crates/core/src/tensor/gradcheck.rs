use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ParamSet;
use crate::error::{Error, Result};

/// Denominator floor for [`relative_error`]. Central differences carry an
/// absolute rounding error around `1e-16·|L|/ε`, so gradients smaller than
/// this are compared on an absolute scale instead.
pub const GRADCHECK_FLOOR: f64 = 1e-3;

/// Coordinates checked per tensor above this size are sampled.
const SAMPLE_ABOVE: usize = 10_000;
const SAMPLES_PER_TENSOR: usize = 256;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR)
}

/// Compares the analytic gradients stored in `params` against central
/// differences of `loss_fn` and returns the worst relative error.
///
/// Tensors with more than 10⁴ elements are checked on a deterministic sample
/// of coordinates: every coordinate with a non-zero analytic gradient up to
/// the sample budget, plus a seeded uniform draw.
pub fn fd_gradcheck<F>(mut loss_fn: F, params: &ParamSet, eps: f64) -> Result<f64>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    let base = loss_fn(params)?;
    if !base.is_finite() {
        return Err(Error::Numeric(
            "loss is not finite at the base point".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let grad = params.grad(name)?.clone();
        let n = grad.len();
        let coords: Vec<usize> = if n <= SAMPLE_ABOVE {
            (0..n).collect()
        } else {
            let mut c: Vec<usize> = (0..n)
                .filter(|&i| grad.data()[i] != 0.0)
                .take(SAMPLES_PER_TENSOR)
                .collect();
            c.extend((0..SAMPLES_PER_TENSOR).map(|_| rng.gen_range(0..n)));
            c
        };
        for i in coords {
            let orig = probe.value(name)?.data()[i];
            probe.value_mut(name)?.data_mut()[i] = orig + eps;
            let plus = loss_fn(&probe)?;
            probe.value_mut(name)?.data_mut()[i] = orig - eps;
            let minus = loss_fn(&probe)?;
            probe.value_mut(name)?.data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss is not finite when perturbing `{name}`[{i}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(grad.data()[i], numeric));
        }
    }
    Ok(worst)
}
