//! Central finite-difference gradients, the verification oracle for
//! [`super::forward_backward`].

use super::{AuxInputs, GradientSet, ModelParams};
use crate::datastream::TrialTensor;
use crate::error::{Error, Result};
use crate::losses::LossSpec;

/// `(L(theta + eps) - L(theta - eps)) / 2 eps` for every scalar parameter.
/// Dropout masks depend only on the seed in `aux`, so both evaluations see the
/// same mask.
pub fn finite_diff_grad(
    model: &ModelParams,
    batch: &TrialTensor,
    aux: &AuxInputs<'_>,
    spec: &LossSpec,
    epsilon: f64,
) -> Result<GradientSet> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Argument(format!("epsilon must be > 0, got {epsilon}")));
    }
    let mut probe = model.clone();
    let mut grad = GradientSet::zeros_like(model);
    for i in 0..model.len() {
        let theta = model.get_flat(i);
        probe.set_flat(i, theta + epsilon);
        let plus = super::loss_value(&probe, batch, aux, spec)?.total;
        probe.set_flat(i, theta - epsilon);
        let minus = super::loss_value(&probe, batch, aux, spec)?.total;
        probe.set_flat(i, theta);
        grad.set_flat(i, (plus - minus) / (2.0 * epsilon));
    }
    Ok(grad)
}

/// Central differences of an arbitrary scalar function at `x`.
pub fn central_difference<F>(mut f: F, x: &[f64], epsilon: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Argument(format!("epsilon must be > 0, got {epsilon}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + epsilon;
        let plus = f(&probe)?;
        probe[i] = x[i] - epsilon;
        let minus = f(&probe)?;
        probe[i] = x[i];
        grad.push((plus - minus) / (2.0 * epsilon));
    }
    Ok(grad)
}

/// Gradient entries below this magnitude are compared absolutely; above it,
/// relatively.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, RELATIVE_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}

/// Worst entry of a gradient comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradDiff {
    pub max_rel_error: f64,
    /// Flat parameter index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

pub fn max_relative_error(analytic: &GradientSet, numeric: &GradientSet) -> GradDiff {
    let a = analytic.flatten();
    let n = numeric.flatten();
    let mut worst = GradDiff {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: a.first().copied().unwrap_or(0.0),
        numeric: n.first().copied().unwrap_or(0.0),
    };
    for (i, (&x, &y)) in a.iter().zip(&n).enumerate() {
        let e = relative_error(x, y);
        if e > worst.max_rel_error || e.is_nan() {
            worst = GradDiff {
                max_rel_error: e,
                worst_index: i,
                analytic: x,
                numeric: y,
            };
        }
    }
    worst
}
