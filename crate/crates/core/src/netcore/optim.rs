use serde::{Deserialize, Serialize};

use super::{GradientSet, ModelParams, PARAM_NAMES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    SgdMomentum,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const SGD_MOMENTUM: f64 = 0.9;

/// Optimizer accumulators. For SGD `first` holds the velocity and `second`
/// stays empty.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, shapes: &[usize]) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be > 0"));
        }
        let zeros = || shapes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        Ok(Self {
            kind,
            learning_rate,
            first: zeros(),
            second: match kind {
                OptimizerKind::Adam => zeros(),
                OptimizerKind::SgdMomentum => Vec::new(),
            },
            step: 0,
        })
    }

    pub fn for_model(kind: OptimizerKind, learning_rate: f64, model: &ModelParams) -> Result<Self> {
        let shapes: Vec<usize> = model.arrays().iter().map(Vec::len).collect();
        Self::new(kind, learning_rate, &shapes)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update of arbitrary parameter arrays.
    pub fn step_arrays(&mut self, params: &mut [Vec<f64>], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.first.len()
            || grads.len() != params.len()
            || params.iter().zip(grads).zip(&self.first).any(|((p, g), m)| p.len() != g.len() || p.len() != m.len())
        {
            return Err(Error::Shape("gradient/optimizer state not congruent with parameters".into()));
        }
        for (a, g) in grads.iter().enumerate() {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                let name = PARAM_NAMES.get(a).copied().unwrap_or("param");
                return Err(Error::Numeric(format!(
                    "update rejected: gradient {name}[{i}] = {} at step {}",
                    g[i], self.step
                )));
            }
        }
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::SgdMomentum => {
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    for j in 0..p.len() {
                        v[j] = SGD_MOMENTUM * v[j] + g[j];
                        p[j] -= lr * v[j];
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let bc1 = 1.0 - ADAM_BETA1.powi(t);
                let bc2 = 1.0 - ADAM_BETA2.powi(t);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    for j in 0..p.len() {
                        m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
                        v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
                        let m_hat = m[j] / bc1;
                        let v_hat = v[j] / bc2;
                        p[j] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}

/// In-place parameter update; rejects non-finite gradients without touching
/// the model.
pub fn apply_update(opt: &mut OptimizerState, model: &mut ModelParams, grads: &GradientSet) -> Result<()> {
    if !grads.is_congruent(model) {
        return Err(Error::Shape("gradient set not congruent with model".into()));
    }
    opt.step_arrays(model.arrays_mut(), grads.arrays())
}
