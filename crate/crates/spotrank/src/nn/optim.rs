//! Adam with bias correction and a stepped learning-rate decay schedule.

use serde::{Deserialize, Serialize};

use super::params::{Gradients, ModelParams};
use crate::{Error, Result};

/// Optimizer hyperparameters and the learning-rate schedule.
///
/// The default schedule starts at 1e-4 and multiplies by 0.25 at epochs 25
/// and 40.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub decay_epochs: Vec<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-4,
            decay_factor: 0.25,
            decay_epochs: vec![25, 40],
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || self.learning_rate.is_nan() {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(Error::InvalidConfig("decay_factor must be in (0, 1)".into()));
        }
        if !self.decay_epochs.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig(
                "decay_epochs must be strictly increasing".into(),
            ));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(Error::InvalidConfig("betas must be in (0, 1)".into()));
        }
        if self.epsilon <= 0.0 || self.epsilon.is_nan() {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate at a 1-based epoch: the base rate times
    /// `decay_factor^(number of decay epochs passed)`.
    pub fn effective_learning_rate(&self, epoch: usize) -> f64 {
        let passed = self.decay_epochs.iter().filter(|&&e| epoch >= e).count();
        self.learning_rate * self.decay_factor.powi(passed as i32)
    }
}

/// One Adam update over every parameter tensor.
///
/// Increments the store's step count and applies the standard
/// bias-corrected update at the epoch's effective learning rate.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    cfg: &OptimizerConfig,
    epoch: usize,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::ShapeMismatch {
            name: "gradients".into(),
            expected: (params.len(), 0),
            got: (grads.len(), 0),
        });
    }
    for id in params.ids() {
        let p = params.get(id);
        let g = grads.tensor(id);
        if g.shape() != p.shape() {
            return Err(Error::ShapeMismatch {
                name: params.name(id).to_string(),
                expected: p.shape(),
                got: g.shape(),
            });
        }
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(params.name(id).to_string()));
        }
    }

    let lr = cfg.effective_learning_rate(epoch);
    let (values, first, second, step) = params.optimizer_state_mut();
    *step += 1;
    let t = *step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);

    for (idx, value) in values.iter_mut().enumerate() {
        let g = grads.tensors()[idx].data();
        let m = first[idx].data_mut();
        let v = second[idx].data_mut();
        for (((p, &gi), mi), vi) in value.data_mut().iter_mut().zip(g).zip(m).zip(v) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / bias1;
            let v_hat = *vi / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}
