//! Per-model online adaptation: pinball loss, scale-free gradient steps on
//! the miscoverage level, importance-weighted loss estimates and
//! multiplicative weight updates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conformal::ScoreHistory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdaptationError {
    #[error("model selected with inclusion probability {0}")]
    ZeroInclusion(f64),
    #[error("target miscoverage {0} must lie in (0, 1)")]
    InvalidTarget(f64),
    #[error("learning rate {0} must be positive and finite")]
    InvalidEta(f64),
    #[error("weight step size {0} must lie in (0, 1)")]
    InvalidEpsilon(f64),
}

/// Step sizes and target for the online updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptationParams {
    pub alpha_target: f64,
    /// Scale-free gradient step on each model's miscoverage level.
    pub eta: f64,
    /// Multiplicative-weights step size.
    pub epsilon: f64,
    /// Exponent of the `2^b` damping in the weight update.
    pub b_scale: u32,
}

impl AdaptationParams {
    pub fn validate(&self) -> Result<(), AdaptationError> {
        if !(self.alpha_target > 0.0 && self.alpha_target < 1.0) {
            return Err(AdaptationError::InvalidTarget(self.alpha_target));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(AdaptationError::InvalidEta(self.eta));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(AdaptationError::InvalidEpsilon(self.epsilon));
        }
        Ok(())
    }
}

/// `floor(log2(n_selective))`, or 0 for a single selective node.
pub fn damping_exponent(n_selective: usize) -> u32 {
    n_selective.max(1).ilog2()
}

/// Online state for one candidate model.
///
/// The weight is stored as its natural logarithm so long runs with large
/// importance-weighted losses cannot underflow it to zero.
#[derive(Debug, Clone)]
pub struct ModelState {
    log_weight: f64,
    pub alpha: f64,
    grad_sq_sum: f64,
    pub history: ScoreHistory,
}

impl ModelState {
    /// Unit weight and miscoverage level equal to the target.
    pub fn new(alpha_target: f64) -> Self {
        Self {
            log_weight: 0.0,
            alpha: alpha_target,
            grad_sq_sum: 0.0,
            history: ScoreHistory::new(),
        }
    }

    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }

    pub fn log_weight(&self) -> f64 {
        self.log_weight
    }

    pub fn grad_sq_sum(&self) -> f64 {
        self.grad_sq_sum
    }

    /// Multiplies the weight by `exp(-epsilon * est_loss / 2^b)`.
    pub fn apply_loss(&mut self, est_loss: f64, epsilon: f64, b: u32) {
        self.log_weight -= epsilon * est_loss / f64::from(1u32 << b.min(31));
    }
}

/// `target * (alpha_bar - alpha) - min(0, alpha_bar - alpha)`.
pub fn pinball_loss(alpha_bar: f64, alpha: f64, alpha_target: f64) -> f64 {
    let gap = alpha_bar - alpha;
    alpha_target * gap - gap.min(0.0)
}

/// Subgradient of [`pinball_loss`] in `alpha`: `1[alpha_bar < alpha] - target`.
pub fn pinball_gradient(alpha_bar: f64, alpha: f64, alpha_target: f64) -> f64 {
    f64::from(u8::from(alpha_bar < alpha)) - alpha_target
}

/// Gradient from the realized miss indicator: `err - target`.
pub fn miss_gradient(missed: bool, alpha_target: f64) -> f64 {
    f64::from(u8::from(missed)) - alpha_target
}

/// One scale-free gradient step on `state.alpha`, clamped to `[0, 1]`.
///
/// The denominator includes the current gradient, so the step never moves
/// `alpha` by more than `eta`.
pub fn sf_ogd_update(state: &mut ModelState, grad: f64, eta: f64) -> f64 {
    state.grad_sq_sum += grad * grad;
    if state.grad_sq_sum > 0.0 {
        state.alpha -= eta * grad / state.grad_sq_sum.sqrt();
        state.alpha = state.alpha.clamp(0.0, 1.0);
    }
    state.alpha
}

/// Importance-weighted loss: `loss / q` when the model was a candidate,
/// zero otherwise.
pub fn importance_loss(
    loss: f64,
    inclusion_prob: f64,
    selected: bool,
) -> Result<f64, AdaptationError> {
    if !selected {
        return Ok(0.0);
    }
    if inclusion_prob.is_nan() || inclusion_prob <= 0.0 {
        return Err(AdaptationError::ZeroInclusion(inclusion_prob));
    }
    Ok(loss / inclusion_prob)
}

/// `weight * exp(-epsilon * est_loss / 2^b)`.
pub fn mw_update(weight: f64, est_loss: f64, epsilon: f64, b: u32) -> f64 {
    weight * (-epsilon * est_loss / f64::from(1u32 << b.min(31))).exp()
}
