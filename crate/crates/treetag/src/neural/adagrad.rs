//! AdaGrad: per-coordinate step sizes scaled by accumulated squared
//! gradients.

use crate::error::{Error, Result};

use super::{GradientSet, ModelDims, ModelParams};

/// Per-parameter squared-gradient accumulators plus the stability epsilon.
/// Accumulators are nonnegative and never decrease.
#[derive(Debug, Clone)]
pub struct AdaGradState {
    accum: ModelParams,
    pub epsilon: f64,
}

pub const DEFAULT_EPSILON: f64 = 1e-8;

impl AdaGradState {
    pub fn new(dims: ModelDims) -> Self {
        Self { accum: ModelParams::zeros(dims), epsilon: DEFAULT_EPSILON }
    }

    pub fn accumulators(&self) -> &ModelParams {
        &self.accum
    }
}

/// One update: `accum += grad^2`, then
/// `param -= eta * grad / (sqrt(accum) + epsilon)`, elementwise.
pub fn adagrad_step(
    params: &mut ModelParams,
    grads: &GradientSet,
    state: &mut AdaGradState,
    eta: f64,
) -> Result<()> {
    if !(eta > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {eta}")));
    }
    state.accum.zip_mut_with(grads, |acc, g| *acc += g * g);
    let mut update = grads.clone();
    let eps = state.epsilon;
    update.zip_mut_with(&state.accum, |u, acc| *u /= acc.sqrt() + eps);
    params.zip_mut_with(&update, |p, u| *p -= eta * u);
    Ok(())
}
