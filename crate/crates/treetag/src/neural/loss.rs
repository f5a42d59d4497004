//! The joint training loss and its exact gradients.
//!
//! Per episode step the loss adds a squared error between the predicted value
//! and the episode reward, and the cross entropy of the raw policy against
//! the stored search policy. The search policy and the reward are training
//! targets, not functions of the parameters: gradients flow only through the
//! value and policy heads and from there through both LSTMs.

use ndarray::{s, Array1};

use crate::error::{Error, Result};
use crate::mdp::Episode;

use super::lstm;
use super::{GradientSet, ModelParams};

fn validate_episode(episode: &Episode, params: &ModelParams) -> Result<()> {
    if episode.steps.is_empty() {
        return Err(Error::Contract("episode has no steps".into()));
    }
    if !(0.0..=1.0).contains(&episode.reward) {
        return Err(Error::Contract(format!(
            "episode reward {} outside [0, 1]",
            episode.reward
        )));
    }
    for (t, step) in episode.steps.iter().enumerate() {
        if step.pi.len() != step.actions.len() {
            return Err(Error::Contract(format!(
                "step {t}: {} search probabilities for {} actions",
                step.pi.len(),
                step.actions.len()
            )));
        }
        if step.pi.iter().any(|&p| p < 0.0) || (step.pi.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!(
                "step {t}: stored search policy is not a distribution"
            )));
        }
        if step.actions.iter().any(|&a| a >= params.dims.tags) {
            return Err(Error::Config(format!(
                "step {t}: action outside the {}-tag inventory",
                params.dims.tags
            )));
        }
    }
    Ok(())
}

/// Forward state for one step, with the activation traces needed to run the
/// backward pass.
struct StepForward {
    g: Array1<f64>,
    value: f64,
    policy: Vec<f64>,
    trace_x: lstm::LstmTrace,
    trace_y: lstm::LstmTrace,
}

fn step_forward(step: &crate::mdp::EpisodeStep, params: &ModelParams) -> Result<StepForward> {
    let state = &step.state;
    let words = &state.sentence().embeddings()[..state.word_len()];
    if state.sentence().embed_dim() != params.dims.embed {
        return Err(Error::Config(format!(
            "sentence embeddings have length {}, model expects {}",
            state.sentence().embed_dim(),
            params.dims.embed
        )));
    }
    let tags: Vec<Array1<f64>> = state
        .prefix()
        .iter()
        .map(|&t| super::one_hot(t, params.dims.tags))
        .collect();
    let (hx, cx, trace_x) = lstm::forward_traced(&params.lstm_x, words)?;
    let (hy, cy, trace_y) = lstm::forward_traced(&params.lstm_y, &tags)?;
    let g = super::concat4(&hx, &cx, &hy, &cy);
    let value = super::value_from_repr(&g, params);
    let policy = super::policy_from_repr(&g, &step.actions, params)?;
    Ok(StepForward { g, value, policy, trace_x, trace_y })
}

/// Cross entropy of `p` against target `pi`, with `0 * log(1/p)` taken as 0.
fn cross_entropy(pi: &[f64], p: &[f64]) -> f64 {
    pi.iter()
        .zip(p)
        .filter(|(&pi_a, _)| pi_a > 0.0)
        .map(|(&pi_a, &p_a)| pi_a * (1.0 / p_a).ln())
        .sum()
}

/// Episode loss: sum over steps of `(V(s_t) - r)^2` plus the cross entropy of
/// the raw policy against the stored search policy. Always nonnegative.
pub fn loss(episode: &Episode, params: &ModelParams) -> Result<f64> {
    validate_episode(episode, params)?;
    let r = episode.reward;
    let mut total = 0.0;
    for step in &episode.steps {
        let fwd = step_forward(step, params)?;
        let dv = fwd.value - r;
        total += dv * dv + cross_entropy(&step.pi, &fwd.policy);
    }
    Ok(total)
}

/// Exact gradient of [`loss`] for every parameter, including full
/// backpropagation through time in both LSTMs and through the shared state
/// representation feeding both heads.
pub fn gradients(episode: &Episode, params: &ModelParams) -> Result<GradientSet> {
    validate_episode(episode, params)?;
    let r = episode.reward;
    let h = params.dims.hidden;
    let mut grads = params.zeros_like();

    for step in &episode.steps {
        let fwd = step_forward(step, params)?;

        // Value head: d/dz of (sigmoid(z) - r)^2.
        let dz = 2.0 * (fwd.value - r) * fwd.value * (1.0 - fwd.value);
        grads.value_w.scaled_add(dz, &fwd.g);
        grads.value_b += dz;
        let mut dg = &params.value_w * dz;

        // Policy head: softmax cross entropy against the constant target pi
        // gives d/dlogit = p - pi on the offered actions only.
        for (j, &a) in step.actions.iter().enumerate() {
            let dl = fwd.policy[j] - step.pi[j];
            grads.policy_u.row_mut(a).scaled_add(dl, &fwd.g);
            dg.scaled_add(dl, &params.policy_u.row(a));
        }

        // Split the representation gradient back into the two encoders.
        let dhx = dg.slice(s![0..h]).to_owned();
        let dcx = dg.slice(s![h..2 * h]).to_owned();
        let dhy = dg.slice(s![2 * h..3 * h]).to_owned();
        let dcy = dg.slice(s![3 * h..4 * h]).to_owned();
        lstm::backward(&params.lstm_x, &fwd.trace_x, dhx, dcx, &mut grads.lstm_x);
        lstm::backward(&params.lstm_y, &fwd.trace_y, dhy, dcy, &mut grads.lstm_y);
    }

    if let Err(Error::Numeric(msg)) = grads.check_finite() {
        return Err(Error::Numeric(format!("gradient: {msg}")));
    }
    Ok(grads)
}
