//! The neural toolkit: two LSTMs over word and tag prefixes, a sigmoid value
//! head, a bilinear softmax policy head, the joint loss with exact gradients,
//! and AdaGrad.
//!
//! Everything here is a pure function of immutable parameters; concurrent
//! read-only use is safe. All parameters are 64-bit floats so gradient checks
//! and checkpoint round-trips are reproducible.

pub mod adagrad;
pub mod checkpoint;
pub mod loss;
pub mod lstm;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mcts::Evaluator;
use crate::mdp::{State, TagId, TagInventory};

pub use lstm::{GateParams, LstmParams, LstmTrace};

/// Model dimensions: embedding length, hidden units per LSTM, tag count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub embed: usize,
    pub hidden: usize,
    pub tags: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.embed == 0 || self.hidden == 0 || self.tags == 0 {
            return Err(Error::Config(format!(
                "dimensions must be positive: embed={}, hidden={}, tags={}",
                self.embed, self.hidden, self.tags
            )));
        }
        Ok(())
    }

    /// Length of the state representation: output and cell state of both
    /// LSTMs concatenated.
    pub fn repr_len(&self) -> usize {
        4 * self.hidden
    }
}

/// All trainable weights: the word LSTM, the tag LSTM, the value head
/// `(value_w, value_b)` and the policy bilinear matrix `policy_u`
/// (tags x 4h).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub lstm_x: LstmParams,
    pub lstm_y: LstmParams,
    pub value_w: Array1<f64>,
    pub value_b: f64,
    pub policy_u: Array2<f64>,
}

/// Gradient buffers, shape-congruent with [`ModelParams`].
pub type GradientSet = ModelParams;

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        Self {
            dims,
            lstm_x: LstmParams::zeros(dims.hidden, dims.embed),
            lstm_y: LstmParams::zeros(dims.hidden, dims.tags),
            value_w: Array1::zeros(dims.repr_len()),
            value_b: 0.0,
            policy_u: Array2::zeros((dims.tags, dims.repr_len())),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims)
    }

    /// Visits every scalar parameter in a fixed, documented order:
    /// `lstm_x` then `lstm_y` (gates forget/input/output/cell, each w, u, b),
    /// then `value_w`, `value_b`, `policy_u`.
    pub fn for_each_scalar(&self, mut f: impl FnMut(f64)) {
        self.lstm_x.for_each_scalar(&mut f);
        self.lstm_y.for_each_scalar(&mut f);
        self.value_w.iter().for_each(|&v| f(v));
        f(self.value_b);
        self.policy_u.iter().for_each(|&v| f(v));
    }

    /// Mutable counterpart of [`Self::for_each_scalar`], same order.
    pub fn for_each_scalar_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        self.lstm_x.for_each_scalar_mut(&mut f);
        self.lstm_y.for_each_scalar_mut(&mut f);
        self.value_w.iter_mut().for_each(&mut f);
        f(&mut self.value_b);
        self.policy_u.iter_mut().for_each(&mut f);
    }

    /// Elementwise zip over two shape-congruent parameter sets.
    pub fn zip_mut_with(&mut self, other: &ModelParams, mut f: impl FnMut(&mut f64, f64)) {
        debug_assert_eq!(self.dims, other.dims);
        self.lstm_x.zip_mut_with(&other.lstm_x, &mut f);
        self.lstm_y.zip_mut_with(&other.lstm_y, &mut f);
        self.value_w.zip_mut_with(&other.value_w, |a, &b| f(a, b));
        f(&mut self.value_b, other.value_b);
        self.policy_u.zip_mut_with(&other.policy_u, |a, &b| f(a, b));
    }

    pub fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.for_each_scalar(|_| n += 1);
        n
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        self.for_each_scalar(|v| out.push(v));
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::Config(format!(
                "flat parameter vector has length {}, model has {} scalars",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut it = flat.iter();
        self.for_each_scalar_mut(|v| *v = *it.next().expect("length checked"));
        Ok(())
    }

    pub fn l2_norm(&self) -> f64 {
        let mut sq = 0.0;
        self.for_each_scalar(|v| sq += v * v);
        sq.sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.for_each_scalar_mut(|v| *v *= factor);
    }

    /// Named views of every tensor, in checkpoint order.
    pub fn tensor_entries(&self) -> Vec<(String, TensorView<'_>)> {
        let mut out = Vec::with_capacity(26);
        for (lstm_name, lstm) in [("lstm_x", &self.lstm_x), ("lstm_y", &self.lstm_y)] {
            for (gate_name, gate) in lstm.gates() {
                out.push((format!("{lstm_name}.{gate_name}.w"), TensorView::Mat(&gate.w)));
                out.push((format!("{lstm_name}.{gate_name}.u"), TensorView::Mat(&gate.u)));
                out.push((format!("{lstm_name}.{gate_name}.b"), TensorView::Vec(&gate.b)));
            }
        }
        out.push(("value_w".into(), TensorView::Vec(&self.value_w)));
        out.push(("value_b".into(), TensorView::Scalar(self.value_b)));
        out.push(("policy_u".into(), TensorView::Mat(&self.policy_u)));
        out
    }

    /// Errors on the first non-finite scalar, naming the tensor it lives in.
    pub fn check_finite(&self) -> Result<()> {
        for (name, view) in self.tensor_entries() {
            let bad = match view {
                TensorView::Mat(m) => m.iter().any(|v| !v.is_finite()),
                TensorView::Vec(v) => v.iter().any(|v| !v.is_finite()),
                TensorView::Scalar(s) => !s.is_finite(),
            };
            if bad {
                return Err(Error::Numeric(format!("non-finite value in `{name}`")));
            }
        }
        Ok(())
    }
}

/// Borrowed view of one named parameter tensor.
#[derive(Debug, Clone, Copy)]
pub enum TensorView<'a> {
    Mat(&'a Array2<f64>),
    Vec(&'a Array1<f64>),
    Scalar(f64),
}

/// Mutable counterpart of [`TensorView`].
#[derive(Debug)]
pub enum TensorViewMut<'a> {
    Mat(&'a mut Array2<f64>),
    Vec(&'a mut Array1<f64>),
    Scalar(&'a mut f64),
}

impl ModelParams {
    /// Named mutable views of every tensor, same order as
    /// [`Self::tensor_entries`].
    pub fn tensor_entries_mut(&mut self) -> Vec<(String, TensorViewMut<'_>)> {
        let mut out = Vec::with_capacity(26);
        for (lstm_name, lstm) in [("lstm_x", &mut self.lstm_x), ("lstm_y", &mut self.lstm_y)] {
            for (gate_name, gate) in lstm.gates_mut() {
                out.push((format!("{lstm_name}.{gate_name}.w"), TensorViewMut::Mat(&mut gate.w)));
                out.push((format!("{lstm_name}.{gate_name}.u"), TensorViewMut::Mat(&mut gate.u)));
                out.push((format!("{lstm_name}.{gate_name}.b"), TensorViewMut::Vec(&mut gate.b)));
            }
        }
        out.push(("value_w".into(), TensorViewMut::Vec(&mut self.value_w)));
        out.push(("value_b".into(), TensorViewMut::Scalar(&mut self.value_b)));
        out.push(("policy_u".into(), TensorViewMut::Mat(&mut self.policy_u)));
        out
    }
}

/// Initialization range for [`init_params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScale {
    /// Uniform on [-1, 1].
    #[default]
    Unit,
    /// Uniform on [-1/sqrt(h), 1/sqrt(h)]; tamer for large hidden sizes.
    InvSqrtHidden,
}

/// Rescales gradients so the global L2 norm does not exceed `max_norm`.
pub fn clip_by_global_norm(grads: &mut GradientSet, max_norm: f64) {
    let norm = grads.l2_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
}

/// Draws every parameter i.i.d. uniform from a seeded generator,
/// deterministically given the seed.
pub fn init_params(seed: u64, dims: ModelDims, scale: InitScale) -> Result<ModelParams> {
    dims.validate()?;
    let bound = match scale {
        InitScale::Unit => 1.0,
        InitScale::InvSqrtHidden => 1.0 / (dims.hidden as f64).sqrt(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros(dims);
    params.for_each_scalar_mut(|v| *v = rng.gen_range(-bound..=bound));
    Ok(params)
}

fn check_state(state: &State, dims: &ModelDims) -> Result<()> {
    if state.sentence().embed_dim() != dims.embed {
        return Err(Error::Config(format!(
            "sentence embeddings have length {}, model expects {}",
            state.sentence().embed_dim(),
            dims.embed
        )));
    }
    if state.prefix().iter().any(|&t| t >= dims.tags) {
        return Err(Error::Config(format!(
            "tag prefix contains an index outside the {}-tag inventory",
            dims.tags
        )));
    }
    Ok(())
}

pub(crate) fn one_hot(index: usize, len: usize) -> Array1<f64> {
    let mut v = Array1::zeros(len);
    v[index] = 1.0;
    v
}

fn tag_inputs(state: &State, tags: usize) -> Vec<Array1<f64>> {
    state.prefix().iter().map(|&t| one_hot(t, tags)).collect()
}

/// Encodes the word prefix: final `[h; c]` of the word LSTM (length 2h).
pub fn encode_words(inputs: &[Array1<f64>], params: &LstmParams) -> Result<Array1<f64>> {
    if inputs.is_empty() {
        return Err(Error::Contract("word prefix is never empty".into()));
    }
    let (h, c) = lstm::forward(params, inputs)?;
    Ok(concat2(&h, &c))
}

/// Encodes the tag prefix; the empty prefix encodes to the zero vector.
pub fn encode_tags(inputs: &[Array1<f64>], params: &LstmParams) -> Result<Array1<f64>> {
    let (h, c) = lstm::forward(params, inputs)?;
    Ok(concat2(&h, &c))
}

fn concat2(a: &Array1<f64>, b: &Array1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(a.len() + b.len());
    out.slice_mut(ndarray::s![..a.len()]).assign(a);
    out.slice_mut(ndarray::s![a.len()..]).assign(b);
    out
}

fn concat4(a: &Array1<f64>, b: &Array1<f64>, c: &Array1<f64>, d: &Array1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(a.len() + b.len() + c.len() + d.len());
    let mut at = 0;
    for part in [a, b, c, d] {
        out.slice_mut(ndarray::s![at..at + part.len()]).assign(part);
        at += part.len();
    }
    out
}

/// The state representation `g(s)`: word encoding first, tag encoding second
/// (length 4h).
pub fn state_repr(state: &State, params: &ModelParams) -> Result<Array1<f64>> {
    check_state(state, &params.dims)?;
    let words = &state.sentence().embeddings()[..state.word_len()];
    let word_part = encode_words(words, &params.lstm_x)?;
    let tag_part = encode_tags(&tag_inputs(state, params.dims.tags), &params.lstm_y)?;
    Ok(concat2(&word_part, &tag_part))
}

pub(crate) fn value_from_repr(g: &Array1<f64>, params: &ModelParams) -> f64 {
    lstm::sigmoid(params.value_w.dot(g) + params.value_b)
}

pub(crate) fn policy_from_repr(
    g: &Array1<f64>,
    actions: &[TagId],
    params: &ModelParams,
) -> Result<Vec<f64>> {
    if actions.is_empty() {
        return Err(Error::Contract("policy over an empty action set".into()));
    }
    if actions.iter().any(|&a| a >= params.dims.tags) {
        return Err(Error::Config("action index outside the tag inventory".into()));
    }
    let logits: Vec<f64> = actions.iter().map(|&a| params.policy_u.row(a).dot(g)).collect();
    Ok(softmax(&logits))
}

/// Numerically safe softmax (max-subtracted; shift-invariant).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// The scalar state value: a sigmoid of an affine map of `g(s)`, predicting
/// the eventual whole-sentence accuracy. Strictly inside (0, 1).
pub fn value(state: &State, params: &ModelParams) -> Result<f64> {
    Ok(value_from_repr(&state_repr(state, params)?, params))
}

/// The raw policy: softmax over bilinear scores of `g(s)` against each
/// offered tag's one-hot, i.e. over the matching rows of `policy_u`.
pub fn policy(state: &State, actions: &[TagId], params: &ModelParams) -> Result<Vec<f64>> {
    policy_from_repr(&state_repr(state, params)?, actions, params)
}

/// Read-only adapter exposing the model's value and policy to the search.
#[derive(Clone, Copy)]
pub struct ModelEvaluator<'a> {
    pub params: &'a ModelParams,
}

impl<'a> ModelEvaluator<'a> {
    pub fn new(params: &'a ModelParams) -> Self {
        Self { params }
    }
}

impl Evaluator for ModelEvaluator<'_> {
    fn value(&self, state: &State) -> Result<f64> {
        value(state, self.params)
    }

    fn priors(&self, state: &State, actions: &[TagId]) -> Result<Vec<f64>> {
        policy(state, actions, self.params)
    }

    fn value_and_priors(&self, state: &State, actions: &[TagId]) -> Result<(f64, Vec<f64>)> {
        // Shares one forward pass between both heads.
        let g = state_repr(state, self.params)?;
        let v = value_from_repr(&g, self.params);
        let p = policy_from_repr(&g, actions, self.params)?;
        Ok((v, p))
    }
}

/// Builds a [`ModelEvaluator`] after verifying inventory/parameter agreement.
pub fn model_evaluator<'a>(
    params: &'a ModelParams,
    inventory: &TagInventory,
) -> Result<ModelEvaluator<'a>> {
    if inventory.len() != params.dims.tags {
        return Err(Error::Config(format!(
            "inventory has {} tags, model expects {}",
            inventory.len(),
            params.dims.tags
        )));
    }
    Ok(ModelEvaluator::new(params))
}
