//! A single-layer LSTM with hand-derived gradients.
//!
//! Forward passes optionally record a [`LstmTrace`] of per-step activations;
//! [`backward`] consumes the trace to backpropagate through time exactly.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Weights for one gate: input map `w` (h x d), recurrent map `u` (h x h),
/// bias `b` (h).
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub b: Array1<f64>,
}

impl GateParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        Self {
            w: Array2::zeros((hidden, input)),
            u: Array2::zeros((hidden, hidden)),
            b: Array1::zeros(hidden),
        }
    }

    fn pre_activation(&self, x: &Array1<f64>, h_prev: &Array1<f64>) -> Array1<f64> {
        self.w.dot(x) + self.u.dot(h_prev) + &self.b
    }

    pub(crate) fn for_each_scalar(&self, f: &mut impl FnMut(f64)) {
        self.w.iter().for_each(|&v| f(v));
        self.u.iter().for_each(|&v| f(v));
        self.b.iter().for_each(|&v| f(v));
    }

    pub(crate) fn for_each_scalar_mut(&mut self, f: &mut impl FnMut(&mut f64)) {
        self.w.iter_mut().for_each(&mut *f);
        self.u.iter_mut().for_each(&mut *f);
        self.b.iter_mut().for_each(&mut *f);
    }

    pub(crate) fn zip_mut_with(&mut self, other: &GateParams, f: &mut impl FnMut(&mut f64, f64)) {
        self.w.zip_mut_with(&other.w, |a, &b| f(a, b));
        self.u.zip_mut_with(&other.u, |a, &b| f(a, b));
        self.b.zip_mut_with(&other.b, |a, &b| f(a, b));
    }
}

/// Parameters of one LSTM: forget/input/output gates and the cell candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub forget: GateParams,
    pub input: GateParams,
    pub output: GateParams,
    pub cell: GateParams,
}

impl LstmParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        Self {
            forget: GateParams::zeros(hidden, input),
            input: GateParams::zeros(hidden, input),
            output: GateParams::zeros(hidden, input),
            cell: GateParams::zeros(hidden, input),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.forget.b.len()
    }

    pub fn input_dim(&self) -> usize {
        self.forget.w.ncols()
    }

    pub(crate) fn gates(&self) -> [(&'static str, &GateParams); 4] {
        [
            ("forget", &self.forget),
            ("input", &self.input),
            ("output", &self.output),
            ("cell", &self.cell),
        ]
    }

    pub(crate) fn gates_mut(&mut self) -> [(&'static str, &mut GateParams); 4] {
        [
            ("forget", &mut self.forget),
            ("input", &mut self.input),
            ("output", &mut self.output),
            ("cell", &mut self.cell),
        ]
    }

    pub(crate) fn for_each_scalar(&self, f: &mut impl FnMut(f64)) {
        self.forget.for_each_scalar(f);
        self.input.for_each_scalar(f);
        self.output.for_each_scalar(f);
        self.cell.for_each_scalar(f);
    }

    pub(crate) fn for_each_scalar_mut(&mut self, f: &mut impl FnMut(&mut f64)) {
        self.forget.for_each_scalar_mut(f);
        self.input.for_each_scalar_mut(f);
        self.output.for_each_scalar_mut(f);
        self.cell.for_each_scalar_mut(f);
    }

    pub(crate) fn zip_mut_with(&mut self, other: &LstmParams, f: &mut impl FnMut(&mut f64, f64)) {
        self.forget.zip_mut_with(&other.forget, f);
        self.input.zip_mut_with(&other.input, f);
        self.output.zip_mut_with(&other.output, f);
        self.cell.zip_mut_with(&other.cell, f);
    }

    fn check_input(&self, x: &Array1<f64>) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Config(format!(
                "lstm input has length {}, parameters expect {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

/// Cached activations for one unrolled step, enough for an exact backward
/// pass and for replaying the forward bit-for-bit.
#[derive(Debug, Clone)]
pub struct CellStep {
    pub x: Array1<f64>,
    pub h_prev: Array1<f64>,
    pub c_prev: Array1<f64>,
    pub f: Array1<f64>,
    pub i: Array1<f64>,
    pub o: Array1<f64>,
    pub cand: Array1<f64>,
    pub c: Array1<f64>,
    pub tanh_c: Array1<f64>,
    pub h: Array1<f64>,
}

/// Per-step activation cache for a whole unrolled sequence.
#[derive(Debug, Clone, Default)]
pub struct LstmTrace {
    pub steps: Vec<CellStep>,
}

impl LstmTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gate_activations(
    params: &LstmParams,
    x: &Array1<f64>,
    h_prev: &Array1<f64>,
) -> (Array1<f64>, Array1<f64>, Array1<f64>, Array1<f64>) {
    let f = params.forget.pre_activation(x, h_prev).mapv(sigmoid);
    let i = params.input.pre_activation(x, h_prev).mapv(sigmoid);
    let o = params.output.pre_activation(x, h_prev).mapv(sigmoid);
    let cand = params.cell.pre_activation(x, h_prev).mapv(f64::tanh);
    (f, i, o, cand)
}

/// One LSTM cell step with the full activation cache.
pub fn cell_forward(
    params: &LstmParams,
    x: &Array1<f64>,
    h_prev: &Array1<f64>,
    c_prev: &Array1<f64>,
) -> Result<(Array1<f64>, Array1<f64>, CellStep)> {
    params.check_input(x)?;
    let h_dim = params.hidden_dim();
    if h_prev.len() != h_dim || c_prev.len() != h_dim {
        return Err(Error::Config(format!(
            "lstm state has length {}/{}, parameters expect {}",
            h_prev.len(),
            c_prev.len(),
            h_dim
        )));
    }
    let (f, i, o, cand) = gate_activations(params, x, h_prev);
    let c = &f * c_prev + &i * &cand;
    let tanh_c = c.mapv(f64::tanh);
    let h = &o * &tanh_c;
    let step = CellStep {
        x: x.clone(),
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
        f,
        i,
        o,
        cand,
        c: c.clone(),
        tanh_c,
        h: h.clone(),
    };
    Ok((h, c, step))
}

/// Cell step without caching, for search-time evaluation.
fn cell_eval(
    params: &LstmParams,
    x: &Array1<f64>,
    h_prev: &Array1<f64>,
    c_prev: &Array1<f64>,
) -> (Array1<f64>, Array1<f64>) {
    let (f, i, o, cand) = gate_activations(params, x, h_prev);
    let c = &f * c_prev + &i * &cand;
    let h = &o * c.mapv(f64::tanh);
    (h, c)
}

/// Runs the cell over `inputs` from zero initial state; returns the final
/// `(h, c)`. Empty input yields the zero state.
pub fn forward(params: &LstmParams, inputs: &[Array1<f64>]) -> Result<(Array1<f64>, Array1<f64>)> {
    let h_dim = params.hidden_dim();
    let mut h = Array1::zeros(h_dim);
    let mut c = Array1::zeros(h_dim);
    for x in inputs {
        params.check_input(x)?;
        (h, c) = cell_eval(params, x, &h, &c);
    }
    Ok((h, c))
}

/// As [`forward`], but records the activation trace for [`backward`].
pub fn forward_traced(
    params: &LstmParams,
    inputs: &[Array1<f64>],
) -> Result<(Array1<f64>, Array1<f64>, LstmTrace)> {
    let h_dim = params.hidden_dim();
    let mut h = Array1::zeros(h_dim);
    let mut c = Array1::zeros(h_dim);
    let mut trace = LstmTrace { steps: Vec::with_capacity(inputs.len()) };
    for x in inputs {
        let (h_next, c_next, step) = cell_forward(params, x, &h, &c)?;
        trace.steps.push(step);
        h = h_next;
        c = c_next;
    }
    Ok((h, c, trace))
}

fn add_outer(m: &mut Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) {
    for (r, &ar) in a.iter().enumerate() {
        if ar != 0.0 {
            m.row_mut(r).scaled_add(ar, b);
        }
    }
}

/// Backpropagation through time over a recorded trace.
///
/// `dh_last` and `dc_last` are the loss gradients w.r.t. the final output and
/// cell state. Parameter gradients accumulate into `grads` (an `LstmParams`
/// used as a shape-congruent buffer). Gradients w.r.t. the inputs are not
/// propagated; inputs are embeddings or one-hot vectors, never parameters.
pub fn backward(
    params: &LstmParams,
    trace: &LstmTrace,
    dh_last: Array1<f64>,
    dc_last: Array1<f64>,
    grads: &mut LstmParams,
) {
    let mut dh = dh_last;
    let mut dc = dc_last;
    for step in trace.steps.iter().rev() {
        let d_o = &dh * &step.tanh_c;
        let dc_total = &dc + &(&dh * &step.o * step.tanh_c.mapv(|t| 1.0 - t * t));

        let d_f = &dc_total * &step.c_prev;
        let d_i = &dc_total * &step.cand;
        let d_cand = &dc_total * &step.i;

        let da_f = &d_f * &step.f * step.f.mapv(|v| 1.0 - v);
        let da_i = &d_i * &step.i * step.i.mapv(|v| 1.0 - v);
        let da_o = &d_o * &step.o * step.o.mapv(|v| 1.0 - v);
        let da_c = &d_cand * step.cand.mapv(|v| 1.0 - v * v);

        for (da, gate) in [
            (&da_f, &mut grads.forget),
            (&da_i, &mut grads.input),
            (&da_o, &mut grads.output),
            (&da_c, &mut grads.cell),
        ] {
            add_outer(&mut gate.w, da, &step.x);
            add_outer(&mut gate.u, da, &step.h_prev);
            gate.b += da;
        }

        dh = params.forget.u.t().dot(&da_f)
            + params.input.u.t().dot(&da_i)
            + params.output.u.t().dot(&da_o)
            + params.cell.u.t().dot(&da_c);
        dc = &dc_total * &step.f;
    }
}
