//! A sequence-labeling engine that tags sentences by walking a left-to-right
//! decision process, strengthening each per-position decision with a
//! policy/value-guided Monte Carlo tree search, and training the scorers by
//! reinforcement learning against whole-sentence accuracy.
//!
//! Module map:
//! - [`mdp`]: states, actions, transitions, and the accuracy reward
//! - [`neural`]: LSTM encoders, value/policy heads, loss, gradients, AdaGrad
//! - [`mcts`]: the per-position tree search
//! - [`learner`]: training and decoding loops
//! - [`corpus`]: CoNLL-format I/O, embeddings, subset building, chunk metrics
//! - [`cli`]: the `train` / `tag` / `eval` / `inspect` commands

pub mod cli;
pub mod corpus;
pub mod error;
pub mod learner;
pub mod mcts;
pub mod mdp;
pub mod neural;

pub use error::{Error, Result};
