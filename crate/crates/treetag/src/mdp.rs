//! The tagging decision process: states, action sets, transitions, and the
//! whole-sentence accuracy reward.
//!
//! One time step per word position, left to right. A state at position `t`
//! carries the word prefix `x_1..x_t` and the tags assigned so far
//! (length `t - 1`). Exactly `M` transitions lead from the initial state of an
//! `M`-token sentence to the terminal state.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::Array1;

use crate::error::{Error, Result};

/// Dense index into a [`TagInventory`].
pub type TagId = usize;

/// A tokenized sentence with per-token embedding vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    tokens: Vec<String>,
    embeddings: Vec<Array1<f64>>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>, embeddings: Vec<Array1<f64>>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Input("sentence must be nonempty".into()));
        }
        if tokens.len() != embeddings.len() {
            return Err(Error::Input(format!(
                "{} tokens but {} embeddings",
                tokens.len(),
                embeddings.len()
            )));
        }
        let dim = embeddings[0].len();
        if embeddings.iter().any(|e| e.len() != dim) {
            return Err(Error::Input("embedding vectors differ in length".into()));
        }
        Ok(Self { tokens, embeddings })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // constructor rejects empty sentences
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn embedding(&self, pos: usize) -> &Array1<f64> {
        &self.embeddings[pos]
    }

    pub fn embeddings(&self) -> &[Array1<f64>] {
        &self.embeddings
    }

    pub fn embed_dim(&self) -> usize {
        self.embeddings[0].len()
    }
}

/// The finite tag set, with a dense index <-> tag string bijection.
///
/// Index order is first-occurrence order of whatever built the inventory, and
/// doubles as the one-hot layout used by the neural scorers.
#[derive(Debug, Clone)]
pub struct TagInventory {
    tags: Vec<String>,
    index: HashMap<String, TagId>,
    // BIO structure, precomputed: is this an I-* tag, and which chunk type
    // (interned) does the tag belong to? `None` for O.
    inside: Vec<bool>,
    chunk_key: Vec<Option<u32>>,
}

impl TagInventory {
    pub fn from_tags<I, S>(tags: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tags: Vec<String> = tags.into_iter().map(Into::into).collect();
        if tags.is_empty() {
            return Err(Error::Input("tag inventory must be nonempty".into()));
        }
        let mut index = HashMap::new();
        for (i, t) in tags.iter().enumerate() {
            if t.is_empty() {
                return Err(Error::Input("empty tag string".into()));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate tag `{t}`")));
            }
        }
        let mut types: HashMap<String, u32> = HashMap::new();
        let mut inside = Vec::with_capacity(tags.len());
        let mut chunk_key = Vec::with_capacity(tags.len());
        for t in &tags {
            let (is_inside, ty) = split_bio(t);
            inside.push(is_inside);
            chunk_key.push(ty.map(|ty| {
                let next = types.len() as u32;
                *types.entry(ty.to_string()).or_insert(next)
            }));
        }
        Ok(Self { tags, index, inside, chunk_key })
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, tag: &str) -> Option<TagId> {
        self.index.get(tag).copied()
    }

    pub fn tag(&self, id: TagId) -> &str {
        &self.tags[id]
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    /// Is `tag` a valid continuation given the previous position's tag?
    ///
    /// Only I-X tags are constrained: they require the previous tag to be B-X
    /// or I-X of the same chunk type. Everything else is always allowed.
    pub fn continues(&self, tag: TagId, prev: Option<TagId>) -> bool {
        if !self.inside[tag] {
            return true;
        }
        match prev {
            Some(p) => self.chunk_key[p] == self.chunk_key[tag],
            None => false,
        }
    }
}

/// Splits a tag string into (is_inside, chunk type). "B-NP" -> (false,
/// Some("NP")), "I-NP" -> (true, Some("NP")), "O" -> (false, None). A bare
/// tag with no prefix is treated as beginning its own chunk type.
fn split_bio(tag: &str) -> (bool, Option<&str>) {
    if let Some(ty) = tag.strip_prefix("B-") {
        (false, Some(ty))
    } else if let Some(ty) = tag.strip_prefix("I-") {
        (true, Some(ty))
    } else if tag == "O" {
        (false, None)
    } else {
        (false, Some(tag))
    }
}

/// Whether action sets are the full inventory or BIO-constrained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ActionMode {
    /// Every tag is available at every position.
    #[default]
    Full,
    /// I-X is offered only directly after B-X or I-X.
    Bio,
}

/// An immutable decision-process state: position `t` (1-based) plus the tag
/// prefix assigned so far. The word prefix is implied: `x_1..x_t` while
/// `t <= M`, the whole sentence at the terminal state `t = M + 1`.
#[derive(Debug, Clone)]
pub struct State {
    sentence: Arc<Sentence>,
    t: usize,
    prefix: Vec<TagId>,
}

impl State {
    pub fn initial(sentence: Arc<Sentence>) -> Self {
        Self { sentence, t: 1, prefix: Vec::new() }
    }

    pub fn sentence(&self) -> &Arc<Sentence> {
        &self.sentence
    }

    pub fn position(&self) -> usize {
        self.t
    }

    pub fn prefix(&self) -> &[TagId] {
        &self.prefix
    }

    pub fn is_terminal(&self) -> bool {
        self.t == self.sentence.len() + 1
    }

    /// Length of the word prefix visible in this state.
    pub fn word_len(&self) -> usize {
        self.t.min(self.sentence.len())
    }
}

/// Action sets and transitions over [`State`]s for a fixed inventory.
#[derive(Debug, Clone, Copy)]
pub struct TagMdp<'a> {
    pub inventory: &'a TagInventory,
    pub mode: ActionMode,
}

impl<'a> TagMdp<'a> {
    pub fn new(inventory: &'a TagInventory, mode: ActionMode) -> Self {
        Self { inventory, mode }
    }

    /// The ordered action set at a non-terminal state.
    pub fn actions(&self, s: &State) -> Result<Vec<TagId>> {
        if s.is_terminal() {
            return Err(Error::Contract("actions() on a terminal state".into()));
        }
        let all = 0..self.inventory.len();
        Ok(match self.mode {
            ActionMode::Full => all.collect(),
            ActionMode::Bio => {
                let prev = s.prefix.last().copied();
                all.filter(|&a| self.inventory.continues(a, prev)).collect()
            }
        })
    }

    /// Applies a tag choice, producing the successor state. The word prefix
    /// grows while words remain; choosing a tag at the last position yields
    /// the terminal state.
    pub fn transition(&self, s: &State, action: TagId) -> Result<State> {
        if s.is_terminal() {
            return Err(Error::Contract("transition() on a terminal state".into()));
        }
        if action >= self.inventory.len() {
            return Err(Error::Input(format!(
                "tag index {action} out of range (|tags| = {})",
                self.inventory.len()
            )));
        }
        let mut prefix = Vec::with_capacity(s.prefix.len() + 1);
        prefix.extend_from_slice(&s.prefix);
        prefix.push(action);
        Ok(State { sentence: Arc::clone(&s.sentence), t: s.t + 1, prefix })
    }
}

/// Token-level accuracy: the fraction of matching positions. This is the
/// episode reward.
pub fn accuracy(gold: &[TagId], predicted: &[TagId]) -> Result<f64> {
    if gold.len() != predicted.len() {
        return Err(Error::Input(format!(
            "accuracy over unequal lengths: {} vs {}",
            gold.len(),
            predicted.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::Input("accuracy over empty sequences".into()));
    }
    let hits = gold.iter().zip(predicted).filter(|(g, p)| g == p).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// One decision the search made: the state, the action set offered there, and
/// the search policy over that set.
#[derive(Debug, Clone)]
pub struct EpisodeStep {
    pub state: State,
    pub actions: Vec<TagId>,
    pub pi: Vec<f64>,
}

/// A full left-to-right tagging of one sentence plus its final reward; the
/// unit of training signal.
#[derive(Debug, Clone)]
pub struct Episode {
    pub steps: Vec<EpisodeStep>,
    pub reward: f64,
    pub predicted: Vec<TagId>,
}
