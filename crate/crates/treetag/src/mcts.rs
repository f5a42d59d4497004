//! Policy/value-guided Monte Carlo tree search over the tagging process.
//!
//! Each call builds a fresh tree rooted at one sentence position and runs `K`
//! iterations of select -> evaluate/expand -> backup, then returns the
//! visit-count search policy for the root. There are no rollouts: leaves are
//! scored by the value function. The first iteration only expands the root,
//! so after `K` iterations the root's edges hold `K - 1` visits in total.
//!
//! A tree is confined to one logical thread; the evaluator it calls must be
//! safe for concurrent read-only use so searches over different sentences can
//! run in parallel.

use crate::error::{Error, Result};
use crate::mdp::{State, TagId, TagMdp};

/// Scores states and proposes action priors. Implemented by the neural model
/// and by rigged evaluators in tests.
pub trait Evaluator {
    fn value(&self, state: &State) -> Result<f64>;

    /// A probability distribution aligned with `actions`.
    fn priors(&self, state: &State, actions: &[TagId]) -> Result<Vec<f64>>;

    fn value_and_priors(&self, state: &State, actions: &[TagId]) -> Result<(f64, Vec<f64>)> {
        Ok((self.value(state)?, self.priors(state, actions)?))
    }
}

/// Edge statistics: prior `P`, running mean value `Q`, and visit count `N`.
/// `Q` is zero until the first visit.
#[derive(Debug, Clone)]
pub struct SearchEdge {
    pub action: TagId,
    pub prior: f64,
    pub q: f64,
    pub visits: u32,
    pub child: SearchNode,
}

impl SearchEdge {
    /// One backed-up evaluation: `Q <- (Q*N + v) / (N + 1)`, `N <- N + 1`.
    /// The prior is never touched.
    pub fn record_visit(&mut self, v: f64) {
        self.q = (self.q * self.visits as f64 + v) / (self.visits as f64 + 1.0);
        self.visits += 1;
    }
}

/// A tree node holding an MDP state. Leaves have no edges; expansion creates
/// one edge per available action. Terminal nodes stay leaves forever.
#[derive(Debug, Clone)]
pub struct SearchNode {
    pub state: State,
    pub edges: Vec<SearchEdge>,
}

impl SearchNode {
    pub fn new(state: State) -> Self {
        Self { state, edges: Vec::new() }
    }

    pub fn is_leaf(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn total_visits(&self) -> u32 {
        self.edges.iter().map(|e| e.visits).sum()
    }
}

/// The strengthened search policy over the root's actions.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchPolicy {
    pub actions: Vec<TagId>,
    pub probs: Vec<f64>,
}

impl SearchPolicy {
    /// Most-visited action; ties go to the lowest tag index (actions are in
    /// index order, so the first maximum wins).
    pub fn argmax(&self) -> TagId {
        let mut best = 0;
        for j in 1..self.probs.len() {
            if self.probs[j] > self.probs[best] {
                best = j;
            }
        }
        self.actions[best]
    }

    pub fn prob_of(&self, action: TagId) -> f64 {
        self.actions
            .iter()
            .position(|&a| a == action)
            .map_or(0.0, |j| self.probs[j])
    }
}

/// The exploration bonus `U = P * sqrt(sum_a' N) / (1 + N)`: proportional to
/// the prior, decaying with repeated visits.
pub fn exploration_bonus(prior: f64, total_visits: u32, edge_visits: u32) -> f64 {
    prior * (total_visits as f64).sqrt() / (1.0 + edge_visits as f64)
}

/// Picks the edge maximizing `Q + lambda * U`. Ties break on higher prior,
/// then lower action index; with a freshly expanded node every score is
/// exactly zero, so the tie rule is what makes the search deterministic.
pub fn select_child(node: &SearchNode, lambda: f64) -> Result<usize> {
    if node.is_leaf() {
        return Err(Error::Contract("select_child on an unexpanded node".into()));
    }
    let total = node.total_visits();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (j, edge) in node.edges.iter().enumerate() {
        let score = edge.q + lambda * exploration_bonus(edge.prior, total, edge.visits);
        if score > best_score || (score == best_score && edge.prior > node.edges[best].prior) {
            best = j;
            best_score = score;
        }
    }
    Ok(best)
}

/// Scores a leaf with the value function and, when the state is non-terminal,
/// expands one edge per available action with `P` from the policy, `Q = 0`,
/// `N = 0`. Terminal leaves are evaluated but never expanded.
pub fn expand_and_evaluate<E: Evaluator>(
    node: &mut SearchNode,
    mdp: &TagMdp<'_>,
    eval: &E,
) -> Result<f64> {
    debug_assert!(node.is_leaf());
    if node.state.is_terminal() {
        return eval.value(&node.state);
    }
    let actions = mdp.actions(&node.state)?;
    let (v, priors) = eval.value_and_priors(&node.state, &actions)?;
    if priors.len() != actions.len() {
        return Err(Error::Contract(format!(
            "evaluator returned {} priors for {} actions",
            priors.len(),
            actions.len()
        )));
    }
    node.edges = actions
        .into_iter()
        .zip(priors)
        .map(|(action, prior)| SearchEdge {
            action,
            prior,
            q: 0.0,
            visits: 0,
            child: SearchNode::new(mdp.transition(&node.state, action).expect("valid action")),
        })
        .collect();
    debug_assert!(
        (node.edges.iter().map(|e| e.prior).sum::<f64>() - 1.0).abs() < 1e-9,
        "edge priors must sum to 1"
    );
    Ok(v)
}

/// Backs a leaf value up the traversed path (a list of edge indices from the
/// root), updating every edge's running mean and visit count.
pub fn backup(root: &mut SearchNode, path: &[usize], v: f64) {
    let mut node = root;
    for &idx in path {
        let edge = &mut node.edges[idx];
        edge.record_visit(v);
        node = &mut edge.child;
    }
}

/// The search policy from Eq.-style visit normalization:
/// `pi(a) = N(root, a) / sum_a' N(root, a')`.
pub fn search_policy(root: &SearchNode) -> Result<SearchPolicy> {
    if root.is_leaf() {
        return Err(Error::Contract("search_policy on an unexpanded root".into()));
    }
    let total = root.total_visits();
    if total == 0 {
        return Err(Error::Contract("search_policy with zero root visits".into()));
    }
    Ok(SearchPolicy {
        actions: root.edges.iter().map(|e| e.action).collect(),
        probs: root.edges.iter().map(|e| e.visits as f64 / total as f64).collect(),
    })
}

/// Runs `iterations` search iterations from `root` and returns the policy.
pub fn tree_search<E: Evaluator>(
    root: &State,
    mdp: &TagMdp<'_>,
    eval: &E,
    iterations: usize,
    lambda: f64,
) -> Result<SearchPolicy> {
    tree_search_with_tree(root, mdp, eval, iterations, lambda).map(|(pi, _)| pi)
}

/// As [`tree_search`], additionally returning the final tree for inspection.
pub fn tree_search_with_tree<E: Evaluator>(
    root: &State,
    mdp: &TagMdp<'_>,
    eval: &E,
    iterations: usize,
    lambda: f64,
) -> Result<(SearchPolicy, SearchNode)> {
    if root.is_terminal() {
        return Err(Error::Contract("tree_search from a terminal root".into()));
    }
    if iterations < 2 {
        return Err(Error::Config(format!(
            "search count must be at least 2 (the first iteration only expands the root), got {iterations}"
        )));
    }
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }

    let mut tree = SearchNode::new(root.clone());
    let mut path = Vec::new();
    for _ in 0..iterations {
        path.clear();
        let v = {
            let mut cur = &mut tree;
            while !cur.is_leaf() {
                let idx = select_child(cur, lambda)?;
                path.push(idx);
                cur = &mut cur.edges[idx].child;
            }
            expand_and_evaluate(cur, mdp, eval)?
        };
        backup(&mut tree, &path, v);
    }

    let pi = search_policy(&tree)?;
    Ok((pi, tree))
}

/// Textual tree trace (depth, action, P, Q, N per edge) for debugging and
/// golden-trace tests.
pub fn dump_tree(node: &SearchNode, out: &mut String) {
    fn rec(node: &SearchNode, depth: usize, out: &mut String) {
        for edge in &node.edges {
            out.push_str(&format!(
                "{:indent$}a={} P={:.4} Q={:.4} N={}\n",
                "",
                edge.action,
                edge.prior,
                edge.q,
                edge.visits,
                indent = depth * 2
            ));
            rec(&edge.child, depth + 1, out);
        }
    }
    rec(node, 0, out);
}
