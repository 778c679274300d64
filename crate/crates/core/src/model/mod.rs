//! Finite-window representation of a countable-state zero-sum game with
//! multiplicative (risk-sensitive) ergodic cost, plus the standing-assumption
//! checkers.
//!
//! States are `0..N`, a truncation window of the countable space. Every state
//! carries finite action lists for both players; transition rows are sparse and
//! may lose mass out of the window (treated as absorption for Dirichlet
//! problems). Costs are stored twice: as given, and multiplied by the risk
//! parameter θ, which is what every solver consumes.

mod checks;
pub(crate) use checks::max_log_drift;
mod io;

pub use checks::{
    check_irreducibility, check_lyapunov, check_reference_state, validate_model, Finding,
    FindingKind, IrreducibilityMode, IrreducibilityReport, LyapunovError, LyapunovReport, NormLikeCheck,
    ValidationReport, LYAPUNOV_PASS_TOL, ROW_SUM_TOL,
};
pub use io::ModelDoc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while constructing or ingesting a model. Semantic problems
/// (negative probabilities, over-full rows, ...) are not errors here; they are
/// reported by [`validate_model`].
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("model has no states")]
    NoStates,
    #[error("expected {expected} per-state action lists for {player}, found {found}")]
    ActionListCount { player: &'static str, expected: usize, found: usize },
    #[error("{what} index out of range at {context}")]
    IndexOutOfRange { what: &'static str, context: String },
    #[error("duplicate {what} record at {context}")]
    Duplicate { what: &'static str, context: String },
    #[error("missing cost for (i={i}, u={u}, v={v})")]
    MissingCost { i: usize, u: usize, v: usize },
    #[error("lyapunov data: {0}")]
    Lyapunov(String),
    #[error("non-finite {what} at {context}")]
    NonFinite { what: &'static str, context: String },
}

/// Which side of the drift inequality is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DriftBound {
    /// Bounded-cost case: a single rate γ̃ with γ̃ > sup c.
    Gamma(f64),
    /// Unbounded-cost case: a per-state rate ℓ̃(i).
    Ell(Vec<f64>),
}

impl DriftBound {
    pub fn rate(&self, i: usize) -> f64 {
        match self {
            DriftBound::Gamma(g) => *g,
            DriftBound::Ell(l) => l[i],
        }
    }
}

/// Lyapunov certificate data. `W` is kept in log form because natural choices
/// (e.g. `exp(i²/6 + 1)`) overflow `f64` long before the window ends.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovData {
    pub log_w: Vec<f64>,
    pub bound: DriftBound,
    /// The finite set K̃.
    pub k_set: Vec<usize>,
    /// The constant C̃ > 0.
    pub c: f64,
}

impl LyapunovData {
    pub fn in_k(&self, i: usize) -> bool {
        self.k_set.contains(&i)
    }
}

/// Per-state data: action counts, sparse rows and costs, laid out by `u * n_v + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateKernel {
    n_u: usize,
    n_v: usize,
    rows: Vec<Vec<(usize, f64)>>,
    raw_cost: Vec<f64>,
    cost: Vec<f64>,
}

impl StateKernel {
    #[inline]
    pub fn n_u(&self) -> usize {
        self.n_u
    }
    #[inline]
    pub fn n_v(&self) -> usize {
        self.n_v
    }
    /// Sparse row `P(·|i,u,v)` as `(j, p)` pairs sorted by `j`.
    #[inline]
    pub fn row(&self, u: usize, v: usize) -> &[(usize, f64)] {
        &self.rows[u * self.n_v + v]
    }
    /// θ-scaled cost.
    #[inline]
    pub fn cost(&self, u: usize, v: usize) -> f64 {
        self.cost[u * self.n_v + v]
    }
    #[inline]
    pub fn raw_cost(&self, u: usize, v: usize) -> f64 {
        self.raw_cost[u * self.n_v + v]
    }
    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }
    /// θ-scaled costs in `u * n_v + v` order.
    pub fn costs(&self) -> &[f64] {
        &self.cost
    }
    pub fn max_cost(&self) -> f64 {
        self.cost.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Immutable game model on a finite window.
#[derive(Debug, Clone, PartialEq)]
pub struct GameModel {
    actions_p1: Vec<Vec<String>>,
    actions_p2: Vec<Vec<String>>,
    kernels: Vec<StateKernel>,
    theta: f64,
    i0: usize,
    closed: bool,
    lyapunov: Option<LyapunovData>,
}

impl GameModel {
    pub fn builder(states: usize) -> ModelBuilder {
        ModelBuilder::new(states)
    }

    /// Uncontrolled chain (one action per player) from a dense matrix and
    /// per-state costs. Zero entries are dropped from the sparse rows.
    pub fn uncontrolled(p: &[Vec<f64>], c: &[f64]) -> Result<Self, ModelError> {
        let n = p.len();
        let mut b = ModelBuilder::new(n);
        for (i, row) in p.iter().enumerate() {
            b = b.dense_row(i, 0, 0, row).cost(i, 0, 0, c[i]);
        }
        b.build()
    }

    #[inline]
    pub fn states(&self) -> usize {
        self.kernels.len()
    }
    #[inline]
    pub fn kernel(&self, i: usize) -> &StateKernel {
        &self.kernels[i]
    }
    pub fn kernels(&self) -> &[StateKernel] {
        &self.kernels
    }
    pub fn actions_p1(&self, i: usize) -> &[String] {
        &self.actions_p1[i]
    }
    pub fn actions_p2(&self, i: usize) -> &[String] {
        &self.actions_p2[i]
    }
    pub fn theta(&self) -> f64 {
        self.theta
    }
    pub fn i0(&self) -> usize {
        self.i0
    }
    /// Declared closed: rows must sum to one (no exit mass).
    pub fn is_closed(&self) -> bool {
        self.closed
    }
    pub fn lyapunov(&self) -> Option<&LyapunovData> {
        self.lyapunov.as_ref()
    }
    /// True when both players have a single action everywhere.
    pub fn is_uncontrolled(&self) -> bool {
        self.kernels.iter().all(|k| k.n_u == 1 && k.n_v == 1)
    }

    /// Largest one-step mass leaving the window over all `(i, u, v)`.
    pub fn max_exit_mass(&self) -> f64 {
        self.kernels
            .iter()
            .flat_map(|k| k.rows.iter())
            .map(|r| (1.0 - r.iter().map(|&(_, p)| p).sum::<f64>()).max(0.0))
            .fold(0.0, f64::max)
    }

    /// θ-scaled cost table indexed `[i][u * n_v + v]`.
    pub fn cost_table(&self) -> Vec<Vec<f64>> {
        self.kernels.iter().map(|k| k.cost.clone()).collect()
    }

    /// Largest number of actions any player has at any state.
    pub fn max_actions(&self) -> usize {
        self.kernels.iter().map(|k| k.n_u.max(k.n_v)).max().unwrap_or(0)
    }
}

/// Incremental constructor used by ingestion, the example generator, and tests.
#[derive(Debug, Clone)]
pub struct ModelBuilder {
    states: usize,
    actions_p1: Vec<Vec<String>>,
    actions_p2: Vec<Vec<String>>,
    transitions: Vec<(usize, usize, usize, usize, f64)>,
    costs: Vec<(usize, usize, usize, f64)>,
    theta: f64,
    i0: usize,
    closed: bool,
    lyapunov: Option<LyapunovData>,
}

impl ModelBuilder {
    pub fn new(states: usize) -> Self {
        Self {
            states,
            actions_p1: vec![vec!["0".to_string()]; states],
            actions_p2: vec![vec!["0".to_string()]; states],
            transitions: Vec::new(),
            costs: Vec::new(),
            theta: 1.0,
            i0: 0,
            closed: false,
            lyapunov: None,
        }
    }

    pub fn actions(mut self, i: usize, p1: Vec<String>, p2: Vec<String>) -> Self {
        self.actions_p1[i] = p1;
        self.actions_p2[i] = p2;
        self
    }

    /// Numbered labels `"0".."n-1"` for both players at state `i`.
    pub fn action_counts(self, i: usize, n_u: usize, n_v: usize) -> Self {
        let lab = |n: usize| (0..n).map(|a| a.to_string()).collect();
        self.actions(i, lab(n_u), lab(n_v))
    }

    pub fn transition(mut self, i: usize, u: usize, v: usize, j: usize, p: f64) -> Self {
        self.transitions.push((i, u, v, j, p));
        self
    }

    /// Adds every nonzero entry of a dense row.
    pub fn dense_row(mut self, i: usize, u: usize, v: usize, row: &[f64]) -> Self {
        for (j, &p) in row.iter().enumerate() {
            if p != 0.0 {
                self.transitions.push((i, u, v, j, p));
            }
        }
        self
    }

    pub fn cost(mut self, i: usize, u: usize, v: usize, c: f64) -> Self {
        self.costs.push((i, u, v, c));
        self
    }

    pub fn theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn i0(mut self, i0: usize) -> Self {
        self.i0 = i0;
        self
    }

    pub fn closed(mut self, closed: bool) -> Self {
        self.closed = closed;
        self
    }

    pub fn lyapunov(mut self, data: LyapunovData) -> Self {
        self.lyapunov = Some(data);
        self
    }

    pub fn build(self) -> Result<GameModel, ModelError> {
        let n = self.states;
        if n == 0 {
            return Err(ModelError::NoStates);
        }
        if self.actions_p1.len() != n {
            return Err(ModelError::ActionListCount {
                player: "player 1",
                expected: n,
                found: self.actions_p1.len(),
            });
        }
        if self.actions_p2.len() != n {
            return Err(ModelError::ActionListCount {
                player: "player 2",
                expected: n,
                found: self.actions_p2.len(),
            });
        }
        let mut kernels: Vec<StateKernel> = (0..n)
            .map(|i| {
                let (n_u, n_v) = (self.actions_p1[i].len(), self.actions_p2[i].len());
                StateKernel {
                    n_u,
                    n_v,
                    rows: vec![Vec::new(); n_u * n_v],
                    raw_cost: vec![f64::NAN; n_u * n_v],
                    cost: vec![f64::NAN; n_u * n_v],
                }
            })
            .collect();

        let check_iuv = |i: usize, u: usize, v: usize, kernels: &[StateKernel], what| {
            if i >= n || u >= kernels[i].n_u || v >= kernels[i].n_v {
                Err(ModelError::IndexOutOfRange {
                    what,
                    context: format!("(i={i}, u={u}, v={v})"),
                })
            } else {
                Ok(())
            }
        };

        for &(i, u, v, j, p) in &self.transitions {
            check_iuv(i, u, v, &kernels, "transition")?;
            if j >= n {
                return Err(ModelError::IndexOutOfRange {
                    what: "target state",
                    context: format!("(i={i}, u={u}, v={v}, j={j})"),
                });
            }
            if !p.is_finite() {
                return Err(ModelError::NonFinite {
                    what: "probability",
                    context: format!("(i={i}, u={u}, v={v}, j={j})"),
                });
            }
            let k = &mut kernels[i];
            let row = &mut k.rows[u * k.n_v + v];
            if row.iter().any(|&(jj, _)| jj == j) {
                return Err(ModelError::Duplicate {
                    what: "transition",
                    context: format!("(i={i}, u={u}, v={v}, j={j})"),
                });
            }
            row.push((j, p));
        }
        for k in &mut kernels {
            for row in &mut k.rows {
                row.sort_by_key(|&(j, _)| j);
            }
        }

        for &(i, u, v, c) in &self.costs {
            check_iuv(i, u, v, &kernels, "cost")?;
            if !c.is_finite() {
                return Err(ModelError::NonFinite {
                    what: "cost",
                    context: format!("(i={i}, u={u}, v={v})"),
                });
            }
            let k = &mut kernels[i];
            let slot = u * k.n_v + v;
            if !k.raw_cost[slot].is_nan() {
                return Err(ModelError::Duplicate {
                    what: "cost",
                    context: format!("(i={i}, u={u}, v={v})"),
                });
            }
            k.raw_cost[slot] = c;
            k.cost[slot] = self.theta * c;
        }
        for (i, k) in kernels.iter().enumerate() {
            if let Some(slot) = k.raw_cost.iter().position(|c| c.is_nan()) {
                return Err(ModelError::MissingCost {
                    i,
                    u: slot / k.n_v.max(1),
                    v: slot % k.n_v.max(1),
                });
            }
        }

        if let Some(ly) = &self.lyapunov {
            if ly.log_w.len() != n {
                return Err(ModelError::Lyapunov(format!(
                    "W has {} entries, expected {n}",
                    ly.log_w.len()
                )));
            }
            if let DriftBound::Ell(l) = &ly.bound {
                if l.len() != n {
                    return Err(ModelError::Lyapunov(format!(
                        "ell has {} entries, expected {n}",
                        l.len()
                    )));
                }
            }
            if let Some(&k) = ly.k_set.iter().find(|&&k| k >= n) {
                return Err(ModelError::Lyapunov(format!("K contains state {k} outside the window")));
            }
        }

        Ok(GameModel {
            actions_p1: self.actions_p1,
            actions_p2: self.actions_p2,
            kernels,
            theta: self.theta,
            i0: self.i0,
            closed: self.closed,
            lyapunov: self.lyapunov,
        })
    }
}

/// Which player a strategy or deviation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Player {
    /// The minimizer.
    P1,
    /// The maximizer.
    P2,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StrategyError {
    #[error("strategy covers {found} states, model has {expected}")]
    StateCount { expected: usize, found: usize },
    #[error("state {state}: {found} weights for {expected} actions")]
    ActionCount { state: usize, expected: usize, found: usize },
    #[error("state {state}: weights are not a probability vector (sum {sum})")]
    NotDistribution { state: usize, sum: f64 },
}

/// Per-state mixed action rule, time-invariant and history-free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryStrategy {
    pub weights: Vec<Vec<f64>>,
}

impl StationaryStrategy {
    pub fn new(weights: Vec<Vec<f64>>) -> Self {
        Self { weights }
    }

    /// Point mass on action `a(i)` at each state.
    pub fn pure(model: &GameModel, player: Player, choice: &[usize]) -> Self {
        let weights = (0..model.states())
            .map(|i| {
                let n = action_count(model, player, i);
                let mut w = vec![0.0; n];
                w[choice[i]] = 1.0;
                w
            })
            .collect();
        Self { weights }
    }

    pub fn uniform(model: &GameModel, player: Player) -> Self {
        let weights = (0..model.states())
            .map(|i| {
                let n = action_count(model, player, i);
                vec![1.0 / n as f64; n]
            })
            .collect();
        Self { weights }
    }

    pub fn at(&self, i: usize) -> &[f64] {
        &self.weights[i]
    }

    /// Checks shape against the model and the simplex constraint (1e-12).
    pub fn validate(&self, model: &GameModel, player: Player) -> Result<(), StrategyError> {
        if self.weights.len() != model.states() {
            return Err(StrategyError::StateCount {
                expected: model.states(),
                found: self.weights.len(),
            });
        }
        for (i, w) in self.weights.iter().enumerate() {
            let n = action_count(model, player, i);
            if w.len() != n {
                return Err(StrategyError::ActionCount { state: i, expected: n, found: w.len() });
            }
            let sum: f64 = w.iter().sum();
            if w.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                return Err(StrategyError::NotDistribution { state: i, sum });
            }
        }
        Ok(())
    }
}

pub(crate) fn action_count(model: &GameModel, player: Player, i: usize) -> usize {
    match player {
        Player::P1 => model.kernel(i).n_u(),
        Player::P2 => model.kernel(i).n_v(),
    }
}
