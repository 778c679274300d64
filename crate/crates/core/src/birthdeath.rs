//! Controlled birth–death game: player 1 drives births with `u ∈ [δ, L1]`,
//! player 2 drives deaths with `v ∈ [δ, L2]`, and every state returns to 0
//! with the remaining mass.
//!
//! State 0 jumps to `j ≥ 1` with mass `e^{-j²/3-3}`; state 1 sends
//! `e^{-2} v / (2L)` to each of 1, 2, 3; a state `i ≥ 2` sends `u e^{-i} / (2L)`
//! down, `(u e^{-i} + v e^{-2i}) / (2L)` to itself and `v e^{-2i} / (2L)` up,
//! with `L = L1 + L2`. The per-step cost is `p̂·i + c̃1(i,u) - c̃2(i,v)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DriftBound, GameModel, LyapunovData, ModelBuilder, ModelError, NormLikeCheck};
use crate::numeric::log_sum_exp;

/// Per-capita cost rates at or above this break the drift argument.
pub const P_HAT_LIMIT: f64 = 1.0 / 6.0;
/// Terms of the state-0 series beyond this index underflow.
const SERIES_TERMS: usize = 120;

#[derive(Debug, Error)]
pub enum BirthDeathError {
    #[error("window {0} is too small; state 1 reaches state 3, so at least 4 states are needed")]
    WindowTooSmall(usize),
    #[error("p_hat = {0} must be positive and below 1/6 (set the override to build anyway)")]
    PHatOutOfRange(f64),
    #[error("need 0 < delta <= L1 and delta <= L2, got delta = {delta}, L1 = {l1}, L2 = {l2}")]
    InvalidInterval { delta: f64, l1: f64, l2: f64 },
    #[error("action grids need at least one point")]
    EmptyGrid,
    #[error("cost table for {player} has the wrong shape: {detail}")]
    TableShape { player: &'static str, detail: String },
    #[error("i_max = {i_max} exceeds the window {window}")]
    RangeTooLarge { i_max: usize, window: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One player's action cost `c̃(i, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CostShape {
    /// `c̃(i, a) = a`.
    Linear,
    /// `c̃(i, a) = intercept + action_coef·a + state_coef·i`.
    Affine { intercept: f64, action_coef: f64, state_coef: f64 },
    /// `c̃(i, a) = values[i][k]` for the `k`-th grid action; rows cover the window.
    Table { values: Vec<Vec<f64>> },
}

impl CostShape {
    fn eval(&self, i: usize, k: usize, a: f64) -> f64 {
        match self {
            CostShape::Linear => a,
            CostShape::Affine { intercept, action_coef, state_coef } => {
                intercept + action_coef * a + state_coef * i as f64
            }
            CostShape::Table { values } => values[i][k],
        }
    }

    fn check(&self, player: &'static str, window: usize, grid: usize) -> Result<(), BirthDeathError> {
        if let CostShape::Table { values } = self {
            if values.len() < window {
                return Err(BirthDeathError::TableShape {
                    player,
                    detail: format!("{} rows for a window of {window}", values.len()),
                });
            }
            if let Some((i, r)) = values.iter().enumerate().find(|(_, r)| r.len() != grid) {
                return Err(BirthDeathError::TableShape {
                    player,
                    detail: format!("row {i} has {} entries for {grid} grid actions", r.len()),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirthDeathParams {
    pub p_hat: f64,
    pub delta: f64,
    pub l1: f64,
    pub l2: f64,
    pub grid_u: usize,
    pub grid_v: usize,
    pub window: usize,
    pub cost_p1: CostShape,
    pub cost_p2: CostShape,
    pub theta: f64,
    /// Accept `p̂ ≥ 1/6` (used to demonstrate the failing norm-like check).
    pub allow_large_p_hat: bool,
}

impl Default for BirthDeathParams {
    fn default() -> Self {
        Self {
            p_hat: 0.1,
            delta: 0.1,
            l1: 1.0,
            l2: 1.0,
            grid_u: 5,
            grid_v: 5,
            window: 60,
            cost_p1: CostShape::Linear,
            cost_p2: CostShape::Linear,
            theta: 1.0,
            allow_large_p_hat: false,
        }
    }
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|k| if k + 1 == n { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 }).collect()
}

impl BirthDeathParams {
    pub fn validate(&self) -> Result<(), BirthDeathError> {
        if self.window < 4 {
            return Err(BirthDeathError::WindowTooSmall(self.window));
        }
        if !(self.p_hat > 0.0) || (self.p_hat >= P_HAT_LIMIT && !self.allow_large_p_hat) {
            return Err(BirthDeathError::PHatOutOfRange(self.p_hat));
        }
        if !(self.delta > 0.0 && self.delta <= self.l1 && self.delta <= self.l2) {
            return Err(BirthDeathError::InvalidInterval { delta: self.delta, l1: self.l1, l2: self.l2 });
        }
        if self.grid_u == 0 || self.grid_v == 0 {
            return Err(BirthDeathError::EmptyGrid);
        }
        self.cost_p1.check("player 1", self.window, self.grid_u)?;
        self.cost_p2.check("player 2", self.window, self.grid_v)?;
        Ok(())
    }

    pub fn grid_u(&self) -> Vec<f64> {
        grid(self.delta, self.l1, self.grid_u)
    }
    pub fn grid_v(&self) -> Vec<f64> {
        grid(self.delta, self.l2, self.grid_v)
    }

    fn two_l(&self) -> f64 {
        2.0 * (self.l1 + self.l2)
    }

    /// Unscaled cost `p̂·i + c̃1(i,u) - c̃2(i,v)` at grid indices `(ku, kv)`.
    pub fn cost(&self, i: usize, ku: usize, kv: usize) -> f64 {
        let (u, v) = (self.grid_u()[ku], self.grid_v()[kv]);
        self.p_hat * i as f64 + self.cost_p1.eval(i, ku, u) - self.cost_p2.eval(i, kv, v)
    }

    /// Untruncated kernel row `(j, P(j|i,u,v))` on the countable space.
    /// The state-0 row lists `j ≥ 1` up to where the masses underflow.
    pub fn kernel_row(&self, i: usize, u: f64, v: f64) -> Vec<(usize, f64)> {
        let l = self.two_l();
        match i {
            0 => {
                let jumps: Vec<(usize, f64)> =
                    (1..SERIES_TERMS).map(|j| (j, (-((j * j) as f64) / 3.0 - 3.0).exp())).collect();
                let out: f64 = jumps.iter().map(|&(_, p)| p).sum();
                let mut row = vec![(0, 1.0 - out)];
                row.extend(jumps);
                row
            }
            1 => {
                let m = (-2f64).exp() * v / l;
                vec![(0, 1.0 - 3.0 * m), (1, m), (2, m), (3, m)]
            }
            _ => {
                let down = u * (-(i as f64)).exp() / l;
                let up = v * (-2.0 * i as f64).exp() / l;
                vec![(0, 1.0 - 2.0 * (down + up)), (i - 1, down), (i, down + up), (i + 1, up)]
            }
        }
    }
}

/// `ln W(i) = i²/6 + 1`.
pub fn log_w(i: usize) -> f64 {
    let x = i as f64;
    x * x / 6.0 + 1.0
}

/// `ℓ̃(i) = (i + 3) / 6`.
pub fn ell(i: usize) -> f64 {
    (i as f64 + 3.0) / 6.0
}

/// The finite set `{i : 4 - ℓ̃(i) > 0}`.
pub fn m_set() -> Vec<usize> {
    (0..).take_while(|&i| 4.0 - ell(i) > 0.0).collect()
}

/// `ln C̃` with `C̃ = max{max_{j∈M} W(j) e^4, e^{-2} Σ_{i≥1}(e^{-i²/6} - e^{-i²/3}) + e}`.
pub fn log_c_tilde() -> f64 {
    let first = m_set().into_iter().map(|j| log_w(j) + 4.0).fold(f64::NEG_INFINITY, f64::max);
    let series: f64 = (1..SERIES_TERMS)
        .map(|i| {
            let s = (i * i) as f64;
            (-s / 6.0).exp() - (-s / 3.0).exp()
        })
        .sum();
    let second = ((-2f64).exp() * series + 1f64.exp()).ln();
    first.max(second)
}

/// Build log: what truncation and the cost conventions did to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildLog {
    /// Mass of `j ≥ window` jumps from state 0 folded back into state 0.
    pub state0_fold_mass: f64,
    /// Largest upward mass from the last window state folded into state 0.
    pub edge_fold_mass: f64,
    /// `(i, u, v)` grid indices with negative cost.
    pub negative_costs: Vec<(usize, usize, usize)>,
    pub warnings: Vec<String>,
}

/// Window-truncated model with Lyapunov data attached; rows sum to one.
pub fn build_birth_death(params: &BirthDeathParams) -> Result<GameModel, BirthDeathError> {
    Ok(build_birth_death_with_log(params)?.0)
}

pub fn build_birth_death_with_log(params: &BirthDeathParams) -> Result<(GameModel, BuildLog), BirthDeathError> {
    params.validate()?;
    let n = params.window;
    let (gu, gv) = (params.grid_u(), params.grid_v());
    let labels = |g: &[f64]| g.iter().map(|x| format!("{x}")).collect::<Vec<_>>();
    let mut b = ModelBuilder::new(n).theta(params.theta).i0(0).closed(true);
    let mut log = BuildLog { state0_fold_mass: 0.0, edge_fold_mass: 0.0, negative_costs: Vec::new(), warnings: Vec::new() };

    for i in 0..n {
        b = b.actions(i, labels(&gu), labels(&gv));
        for (ku, &u) in gu.iter().enumerate() {
            for (kv, &v) in gv.iter().enumerate() {
                let mut row = vec![0.0; n];
                let mut folded = 0.0;
                for (j, p) in params.kernel_row(i, u, v) {
                    if j < n {
                        row[j] += p;
                    } else {
                        folded += p;
                    }
                }
                // Renormalize the return mass so the row is stochastic to rounding.
                let rest: f64 = row[1..].iter().sum();
                row[0] = 1.0 - rest;
                if i == 0 {
                    log.state0_fold_mass = log.state0_fold_mass.max(folded);
                } else {
                    log.edge_fold_mass = log.edge_fold_mass.max(folded);
                }
                b = b.dense_row(i, ku, kv, &row);
                let c = params.cost(i, ku, kv);
                if c < 0.0 {
                    log.negative_costs.push((i, ku, kv));
                }
                b = b.cost(i, ku, kv, c);
            }
        }
    }
    let k_set: Vec<usize> = m_set().into_iter().filter(|&i| i < n).collect();
    b = b.lyapunov(LyapunovData {
        log_w: (0..n).map(log_w).collect(),
        bound: DriftBound::Ell((0..n).map(ell).collect()),
        k_set,
        c: log_c_tilde().exp(),
    });
    if !log.negative_costs.is_empty() {
        let (i, u, v) = log.negative_costs[0];
        log.warnings.push(format!(
            "{} (i,u,v) entries have negative cost, first at (i={i}, u={}, v={})",
            log.negative_costs.len(),
            gu[u],
            gv[v]
        ));
    }
    if log.state0_fold_mass > 0.0 {
        log.warnings.push(format!("state-0 tail mass {:e} beyond the window folded into state 0", log.state0_fold_mass));
    }
    if log.edge_fold_mass > 0.0 {
        log.warnings.push(format!("upward mass {:e} at the window edge folded into state 0", log.edge_fold_mass));
    }
    let model = b.build()?;
    for i in 0..n {
        for row in model.kernel(i).rows() {
            let s: f64 = row.iter().map(|&(_, p)| p).sum();
            assert!((s - 1.0).abs() <= crate::model::ROW_SUM_TOL, "row at state {i} sums to {s}");
        }
    }
    Ok((model, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftAssumptionState {
    pub i: usize,
    /// `ln(C̃·1_M(i) + e^{-ℓ̃(i)} W(i)) - ln max_{u,v} Σ_j W(j) P(j|i,u,v)`.
    pub slack: f64,
    /// Grid indices of the pair with the largest drift.
    pub worst_u: usize,
    pub worst_v: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftAssumptionReport {
    pub i_max: usize,
    pub m_set: Vec<usize>,
    pub log_c_tilde: f64,
    pub states: Vec<DriftAssumptionState>,
    pub worst_slack: f64,
    pub worst_state: usize,
    pub drift_pass: bool,
    /// `Σ_j W(j)P(j|0,u,v) ≤ C̃` on the grid.
    pub state0_pass: bool,
    /// `Σ_j W(j)P(j|i,u,v) ≤ 4 W(i) e^{-i/3 + 1/6}` for every `i ≥ 2` on the grid.
    pub intermediate_bound_pass: bool,
    pub contains_0_and_1: bool,
    /// Window surrogate for the norm-like property of `ℓ̃ - max c`.
    pub norm_like: NormLikeCheck,
    pub pass: bool,
}

/// Evaluates the drift inequalities and the norm-like surrogate on the
/// untruncated kernels for `i = 0..=i_max` and every grid pair.
pub fn verify_drift_assumptions(params: &BirthDeathParams, i_max: usize) -> Result<DriftAssumptionReport, BirthDeathError> {
    params.validate()?;
    if i_max > params.window {
        return Err(BirthDeathError::RangeTooLarge { i_max, window: params.window });
    }
    let (gu, gv) = (params.grid_u(), params.grid_v());
    let m = m_set();
    let lc = log_c_tilde();
    let drift = |i: usize, u: f64, v: f64| {
        let terms: Vec<f64> = params
            .kernel_row(i, u, v)
            .into_iter()
            .filter(|&(_, p)| p > 0.0)
            .map(|(j, p)| p.ln() + log_w(j))
            .collect();
        log_sum_exp(&terms)
    };

    let mut states = Vec::with_capacity(i_max + 1);
    let mut state0_pass = true;
    let mut intermediate_bound_pass = true;
    for i in 0..=i_max {
        let mut worst = (f64::NEG_INFINITY, 0, 0);
        for (ku, &u) in gu.iter().enumerate() {
            for (kv, &v) in gv.iter().enumerate() {
                let d = drift(i, u, v);
                if d > worst.0 {
                    worst = (d, ku, kv);
                }
                if i == 0 && d > lc {
                    state0_pass = false;
                }
                if i >= 2 && d > 4f64.ln() + log_w(i) - i as f64 / 3.0 + 1.0 / 6.0 {
                    intermediate_bound_pass = false;
                }
            }
        }
        let mut rhs = log_w(i) - ell(i);
        if m.contains(&i) {
            rhs = crate::numeric::log_add_exp(rhs, lc);
        }
        states.push(DriftAssumptionState { i, slack: rhs - worst.0, worst_u: worst.1, worst_v: worst.2 });
    }
    let (worst_state, worst_slack) = states
        .iter()
        .map(|s| (s.i, s.slack))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    let drift_pass = worst_slack >= -crate::model::LYAPUNOV_PASS_TOL;

    let f: Vec<f64> = (0..=i_max)
        .map(|i| {
            let max_c = (0..gu.len())
                .flat_map(|ku| (0..gv.len()).map(move |kv| (ku, kv)))
                .map(|(ku, kv)| params.theta * params.cost(i, ku, kv))
                .fold(f64::NEG_INFINITY, f64::max);
            ell(i) - max_c
        })
        .collect();
    let norm_like = NormLikeCheck::surrogate(&f);
    let contains_0_and_1 = m.contains(&0) && m.contains(&1);
    let pass = drift_pass && state0_pass && intermediate_bound_pass && contains_0_and_1 && norm_like.pass;
    Ok(DriftAssumptionReport {
        i_max,
        m_set: m,
        log_c_tilde: lc,
        states,
        worst_slack,
        worst_state,
        drift_pass,
        state0_pass,
        intermediate_bound_pass,
        contains_0_and_1,
        norm_like,
        pass,
    })
}

/// Contract name for [`verify_drift_assumptions`].
pub use verify_drift_assumptions as verify_prop_5_2;
/// Contract name for [`DriftAssumptionReport`].
pub type Prop52Report = DriftAssumptionReport;
