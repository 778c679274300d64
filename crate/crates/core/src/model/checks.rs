//! Well-formedness and standing-assumption checks. All checks are read-only
//! and never abort; they return reports.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DriftBound, GameModel};
use crate::numeric::{log_add_exp, log_sum_exp};

/// Row-sum tolerance for sub-stochastic and closed rows.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Drift slack (log-ratio) at or above `-LYAPUNOV_PASS_TOL` counts as pass.
pub const LYAPUNOV_PASS_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    NegativeProbability,
    RowSumExceeded,
    RowNotStochastic,
    NegativeCost,
    EmptyActions,
    InvalidReference,
    InvalidTheta,
    LyapunovBelowOne,
    LyapunovInvalidConstant,
    LyapunovInvalidRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub kind: FindingKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub i: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    pub message: String,
}

impl Finding {
    fn at(kind: FindingKind, i: usize, u: usize, v: usize, value: f64, message: String) -> Self {
        Self { kind, i: Some(i), u: Some(u), v: Some(v), j: None, value: Some(value), message }
    }
    fn global(kind: FindingKind, value: Option<f64>, message: String) -> Self {
        Self { kind, i: None, u: None, v: None, j: None, value, message }
    }
}

/// Structural violations make a model unusable by the solvers. Warnings flag
/// departures from the standing assumptions that the numerics tolerate
/// (currently: negative costs).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Finding>,
    pub warnings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_well_formed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_model(model: &GameModel) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let n = model.states();

    if !(model.theta() > 0.0) || !model.theta().is_finite() {
        rep.violations.push(Finding::global(
            FindingKind::InvalidTheta,
            Some(model.theta()),
            format!("risk parameter theta = {} must be finite and > 0", model.theta()),
        ));
    }
    if model.i0() >= n {
        rep.violations.push(Finding::global(
            FindingKind::InvalidReference,
            Some(model.i0() as f64),
            format!("reference state {} outside window 0..{n}", model.i0()),
        ));
    }

    for i in 0..n {
        let k = model.kernel(i);
        if k.n_u() == 0 || k.n_v() == 0 {
            rep.violations.push(Finding {
                kind: FindingKind::EmptyActions,
                i: Some(i),
                u: None,
                v: None,
                j: None,
                value: None,
                message: format!("state {i} has an empty action list"),
            });
            continue;
        }
        for u in 0..k.n_u() {
            for v in 0..k.n_v() {
                let row = k.row(u, v);
                for &(j, p) in row {
                    if p < 0.0 {
                        rep.violations.push(Finding {
                            kind: FindingKind::NegativeProbability,
                            i: Some(i),
                            u: Some(u),
                            v: Some(v),
                            j: Some(j),
                            value: Some(p),
                            message: format!("P({j}|{i},{u},{v}) = {p} < 0"),
                        });
                    }
                }
                let sum: f64 = row.iter().map(|&(_, p)| p).sum();
                if sum > 1.0 + ROW_SUM_TOL {
                    rep.violations.push(Finding::at(
                        FindingKind::RowSumExceeded,
                        i,
                        u,
                        v,
                        sum,
                        format!("row (i={i}, u={u}, v={v}) sums to {sum} > 1"),
                    ));
                } else if model.is_closed() && (sum - 1.0).abs() > ROW_SUM_TOL {
                    rep.violations.push(Finding::at(
                        FindingKind::RowNotStochastic,
                        i,
                        u,
                        v,
                        sum,
                        format!("closed model: row (i={i}, u={u}, v={v}) sums to {sum}"),
                    ));
                }
                let c = k.raw_cost(u, v);
                if c < 0.0 {
                    rep.warnings.push(Finding::at(
                        FindingKind::NegativeCost,
                        i,
                        u,
                        v,
                        c,
                        format!("c({i},{u},{v}) = {c} < 0"),
                    ));
                }
            }
        }
    }

    if let Some(ly) = model.lyapunov() {
        for (i, &lw) in ly.log_w.iter().enumerate() {
            if !(lw >= 0.0) {
                rep.violations.push(Finding {
                    kind: FindingKind::LyapunovBelowOne,
                    i: Some(i),
                    u: None,
                    v: None,
                    j: None,
                    value: Some(lw.exp()),
                    message: format!("W({i}) = {} < 1", lw.exp()),
                });
            }
        }
        if !(ly.c > 0.0) {
            rep.violations.push(Finding::global(
                FindingKind::LyapunovInvalidConstant,
                Some(ly.c),
                format!("C = {} must be > 0", ly.c),
            ));
        }
        let bad_rate = match &ly.bound {
            DriftBound::Gamma(g) => !(*g > 0.0),
            DriftBound::Ell(l) => l.iter().any(|&x| !(x >= 0.0)),
        };
        if bad_rate {
            rep.violations.push(Finding::global(
                FindingKind::LyapunovInvalidRate,
                None,
                "gamma must be > 0 and ell must be nonnegative".into(),
            ));
        }
    }
    rep
}

/// Finite-window surrogate for a norm-like function: `f` must be eventually
/// nondecreasing and its last value must exceed every value before the tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormLikeCheck {
    pub pass: bool,
    /// First index of the nondecreasing tail.
    pub tail_start: Option<usize>,
    pub note: String,
}

impl NormLikeCheck {
    pub fn surrogate(f: &[f64]) -> Self {
        let n = f.len();
        if n < 2 {
            return Self {
                pass: false,
                tail_start: None,
                note: "window too short to observe growth".into(),
            };
        }
        let mut k = 0;
        for i in 0..n - 1 {
            if f[i + 1] < f[i] {
                k = i + 1;
            }
        }
        let head_max = f[..=k].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pass = k + 1 < n && f[n - 1] > head_max;
        let note = if pass {
            format!("nondecreasing from index {k} and escapes all earlier levels (window surrogate only)")
        } else if k + 1 >= n {
            "still decreasing at the window edge".to_string()
        } else {
            format!("nondecreasing from index {k} but does not grow past earlier levels")
        };
        Self { pass, tail_start: Some(k), note }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    /// `"gamma"` (bounded cost) or `"ell"` (unbounded cost).
    pub case: String,
    /// Per state: `ln(C·1_K(i) + e^{-rate(i)} W(i)) - ln max_{u,v} Σ_j W(j) P(j|i,u,v)`.
    pub slack: Vec<f64>,
    pub worst_slack: f64,
    pub worst_state: usize,
    pub drift_pass: bool,
    /// Norm-like surrogate for `ell - max c` (case ell), or `gamma > sup c` (case gamma).
    pub cost_condition: NormLikeCheck,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LyapunovError {
    #[error("model carries no Lyapunov data")]
    MissingLyapunovData,
}

/// `ln Σ_j W(j) P(j|i,u,v)` for one row.
pub(crate) fn log_drift(log_w: &[f64], row: &[(usize, f64)]) -> f64 {
    let terms: Vec<f64> = row
        .iter()
        .filter(|&&(_, p)| p > 0.0)
        .map(|&(j, p)| p.ln() + log_w[j])
        .collect();
    log_sum_exp(&terms)
}

pub(crate) fn max_log_drift(model: &GameModel, log_w: &[f64], i: usize) -> f64 {
    model.kernel(i).rows().iter().map(|r| log_drift(log_w, r)).fold(f64::NEG_INFINITY, f64::max)
}

pub fn check_lyapunov(model: &GameModel) -> Result<LyapunovReport, LyapunovError> {
    let ly = model.lyapunov().ok_or(LyapunovError::MissingLyapunovData)?;
    let n = model.states();
    let log_c = ly.c.ln();
    let slack: Vec<f64> = (0..n)
        .map(|i| {
            let lhs = max_log_drift(model, &ly.log_w, i);
            let mut rhs = ly.log_w[i] - ly.bound.rate(i);
            if ly.in_k(i) {
                rhs = log_add_exp(rhs, log_c);
            }
            if lhs == f64::NEG_INFINITY {
                f64::INFINITY
            } else {
                rhs - lhs
            }
        })
        .collect();
    let (worst_state, worst_slack) = slack
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, s)| if s < acc.1 { (i, s) } else { acc });
    let drift_pass = worst_slack >= -LYAPUNOV_PASS_TOL;

    let max_cost: Vec<f64> = (0..n).map(|i| model.kernel(i).max_cost()).collect();
    let (case, cost_condition) = match &ly.bound {
        DriftBound::Gamma(g) => {
            let sup = max_cost.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (
                "gamma",
                NormLikeCheck {
                    pass: *g > sup,
                    tail_start: None,
                    note: format!("bounded-cost case: gamma = {g} vs sup c = {sup}"),
                },
            )
        }
        DriftBound::Ell(l) => {
            let f: Vec<f64> = l.iter().zip(&max_cost).map(|(a, b)| a - b).collect();
            ("ell", NormLikeCheck::surrogate(&f))
        }
    };
    let pass = drift_pass && cost_condition.pass;
    Ok(LyapunovReport {
        case: case.to_string(),
        slack,
        worst_slack,
        worst_state,
        drift_pass,
        cost_condition,
        pass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum IrreducibilityMode {
    /// Strong connectivity of `i -> j iff min_{u,v} P(j|i,u,v) > 0`.
    Sufficient,
    /// Strong connectivity under randomly sampled pure stationary pairs.
    Sampled { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrreducibilityReport {
    pub mode: IrreducibilityMode,
    pub pass: bool,
    pub guarantee: String,
    /// A pure pair `(u(i), v(i))` whose chain is reducible, if one was found.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failing_pair: Option<(Vec<usize>, Vec<usize>)>,
}

fn strongly_connected(n: usize, edge: impl Fn(usize, usize) -> bool) -> bool {
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(a) = stack.pop() {
            for b in 0..n {
                let e = if forward { edge(a, b) } else { edge(b, a) };
                if e && !seen[b] {
                    seen[b] = true;
                    stack.push(b);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    n == 0 || (reach(true) && reach(false))
}

fn dense_support(model: &GameModel, pick: impl Fn(usize) -> Vec<(usize, usize)>) -> Vec<Vec<bool>> {
    let n = model.states();
    (0..n)
        .map(|i| {
            let k = model.kernel(i);
            let pairs = pick(i);
            (0..n)
                .map(|j| {
                    pairs.iter().all(|&(u, v)| {
                        k.row(u, v).iter().any(|&(jj, p)| jj == j && p > 0.0)
                    })
                })
                .collect()
        })
        .collect()
}

pub fn check_irreducibility(model: &GameModel, mode: IrreducibilityMode) -> IrreducibilityReport {
    let n = model.states();
    match mode {
        IrreducibilityMode::Sufficient => {
            let g = dense_support(model, |i| {
                let k = model.kernel(i);
                (0..k.n_u()).flat_map(|u| (0..k.n_v()).map(move |v| (u, v))).collect()
            });
            let pass = strongly_connected(n, |a, b| g[a][b]);
            IrreducibilityReport {
                mode,
                pass,
                guarantee: if pass {
                    "irreducible under every stationary strategy pair (sufficient condition holds)"
                } else {
                    "sufficient condition not met; no conclusion about every strategy pair"
                }
                .into(),
                failing_pair: None,
            }
        }
        IrreducibilityMode::Sampled { samples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..samples {
                let us: Vec<usize> =
                    (0..n).map(|i| rng.random_range(0..model.kernel(i).n_u())).collect();
                let vs: Vec<usize> =
                    (0..n).map(|i| rng.random_range(0..model.kernel(i).n_v())).collect();
                let g = dense_support(model, |i| vec![(us[i], vs[i])]);
                if !strongly_connected(n, |a, b| g[a][b]) {
                    return IrreducibilityReport {
                        mode,
                        pass: false,
                        guarantee: "falsified: a pure stationary pair yields a reducible chain".into(),
                        failing_pair: Some((us, vs)),
                    };
                }
            }
            IrreducibilityReport {
                mode,
                pass: true,
                guarantee: format!("no reducible pair among {samples} sampled pure stationary pairs"),
                failing_pair: None,
            }
        }
    }
}

/// True iff every pure pair at `i0` puts positive mass on every other state.
pub fn check_reference_state(model: &GameModel) -> bool {
    let i0 = model.i0();
    if i0 >= model.states() {
        return false;
    }
    let k = model.kernel(i0);
    k.rows().iter().all(|row| {
        (0..model.states())
            .filter(|&j| j != i0)
            .all(|j| row.iter().any(|&(jj, p)| jj == j && p > 0.0))
    })
}
