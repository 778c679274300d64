//! Forward simulation of the controlled chain, the fixed-horizon
//! risk-sensitive cost estimator, and the two statistical verifiers.
//!
//! Every path draws from its own ChaCha8 stream keyed by `(seed, path index)`,
//! so results do not depend on the number of worker threads. Reductions over
//! paths run in a fixed pairwise order.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{action_count, GameModel, Player, StationaryStrategy, StrategyError};
use crate::numeric::{mean_std, pairwise_sum};
use crate::shapley::SolveReport;

/// Exit mass below this counts as a closed model.
pub const EXIT_MASS_TOL: f64 = 1e-12;
/// Absolute slack added to every statistical comparison to absorb rounding.
pub const ABS_FLOOR: f64 = 1e-12;
/// Default cap on first-entry times.
pub const DEFAULT_HIT_CAP: usize = 1_000_000;
/// Representation verdicts with more capped paths than this fraction are inconclusive.
pub const CAP_FRACTION_LIMIT: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MonteCarloError {
    #[error("model loses up to {exit_mass:e} of mass per step; request absorbing handling to simulate it")]
    OpenModel { exit_mass: f64 },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("{player:?} strategy: {source}")]
    Strategy { player: Player, source: StrategyError },
}

/// Replacement of one player's action distribution on a set of states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub player: Player,
    pub states: Vec<usize>,
    /// `weights[k]` replaces the distribution at `states[k]`.
    pub weights: Vec<Vec<f64>>,
}

impl Deviation {
    /// Deviation to a full stationary strategy.
    pub fn whole(player: Player, strategy: &StationaryStrategy) -> Self {
        Self {
            player,
            states: (0..strategy.weights.len()).collect(),
            weights: strategy.weights.clone(),
        }
    }

    fn apply(&self, pi1: &StationaryStrategy, pi2: &StationaryStrategy) -> (StationaryStrategy, StationaryStrategy) {
        let (mut a, mut b) = (pi1.clone(), pi2.clone());
        let target = match self.player {
            Player::P1 => &mut a,
            Player::P2 => &mut b,
        };
        for (&s, w) in self.states.iter().zip(&self.weights) {
            if s < target.weights.len() {
                target.weights[s] = w.clone();
            }
        }
        (a, b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: usize,
    pub paths: usize,
    pub seed: u64,
    pub start: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deviation: Option<Deviation>,
    /// Kill paths that leave the window instead of rejecting open models.
    #[serde(default)]
    pub absorb_exits: bool,
    /// Cap on first-entry times for the representation check.
    #[serde(default = "default_cap")]
    pub hit_cap: usize,
}

fn default_cap() -> usize {
    DEFAULT_HIT_CAP
}

impl SimConfig {
    pub fn new(horizon: usize, paths: usize, seed: u64, start: usize) -> Self {
        Self { horizon, paths, seed, start, deviation: None, absorb_exits: false, hit_cap: DEFAULT_HIT_CAP }
    }

    fn check(&self, model: &GameModel) -> Result<(), MonteCarloError> {
        if self.horizon == 0 {
            return Err(MonteCarloError::InvalidConfig("horizon must be at least 1".into()));
        }
        if self.paths == 0 {
            return Err(MonteCarloError::InvalidConfig("paths must be at least 1".into()));
        }
        if self.start >= model.states() {
            return Err(MonteCarloError::InvalidConfig(format!("start state {} outside the window", self.start)));
        }
        let exit_mass = model.max_exit_mass();
        if exit_mass >= EXIT_MASS_TOL && !self.absorb_exits {
            return Err(MonteCarloError::OpenModel { exit_mass });
        }
        Ok(())
    }
}

/// Cumulative tables for fast sampling.
struct Sampler {
    n_v: Vec<usize>,
    mu: Vec<Vec<f64>>,
    nu: Vec<Vec<f64>>,
    /// `rows[i][u * n_v + v]`: cumulative `(j, F)` pairs.
    rows: Vec<Vec<Vec<(usize, f64)>>>,
    cost: Vec<Vec<f64>>,
}

fn cumulative(w: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    w.iter()
        .map(|&x| {
            acc += x;
            acc
        })
        .collect()
}

fn pick(cum: &[f64], r: f64) -> usize {
    // Lowest index whose cumulative weight exceeds r; rounding slack goes to the last positive entry.
    match cum.iter().position(|&c| r < c) {
        Some(k) => k,
        None => cum.iter().rposition(|&c| c > 0.0).unwrap_or(0),
    }
}

impl Sampler {
    fn new(model: &GameModel, pi1: &StationaryStrategy, pi2: &StationaryStrategy) -> Self {
        let n = model.states();
        Self {
            n_v: (0..n).map(|i| model.kernel(i).n_v()).collect(),
            mu: pi1.weights.iter().map(|w| cumulative(w)).collect(),
            nu: pi2.weights.iter().map(|w| cumulative(w)).collect(),
            rows: (0..n)
                .map(|i| {
                    model
                        .kernel(i)
                        .rows()
                        .iter()
                        .map(|r| {
                            let mut acc = 0.0;
                            r.iter()
                                .map(|&(j, p)| {
                                    acc += p;
                                    (j, acc)
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect(),
            cost: model.cost_table(),
        }
    }

    fn rng(seed: u64, path: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path as u64);
        rng
    }

    /// One transition: returns `(u, v, cost, next)` with `next = None` on exit.
    #[inline]
    fn step(&self, rng: &mut ChaCha8Rng, i: usize) -> (usize, usize, f64, Option<usize>) {
        let u = pick(&self.mu[i], rng.random::<f64>());
        let v = pick(&self.nu[i], rng.random::<f64>());
        let a = u * self.n_v[i] + v;
        let r: f64 = rng.random();
        let row = &self.rows[i][a];
        let next = match row.iter().find(|&&(_, c)| r < c) {
            Some(&(j, _)) => Some(j),
            None => {
                let total = row.last().map_or(0.0, |&(_, c)| c);
                if total >= 1.0 - EXIT_MASS_TOL {
                    row.last().map(|&(j, _)| j)
                } else {
                    None
                }
            }
        };
        (u, v, self.cost[i][a], next)
    }
}

fn resolve(
    model: &GameModel,
    pi1: &StationaryStrategy,
    pi2: &StationaryStrategy,
    cfg: &SimConfig,
) -> Result<(StationaryStrategy, StationaryStrategy), MonteCarloError> {
    cfg.check(model)?;
    let (a, b) = match &cfg.deviation {
        Some(d) => d.apply(pi1, pi2),
        None => (pi1.clone(), pi2.clone()),
    };
    a.validate(model, Player::P1).map_err(|source| MonteCarloError::Strategy { player: Player::P1, source })?;
    b.validate(model, Player::P2).map_err(|source| MonteCarloError::Strategy { player: Player::P2, source })?;
    Ok((a, b))
}

/// One simulated trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub states: Vec<usize>,
    pub u: Vec<usize>,
    pub v: Vec<usize>,
    pub costs: Vec<f64>,
    pub total_cost: f64,
    /// Step at which the path left the window, if it did.
    pub killed_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathBatch {
    pub paths: Vec<PathRecord>,
}

impl PathBatch {
    /// CSV with header `path,step,state,u,v,cost`; one row per step.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "path,step,state,u,v,cost")?;
        for (p, rec) in self.paths.iter().enumerate() {
            for t in 0..rec.costs.len() {
                writeln!(
                    w,
                    "{p},{t},{},{},{},{}",
                    rec.states[t],
                    rec.u[t],
                    rec.v[t],
                    crate::report::full(rec.costs[t])
                )?;
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii csv")
    }
}

/// `N` paths of length `T` with θ-scaled per-step costs.
pub fn simulate_paths(
    model: &GameModel,
    pi1: &StationaryStrategy,
    pi2: &StationaryStrategy,
    cfg: &SimConfig,
) -> Result<PathBatch, MonteCarloError> {
    let (a, b) = resolve(model, pi1, pi2, cfg)?;
    let s = Sampler::new(model, &a, &b);
    let paths = (0..cfg.paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = Sampler::rng(cfg.seed, p);
            let mut rec = PathRecord {
                states: Vec::with_capacity(cfg.horizon),
                u: Vec::with_capacity(cfg.horizon),
                v: Vec::with_capacity(cfg.horizon),
                costs: Vec::with_capacity(cfg.horizon),
                total_cost: 0.0,
                killed_at: None,
            };
            let mut x = cfg.start;
            for t in 0..cfg.horizon {
                let (u, v, c, next) = s.step(&mut rng, x);
                rec.states.push(x);
                rec.u.push(u);
                rec.v.push(v);
                rec.costs.push(c);
                match next {
                    Some(j) => x = j,
                    None => {
                        rec.killed_at = Some(t + 1);
                        break;
                    }
                }
            }
            rec.total_cost = pairwise_sum(&rec.costs);
            rec
        })
        .collect();
    Ok(PathBatch { paths })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    /// `(1/T) ln((1/N) Σ_paths e^{Σ_t c})`; `-inf` if every path was killed.
    #[serde(with = "crate::report::f64_or_null")]
    pub estimate: f64,
    /// Standard deviation of the per-batch estimates over `√B`.
    pub spread: f64,
    pub batches: usize,
    pub paths: usize,
    pub horizon: usize,
    pub start: usize,
    /// Largest path exponent `Σ_t c`.
    #[serde(with = "crate::report::f64_or_null")]
    pub max_exponent: f64,
    /// True when `e^{max_exponent}` would overflow without the max shift.
    pub overflow_avoided: bool,
    pub killed_paths: usize,
}

/// Per-path running mean cost, `None` when the path is killed.
fn path_mean_cost(s: &Sampler, cfg: &SimConfig, p: usize) -> Option<f64> {
    let mut rng = Sampler::rng(cfg.seed, p);
    let mut x = cfg.start;
    let mut mean = 0.0;
    for t in 0..cfg.horizon {
        let (_, _, c, next) = s.step(&mut rng, x);
        // Running mean keeps a constant cost exactly constant.
        mean += (c - mean) / (t as f64 + 1.0);
        x = next?;
    }
    Some(mean)
}

/// `(1/T) ln mean_p e^{T m_p}` written around the largest mean.
fn log_mean_exp_scaled(means: &[Option<f64>], horizon: f64) -> f64 {
    let top = means.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let terms: Vec<f64> = means.iter().map(|m| m.map_or(0.0, |m| (horizon * (m - top)).exp())).collect();
    let mean = pairwise_sum(&terms) / means.len() as f64;
    top + mean.ln() / horizon
}

pub fn estimate_ergodic_cost(
    model: &GameModel,
    pi1: &StationaryStrategy,
    pi2: &StationaryStrategy,
    cfg: &SimConfig,
) -> Result<EstimatorReport, MonteCarloError> {
    let (a, b) = resolve(model, pi1, pi2, cfg)?;
    let s = Sampler::new(model, &a, &b);
    let means: Vec<Option<f64>> = (0..cfg.paths).into_par_iter().map(|p| path_mean_cost(&s, cfg, p)).collect();
    let horizon = cfg.horizon as f64;
    let estimate = log_mean_exp_scaled(&means, horizon);

    let n = cfg.paths;
    let batches = ((n as f64).sqrt().floor() as usize).max(1);
    let per_batch: Vec<f64> = (0..batches)
        .map(|k| {
            let (lo, hi) = (k * n / batches, (k + 1) * n / batches);
            log_mean_exp_scaled(&means[lo..hi], horizon)
        })
        .collect();
    let spread = if per_batch.iter().all(|x| x.is_finite()) {
        mean_std(&per_batch).1 / (batches as f64).sqrt()
    } else {
        f64::INFINITY
    };
    let top = means.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let max_exponent = top * horizon;
    Ok(EstimatorReport {
        estimate,
        spread,
        batches,
        paths: n,
        horizon: cfg.horizon,
        start: cfg.start,
        max_exponent,
        overflow_avoided: max_exponent > f64::MAX.ln(),
        killed_paths: means.iter().filter(|m| m.is_none()).count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationKind {
    Pure,
    Mixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationResult {
    pub player: Player,
    pub kind: DeviationKind,
    pub strategy: StationaryStrategy,
    pub estimate: EstimatorReport,
    /// `ρ* + 3·spread` for player 2, `ρ* - 3·spread` for player 1.
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleVerdict {
    pub pass: bool,
    pub rho_star: f64,
    pub baseline: EstimatorReport,
    pub baseline_pass: bool,
    pub deviations: Vec<DeviationResult>,
    pub notes: Vec<String>,
}

/// Stationary deviations for one player: every pure strategy when there are
/// at most `count` of them, then Dirichlet(1) mixtures up to `count`.
/// A player with a single action everywhere has no deviations.
pub fn deviation_set(model: &GameModel, player: Player, count: usize, seed: u64) -> Vec<(DeviationKind, StationaryStrategy)> {
    let n = model.states();
    let sizes: Vec<usize> = (0..n).map(|i| action_count(model, player, i)).collect();
    if sizes.iter().all(|&k| k == 1) || count == 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    let total = sizes.iter().try_fold(1usize, |acc, &k| acc.checked_mul(k));
    if let Some(total) = total.filter(|&t| t <= count) {
        let mut choice = vec![0usize; n];
        for _ in 0..total {
            out.push((DeviationKind::Pure, StationaryStrategy::pure(model, player, &choice)));
            for i in (0..n).rev() {
                choice[i] += 1;
                if choice[i] < sizes[i] {
                    break;
                }
                choice[i] = 0;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(match player {
        Player::P1 => 1,
        Player::P2 => 2,
    });
    while out.len() < count {
        let weights = sizes
            .iter()
            .map(|&k| {
                let e: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
                let s: f64 = e.iter().sum();
                let mut w: Vec<f64> = e.iter().map(|x| x / s).collect();
                // Close the simplex exactly on the last coordinate.
                let head: f64 = w[..k - 1].iter().sum();
                w[k - 1] = (1.0 - head).max(0.0);
                w
            })
            .collect();
        out.push((DeviationKind::Mixture, StationaryStrategy::new(weights)));
    }
    out
}

/// Saddle inequalities by simulation: the selector pair reproduces `ρ*` and
/// no sampled stationary deviation beats it beyond three spreads.
pub fn verify_saddle(
    model: &GameModel,
    report: &SolveReport,
    cfg: &SimConfig,
    deviations: usize,
) -> Result<SaddleVerdict, MonteCarloError> {
    let (pi1, pi2) = (&report.selectors.p1, &report.selectors.p2);
    let rho = report.rho_star;
    let mut notes = Vec::new();
    if !report.selectors.certified {
        notes.push("selectors carry an uncertified local gap".to_string());
    }
    if !report.certified {
        notes.push("solve report is not certified".to_string());
    }
    let base_cfg = SimConfig { deviation: None, ..cfg.clone() };
    let baseline = estimate_ergodic_cost(model, pi1, pi2, &base_cfg)?;
    let baseline_pass = (baseline.estimate - rho).abs() <= 3.0 * baseline.spread + ABS_FLOOR;

    let mut results = Vec::new();
    for player in [Player::P2, Player::P1] {
        for (kind, strat) in deviation_set(model, player, deviations, cfg.seed) {
            let (a, b) = match player {
                Player::P1 => (&strat, pi2),
                Player::P2 => (pi1, &strat),
            };
            let est = estimate_ergodic_cost(model, a, b, &base_cfg)?;
            let (bound, pass) = match player {
                Player::P2 => {
                    let bound = rho + 3.0 * est.spread;
                    (bound, est.estimate <= bound + ABS_FLOOR)
                }
                Player::P1 => {
                    let bound = rho - 3.0 * est.spread;
                    (bound, est.estimate >= bound - ABS_FLOOR)
                }
            };
            results.push(DeviationResult { player, kind, strategy: strat, estimate: est, bound, pass });
        }
    }
    let pass = baseline_pass && results.iter().all(|r| r.pass);
    Ok(SaddleVerdict { pass, rho_star: rho, baseline, baseline_pass, deviations: results, notes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationState {
    pub start: usize,
    pub psi: f64,
    pub estimate: f64,
    pub spread: f64,
    pub capped_paths: usize,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationVerdict {
    pub verdict: Verdict,
    pub target: Vec<usize>,
    pub states: Vec<RepresentationState>,
}

/// Checks `ψ*(i) = E_i[e^{Σ_{t<τ}(c - ρ*)} ψ*(X_τ)]`, `τ` the first entry
/// into `target`, under the selector pair, for each start outside `target`.
pub fn verify_stochastic_representation(
    model: &GameModel,
    report: &SolveReport,
    target: &[usize],
    starts: &[usize],
    cfg: &SimConfig,
) -> Result<RepresentationVerdict, MonteCarloError> {
    let n = model.states();
    if target.is_empty() || target.iter().any(|&b| b >= n) {
        return Err(MonteCarloError::InvalidConfig("target set must be a nonempty subset of the window".into()));
    }
    let mut in_target = vec![false; n];
    for &b in target {
        in_target[b] = true;
    }
    if let Some(&s) = starts.iter().find(|&&s| s >= n || in_target[s]) {
        return Err(MonteCarloError::InvalidConfig(format!("start state {s} must lie in the window outside the target")));
    }
    let probe = SimConfig { start: starts.first().copied().unwrap_or(0), deviation: None, ..cfg.clone() };
    let (pi1, pi2) = resolve(model, &report.selectors.p1, &report.selectors.p2, &probe)?;
    let s = Sampler::new(model, &pi1, &pi2);
    let rho = report.rho_star;
    let log_psi = &report.log_psi_star;

    let mut states = Vec::new();
    for &start in starts {
        // (value, capped)
        let draws: Vec<(f64, bool)> = (0..cfg.paths)
            .into_par_iter()
            .map(|p| {
                let mut rng = Sampler::rng(cfg.seed, p);
                let mut x = start;
                let mut expo = 0.0;
                for _ in 0..cfg.hit_cap {
                    let (_, _, c, next) = s.step(&mut rng, x);
                    expo += c - rho;
                    match next {
                        None => return (0.0, false),
                        Some(j) if in_target[j] => return ((expo + log_psi[j]).exp(), false),
                        Some(j) => x = j,
                    }
                }
                (0.0, true)
            })
            .collect();
        let capped = draws.iter().filter(|d| d.1).count();
        let kept: Vec<f64> = draws.iter().filter(|d| !d.1).map(|d| d.0).collect();
        let m = kept.len();
        let estimate = if m == 0 { f64::NAN } else { pairwise_sum(&kept) / m as f64 };
        let batches = ((m as f64).sqrt().floor() as usize).max(1);
        let means: Vec<f64> = (0..batches)
            .map(|k| {
                let (lo, hi) = (k * m / batches, (k + 1) * m / batches);
                pairwise_sum(&kept[lo..hi]) / (hi - lo).max(1) as f64
            })
            .collect();
        let spread = mean_std(&means).1 / (batches as f64).sqrt();
        let psi = log_psi[start].exp();
        let verdict = if capped as f64 > CAP_FRACTION_LIMIT * cfg.paths as f64 || m == 0 {
            Verdict::Inconclusive
        } else if (estimate - psi).abs() <= 3.0 * spread + ABS_FLOOR * psi.max(1.0) {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        states.push(RepresentationState { start, psi, estimate, spread, capped_paths: capped, verdict });
    }
    let verdict = if states.iter().any(|s| s.verdict == Verdict::Fail) {
        Verdict::Fail
    } else if states.iter().any(|s| s.verdict == Verdict::Inconclusive) {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    };
    Ok(RepresentationVerdict { verdict, target: target.to_vec(), states })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartComparison {
    pub first: EstimatorReport,
    pub second: EstimatorReport,
    /// `3·sqrt(spread_1² + spread_2²)`.
    pub tolerance: f64,
    pub pass: bool,
}

/// Estimates under the selector pair from two start states and compares them.
pub fn compare_start_states(
    model: &GameModel,
    report: &SolveReport,
    cfg: &SimConfig,
    a: usize,
    b: usize,
) -> Result<StartComparison, MonteCarloError> {
    let (pi1, pi2) = (&report.selectors.p1, &report.selectors.p2);
    let first = estimate_ergodic_cost(model, pi1, pi2, &SimConfig { start: a, ..cfg.clone() })?;
    let second = estimate_ergodic_cost(model, pi1, pi2, &SimConfig { start: b, ..cfg.clone() })?;
    let tolerance = 3.0 * first.spread.hypot(second.spread);
    let pass = (first.estimate - second.estimate).abs() <= tolerance + ABS_FLOOR;
    Ok(StartComparison { first, second, tolerance, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelBuilder;

    fn singletons(m: &GameModel) -> (StationaryStrategy, StationaryStrategy) {
        (StationaryStrategy::uniform(m, Player::P1), StationaryStrategy::uniform(m, Player::P2))
    }

    #[test]
    fn constant_cost_is_exact() {
        let kappa = 0.37;
        let m = GameModel::uncontrolled(&[vec![0.3, 0.7], vec![0.6, 0.4]], &[kappa, kappa]).unwrap();
        let (a, b) = singletons(&m);
        let r = estimate_ergodic_cost(&m, &a, &b, &SimConfig::new(333, 400, 9, 1)).unwrap();
        assert_eq!(r.estimate, kappa);
        assert_eq!(r.spread, 0.0);
    }

    #[test]
    fn single_step_single_state() {
        let m = GameModel::uncontrolled(&[vec![1.0]], &[0.3]).unwrap();
        let (a, b) = singletons(&m);
        let r = estimate_ergodic_cost(&m, &a, &b, &SimConfig::new(1, 10, 1, 0)).unwrap();
        assert_eq!(r.estimate, 0.3);
    }

    #[test]
    fn deterministic_chain_has_one_path() {
        let m = GameModel::uncontrolled(&[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]], &[1.0, 2.0, 3.0])
            .unwrap();
        let (a, b) = singletons(&m);
        for seed in [1, 2, 3] {
            let batch = simulate_paths(&m, &a, &b, &SimConfig::new(5, 2, seed, 0)).unwrap();
            for p in &batch.paths {
                assert_eq!(p.states, vec![0, 1, 2, 0, 1]);
                assert_eq!(p.total_cost, 9.0);
            }
        }
    }

    #[test]
    fn uniform_next_state_frequency() {
        let m = GameModel::uncontrolled(&[vec![0.5, 0.5], vec![0.5, 0.5]], &[0.0, 0.0]).unwrap();
        let (a, b) = singletons(&m);
        let n = 20_000;
        let batch = simulate_paths(&m, &a, &b, &SimConfig::new(2, n, 42, 0)).unwrap();
        let ones = batch.paths.iter().filter(|p| p.states[1] == 1).count() as f64;
        let sigma = (0.25 / n as f64).sqrt();
        assert!((ones / n as f64 - 0.5).abs() <= 3.0 * sigma);
    }

    #[test]
    fn same_seed_same_csv() {
        let m = GameModel::uncontrolled(&[vec![0.2, 0.8], vec![0.5, 0.5]], &[0.1, 0.4]).unwrap();
        let (a, b) = singletons(&m);
        let cfg = SimConfig::new(20, 30, 7, 0);
        let x = simulate_paths(&m, &a, &b, &cfg).unwrap().to_csv();
        let y = simulate_paths(&m, &a, &b, &cfg).unwrap().to_csv();
        assert_eq!(x, y);
        assert!(x.starts_with("path,step,state,u,v,cost\n"));
    }

    #[test]
    fn open_model_is_rejected_unless_absorbing() {
        let m = GameModel::uncontrolled(&[vec![0.5]], &[0.0]).unwrap();
        let (a, b) = singletons(&m);
        let cfg = SimConfig::new(10, 10, 1, 0);
        assert!(matches!(estimate_ergodic_cost(&m, &a, &b, &cfg), Err(MonteCarloError::OpenModel { .. })));
        let cfg = SimConfig { absorb_exits: true, ..cfg };
        let r = estimate_ergodic_cost(&m, &a, &b, &cfg).unwrap();
        assert!(r.killed_paths > 0);
    }

    #[test]
    fn large_exponents_do_not_overflow() {
        let m = GameModel::uncontrolled(&[vec![0.5, 0.5], vec![0.5, 0.5]], &[5.0, 10.0]).unwrap();
        let (a, b) = singletons(&m);
        let r = estimate_ergodic_cost(&m, &a, &b, &SimConfig::new(1000, 200, 3, 0)).unwrap();
        assert!(r.estimate.is_finite());
        assert!(r.max_exponent > 5000.0);
        assert!(r.overflow_avoided);
    }

    #[test]
    fn deviation_replaces_distribution() {
        let m = ModelBuilder::new(1)
            .action_counts(0, 2, 1)
            .transition(0, 0, 0, 0, 1.0)
            .transition(0, 1, 0, 0, 1.0)
            .cost(0, 0, 0, 1.0)
            .cost(0, 1, 0, 2.0)
            .build()
            .unwrap();
        let a = StationaryStrategy::pure(&m, Player::P1, &[0]);
        let b = StationaryStrategy::uniform(&m, Player::P2);
        let cfg = SimConfig {
            deviation: Some(Deviation { player: Player::P1, states: vec![0], weights: vec![vec![0.0, 1.0]] }),
            ..SimConfig::new(10, 5, 1, 0)
        };
        assert_eq!(estimate_ergodic_cost(&m, &a, &b, &cfg).unwrap().estimate, 2.0);
    }

    #[test]
    fn deviation_set_enumerates_pure_then_mixtures() {
        let m = ModelBuilder::new(1)
            .action_counts(0, 2, 1)
            .transition(0, 0, 0, 0, 1.0)
            .transition(0, 1, 0, 0, 1.0)
            .cost(0, 0, 0, 1.0)
            .cost(0, 1, 0, 2.0)
            .build()
            .unwrap();
        let set = deviation_set(&m, Player::P1, 4, 5);
        assert_eq!(set.len(), 4);
        assert_eq!(set[0].1.weights, vec![vec![1.0, 0.0]]);
        assert_eq!(set[1].1.weights, vec![vec![0.0, 1.0]]);
        assert_eq!(set[2].0, DeviationKind::Mixture);
        for (_, s) in &set {
            s.validate(&m, Player::P1).unwrap();
        }
        assert!(deviation_set(&m, Player::P2, 4, 5).is_empty());
    }
}
