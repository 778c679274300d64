//! Truncation ladder, limiting eigenpair, mini-max selectors and the Shapley
//! residual.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dirichlet::{dirichlet_eigenpair_from, DirichletDomain, DirichletError, EigenPair, PowerOptions};
use crate::localgame::{LocalGame, SaddleOptions};
use crate::model::{max_log_drift, DriftBound, GameModel, StationaryStrategy};

pub const DEFAULT_TOL_OUTER: f64 = 1e-6;
/// One-step mass leaving the final domain above which truncation is suspect.
pub const BOUNDARY_MASS_WARN: f64 = 1e-6;
/// First rung of the default doubling ladder.
pub const DEFAULT_FIRST_RUNG: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShapleyError {
    #[error("rung {rung} (|D| = {size}): {source}")]
    Rung { rung: usize, size: usize, source: DirichletError },
    #[error("invalid ladder: {0}")]
    InvalidLadder(String),
    #[error("model is not uncontrolled: state {state} has more than one action")]
    NotUncontrolled { state: usize },
    #[error("selector at state {state} did not certify (gap {gap:e})")]
    Selector { state: usize, gap: f64 },
    #[error(transparent)]
    Domain(#[from] DirichletError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol_local: f64,
    pub tol_eig: f64,
    pub tol_outer: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol_local: crate::localgame::DEFAULT_LOCAL_TOL,
            tol_eig: crate::dirichlet::DEFAULT_EIG_TOL,
            tol_outer: DEFAULT_TOL_OUTER,
            max_iter: crate::dirichlet::DEFAULT_MAX_ITER,
        }
    }
}

/// Default ladder: 10, 20, 40, ... capped by the window, ending at the window.
pub fn default_ladder(window: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut n = DEFAULT_FIRST_RUNG.min(window);
    while n < window {
        out.push(n);
        n *= 2;
    }
    out.push(window);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LadderStatus {
    /// Two consecutive rungs agreed in ρ and ψ.
    Converged,
    /// The final rung is the whole window of a closed model, so nothing is truncated.
    WindowExact,
    /// The outer criterion was never met; the report is not certified.
    LadderExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRung {
    pub n: usize,
    pub domain_size: usize,
    pub rho_n: f64,
    pub bracket_width: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selectors {
    pub p1: StationaryStrategy,
    pub p2: StationaryStrategy,
    /// Certified local gap per window state.
    pub gaps: Vec<f64>,
    /// True iff every gap is within the local tolerance.
    pub certified: bool,
    /// States where ψ vanishes on the whole one-step support; their
    /// selectors come from the cost-only game (ψ ≡ 1).
    pub fallback_states: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovBound {
    pub k1: f64,
    pub k2: f64,
    pub bound: f64,
    /// `-tol <= ρ_n <= k1 + k2 + tol` held on every rung.
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub total_iterations: usize,
    pub damped_steps: usize,
    /// Largest one-step mass leaving the final domain.
    pub boundary_mass: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub tol_local: f64,
    pub tol_eig: f64,
    pub tol_outer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: LadderStatus,
    pub certified: bool,
    pub ladder: Vec<LadderRung>,
    pub rho_star: f64,
    #[serde(with = "crate::report::vec_f64_or_null")]
    pub log_psi_star: Vec<f64>,
    pub psi_star: Vec<f64>,
    pub domain: Vec<usize>,
    pub bracket: [f64; 2],
    pub residual: f64,
    pub selectors: Selectors,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<LyapunovBound>,
    pub diagnostics: Diagnostics,
    pub tolerances: Tolerances,
}

impl SolveReport {
    /// Ladder trace as CSV with header `n,domain_size,rho_n,bracket_width,iterations`.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("n,domain_size,rho_n,bracket_width,iterations\n");
        for r in &self.ladder {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.n,
                r.domain_size,
                crate::report::full(r.rho_n),
                crate::report::full(r.bracket_width),
                r.iterations
            ));
        }
        s
    }
}

/// `k1 + k2` from the drift data: `J ≤ k1 + k2` for every strategy pair.
pub fn lyapunov_bound(model: &GameModel) -> Option<(f64, f64)> {
    let ly = model.lyapunov()?;
    match &ly.bound {
        // Bounded costs: γ̃ > sup c bounds the criterion outright.
        DriftBound::Gamma(g) => Some((*g, 0.0)),
        DriftBound::Ell(ell) => {
            let n = model.states();
            let k1 = (0..n)
                .map(|i| ell[i] + max_log_drift(model, &ly.log_w, i) - ly.log_w[i])
                .fold(f64::NEG_INFINITY, f64::max);
            let k2 = (0..n).map(|i| model.kernel(i).max_cost() - ell[i]).fold(f64::NEG_INFINITY, f64::max);
            Some((k1, k2))
        }
    }
}

/// `max_{i∈D} |log Gψ(i) - ρ - log ψ(i)|` with ψ = 0 outside `D`.
pub fn residual(model: &GameModel, rho: f64, log_psi: &[f64], domain: &DirichletDomain) -> f64 {
    let g = crate::dirichlet::apply_operator(model, domain, log_psi);
    domain
        .states()
        .iter()
        .map(|&i| {
            let (a, b) = (g[i], log_psi[i]);
            if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
                0.0
            } else {
                (a - rho - b).abs()
            }
        })
        .fold(0.0, f64::max)
}

fn selectors_inner(
    model: &GameModel,
    log_psi: &[f64],
    domain: &DirichletDomain,
    opts: &SaddleOptions,
) -> (Selectors, Option<(usize, f64)>) {
    let inside = domain.restrict(log_psi);
    let ones = vec![0.0; model.states()];
    let sols: Vec<(crate::localgame::LocalSaddle, bool)> = (0..model.states())
        .into_par_iter()
        .map(|i| {
            let g = LocalGame::new(model, i, &inside);
            let s = g.solve(opts);
            if s.log_value == f64::NEG_INFINITY && !domain.contains(i) {
                (LocalGame::new(model, i, &ones).solve(opts), true)
            } else {
                (s, false)
            }
        })
        .collect();
    let mut p1 = Vec::with_capacity(sols.len());
    let mut p2 = Vec::with_capacity(sols.len());
    let mut gaps = Vec::with_capacity(sols.len());
    let mut fallback_states = Vec::new();
    let mut first_bad = None;
    for (i, (s, fb)) in sols.into_iter().enumerate() {
        if fb {
            fallback_states.push(i);
        }
        if s.gap > opts.tol && first_bad.is_none() {
            first_bad = Some((i, s.gap));
        }
        gaps.push(s.gap);
        p1.push(s.mu);
        p2.push(s.nu);
    }
    let sel = Selectors {
        p1: StationaryStrategy::new(p1),
        p2: StationaryStrategy::new(p2),
        gaps,
        certified: first_bad.is_none(),
        fallback_states,
    };
    (sel, first_bad)
}

/// Mini-max selectors from the local saddles of `log ψ` at every window state.
pub fn extract_selectors(
    model: &GameModel,
    log_psi: &[f64],
    domain: &DirichletDomain,
    opts: &SaddleOptions,
) -> Result<(StationaryStrategy, StationaryStrategy), ShapleyError> {
    let (sel, bad) = selectors_inner(model, log_psi, domain, opts);
    match bad {
        Some((state, gap)) => Err(ShapleyError::Selector { state, gap }),
        None => Ok((sel.p1, sel.p2)),
    }
}

/// Same as [`extract_selectors`] but keeps the best uncertified pair and reports the gaps.
pub fn extract_selectors_report(
    model: &GameModel,
    log_psi: &[f64],
    domain: &DirichletDomain,
    opts: &SaddleOptions,
) -> Selectors {
    selectors_inner(model, log_psi, domain, opts).0
}

/// Runs the ladder and assembles the report.
pub fn solve_ergodic_game(
    model: &GameModel,
    ladder: &[usize],
    opts: &SolveOptions,
) -> Result<SolveReport, ShapleyError> {
    let window = model.states();
    if ladder.is_empty() {
        return Err(ShapleyError::InvalidLadder("empty ladder".into()));
    }
    if ladder.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ShapleyError::InvalidLadder("sizes must be strictly increasing".into()));
    }
    if let Some(&bad) = ladder.iter().find(|&&n| n == 0 || n > window) {
        return Err(ShapleyError::InvalidLadder(format!("size {bad} outside 1..={window}")));
    }

    let power = PowerOptions { tol: opts.tol_eig, max_iter: opts.max_iter };
    let mut warnings = Vec::new();
    let mut trace = Vec::new();
    let mut prev: Option<(DirichletDomain, EigenPair)> = None;
    let mut status = LadderStatus::LadderExhausted;
    let mut total_iterations = 0;
    let mut damped_steps = 0;
    let mut init = vec![0.0; window];

    for (r, &size) in ladder.iter().enumerate() {
        let domain = DirichletDomain::nearest(model, size)?;
        let pair = dirichlet_eigenpair_from(model, &domain, &init, &power)
            .map_err(|source| ShapleyError::Rung { rung: r + 1, size, source })?;
        total_iterations += pair.iterations;
        damped_steps += pair.damped_steps;
        trace.push(LadderRung {
            n: r + 1,
            domain_size: domain.len(),
            rho_n: pair.rho,
            bracket_width: pair.bracket_width(),
            iterations: pair.iterations,
        });
        if pair.rho < -opts.tol_eig {
            warnings.push(format!("rung {}: rho_n = {} is negative", r + 1, pair.rho));
        }
        init = pair.log_psi.clone();

        let agreed = prev.as_ref().is_some_and(|(d_prev, p_prev)| {
            let drho = (pair.rho - p_prev.rho).abs();
            let dpsi = d_prev
                .states()
                .iter()
                .map(|&i| (pair.log_psi[i] - p_prev.log_psi[i]).abs())
                .fold(0.0, f64::max);
            drho <= opts.tol_outer && dpsi <= opts.tol_outer
        });
        prev = Some((domain, pair));
        if agreed {
            status = LadderStatus::Converged;
            break;
        }
    }
    let (domain, pair) = prev.expect("ladder has at least one rung");
    if status == LadderStatus::LadderExhausted && domain.len() == window && model.is_closed() {
        status = LadderStatus::WindowExact;
    }
    if status == LadderStatus::LadderExhausted {
        warnings.push("outer ladder criterion not met at the last rung; result is not certified".into());
    }

    let boundary_mass = domain
        .states()
        .iter()
        .flat_map(|&i| model.kernel(i).rows().iter())
        .map(|row| {
            let kept: f64 = row.iter().filter(|&&(j, _)| domain.contains(j)).map(|&(_, p)| p).sum();
            (1.0 - kept).max(0.0)
        })
        .fold(0.0, f64::max);
    if boundary_mass >= BOUNDARY_MASS_WARN && status != LadderStatus::WindowExact {
        warnings.push(format!("final domain loses up to {boundary_mass:e} of one-step mass; truncation suspect"));
    }

    let local = SaddleOptions { tol: opts.tol_local, ..SaddleOptions::default() };
    let selectors = extract_selectors_report(model, &pair.log_psi, &domain, &local);
    if !selectors.certified {
        let worst = selectors.gaps.iter().copied().fold(0.0, f64::max);
        warnings.push(format!("selectors not certified: largest local gap {worst:e} exceeds {:e}", opts.tol_local));
    }
    if !selectors.fallback_states.is_empty() {
        warnings.push(format!(
            "{} states outside the final domain use cost-only selectors",
            selectors.fallback_states.len()
        ));
    }

    let res = residual(model, pair.rho, &pair.log_psi, &domain);
    let bounds = lyapunov_bound(model).map(|(k1, k2)| {
        let bound = k1 + k2;
        let pass = trace.iter().all(|r| r.rho_n >= -1e-6 && r.rho_n <= bound + 1e-6);
        if !pass {
            warnings.push(format!("a rung violates -1e-6 <= rho_n <= k1 + k2 + 1e-6 = {}", bound + 1e-6));
        }
        LyapunovBound { k1, k2, bound, pass }
    });

    let certified = status != LadderStatus::LadderExhausted;
    Ok(SolveReport {
        status,
        certified,
        ladder: trace,
        rho_star: pair.rho,
        psi_star: pair.psi.clone(),
        log_psi_star: pair.log_psi.clone(),
        domain: domain.states().to_vec(),
        bracket: pair.bracket,
        residual: res,
        selectors,
        bounds,
        diagnostics: Diagnostics { total_iterations, damped_steps, boundary_mass, warnings },
        tolerances: Tolerances { tol_local: opts.tol_local, tol_eig: opts.tol_eig, tol_outer: opts.tol_outer },
    })
}

/// Log spectral radius of `M(i,j) = e^{c(i)} P(i,j)` by dense power
/// iteration on the shifted matrix `M/s + I`.
pub fn uncontrolled_eigen_oracle(model: &GameModel) -> Result<f64, ShapleyError> {
    let n = model.states();
    if let Some(state) = (0..n).find(|&i| model.kernel(i).n_u() > 1 || model.kernel(i).n_v() > 1) {
        return Err(ShapleyError::NotUncontrolled { state });
    }
    let mut m = vec![vec![0.0; n]; n];
    let cmax = (0..n).map(|i| model.kernel(i).cost(0, 0)).fold(f64::NEG_INFINITY, f64::max);
    for (i, row) in m.iter_mut().enumerate() {
        let k = model.kernel(i);
        let w = (k.cost(0, 0) - cmax).exp();
        for &(j, p) in k.row(0, 0) {
            row[j] = w * p;
        }
    }
    let s = m.iter().map(|r| r.iter().sum::<f64>()).fold(0.0, f64::max);
    if s == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    for (i, row) in m.iter_mut().enumerate() {
        for x in row.iter_mut() {
            *x /= s;
        }
        row[i] += 1.0;
    }
    let mut x = vec![1.0; n];
    let mut est = 1.0;
    for _ in 0..1_000_000 {
        let y: Vec<f64> = m.iter().map(|r| r.iter().zip(&x).map(|(a, b)| a * b).sum()).collect();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for (a, b) in y.iter().zip(&x) {
            if *b > 0.0 {
                lo = lo.min(a / b);
                hi = hi.max(a / b);
            }
        }
        est = 0.5 * (lo + hi);
        let top = y.iter().copied().fold(0.0, f64::max);
        x = y.iter().map(|v| v / top).collect();
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(((est - 1.0) * s).ln() + cmax)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelBuilder;

    fn two_state() -> GameModel {
        GameModel::uncontrolled(&[vec![0.5, 0.5], vec![0.5, 0.5]], &[0.0, 2f64.ln()]).unwrap()
    }

    #[test]
    fn default_ladder_doubles_to_window() {
        assert_eq!(default_ladder(60), vec![10, 20, 40, 60]);
        assert_eq!(default_ladder(5), vec![5]);
        assert_eq!(default_ladder(10), vec![10]);
    }

    #[test]
    fn zero_cost_closed_model() {
        let p = vec![vec![0.25; 4]; 4];
        let mut b = ModelBuilder::new(4).closed(true);
        for (i, r) in p.iter().enumerate() {
            b = b.dense_row(i, 0, 0, r).cost(i, 0, 0, 0.0);
        }
        let m = b.build().unwrap();
        let r = solve_ergodic_game(&m, &[2, 4], &SolveOptions::default()).unwrap();
        assert!(r.rho_star.abs() < 1e-9);
        assert!(r.log_psi_star.iter().all(|x| x.abs() < 1e-8));
        assert!(r.residual < 1e-8);
    }

    #[test]
    fn two_state_rho_is_log_three_halves() {
        let r = solve_ergodic_game(&two_state(), &[2], &SolveOptions::default()).unwrap();
        assert!((r.rho_star - 1.5f64.ln()).abs() < 1e-8);
        assert!(r.residual <= 1e-8);
        assert_eq!(r.selectors.p1.weights, vec![vec![1.0], vec![1.0]]);
    }

    #[test]
    fn residual_detects_perturbation() {
        let m = two_state();
        let r = solve_ergodic_game(&m, &[2], &SolveOptions::default()).unwrap();
        let d = DirichletDomain::whole(&m).unwrap();
        let mut lp = r.log_psi_star.clone();
        lp[1] += 0.1;
        let res = residual(&m, r.rho_star, &lp, &d);
        // Gψ(1) moves by ln(1 + (e^0.1 - 1)·2/3) while log ψ(1) moves by 0.1.
        assert!(res > 0.03);
    }

    #[test]
    fn scalar_residual_is_zero() {
        let m = ModelBuilder::new(1).transition(0, 0, 0, 0, 0.5).cost(0, 0, 0, 0.2).build().unwrap();
        let d = DirichletDomain::whole(&m).unwrap();
        assert!(residual(&m, 0.2 + 0.5f64.ln(), &[0.0], &d) < 1e-12);
    }

    #[test]
    fn oracle_identity_chain() {
        let m = GameModel::uncontrolled(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.7, 0.7]).unwrap();
        assert!((uncontrolled_eigen_oracle(&m).unwrap() - 0.7).abs() < 1e-14);
        assert!((uncontrolled_eigen_oracle(&two_state()).unwrap() - 1.5f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn oracle_rejects_controlled_model() {
        let m = ModelBuilder::new(1)
            .action_counts(0, 2, 1)
            .transition(0, 0, 0, 0, 1.0)
            .transition(0, 1, 0, 0, 1.0)
            .cost(0, 0, 0, 1.0)
            .cost(0, 1, 0, 2.0)
            .build()
            .unwrap();
        assert_eq!(uncontrolled_eigen_oracle(&m), Err(ShapleyError::NotUncontrolled { state: 0 }));
    }

    #[test]
    fn invalid_ladders() {
        let m = two_state();
        let o = SolveOptions::default();
        assert!(matches!(solve_ergodic_game(&m, &[], &o), Err(ShapleyError::InvalidLadder(_))));
        assert!(matches!(solve_ergodic_game(&m, &[2, 1], &o), Err(ShapleyError::InvalidLadder(_))));
        assert!(matches!(solve_ergodic_game(&m, &[3], &o), Err(ShapleyError::InvalidLadder(_))));
    }

    #[test]
    fn trace_csv_header() {
        let r = solve_ergodic_game(&two_state(), &[1, 2], &SolveOptions::default()).unwrap();
        let csv = r.trace_csv();
        assert!(csv.starts_with("n,domain_size,rho_n,bracket_width,iterations\n"));
        assert_eq!(csv.lines().count(), 1 + r.ladder.len());
    }
}
