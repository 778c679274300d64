//! Finite-domain problems with the absorbing (ψ = 0 outside) boundary: the
//! contractive source problem and the nonlinear Dirichlet eigenproblem.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::localgame::LocalGame;
use crate::model::GameModel;

pub const DEFAULT_EIG_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100_000;
/// Undamped steps before the half-step blend kicks in.
pub const DAMPING_AFTER: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DirichletError {
    #[error("domain is empty")]
    EmptyDomain,
    #[error("domain does not contain the reference state {0}")]
    MissingReference(usize),
    #[error("state {0} is outside the model window")]
    StateOutOfWindow(usize),
    #[error("ψ collapsed to zero at the reference state (iteration {iteration}); i0 is not reachable within the domain")]
    CollapseToZero { iteration: usize },
    #[error("power iteration stopped after {iterations} iterations with bracket [{lo}, {hi}]")]
    NoConvergence { iterations: usize, lo: f64, hi: f64, last: Box<EigenPair> },
    #[error("source problem needs max cbar < 0 on the domain, found {max}")]
    NotStrictlyNegative { max: f64 },
    #[error("source term is negative at state {state}")]
    NegativeSource { state: usize },
    #[error("input has {found} entries, expected {expected}")]
    ShapeMismatch { expected: usize, found: usize },
}

/// A finite set `D ⊆ window` containing the reference state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirichletDomain {
    states: Vec<usize>,
    mask: Vec<bool>,
}

impl DirichletDomain {
    pub fn new(model: &GameModel, states: &[usize]) -> Result<Self, DirichletError> {
        if states.is_empty() {
            return Err(DirichletError::EmptyDomain);
        }
        let n = model.states();
        let mut mask = vec![false; n];
        for &s in states {
            if s >= n {
                return Err(DirichletError::StateOutOfWindow(s));
            }
            mask[s] = true;
        }
        if model.i0() >= n || !mask[model.i0()] {
            return Err(DirichletError::MissingReference(model.i0()));
        }
        let states = (0..n).filter(|&i| mask[i]).collect();
        Ok(Self { states, mask })
    }

    pub fn whole(model: &GameModel) -> Result<Self, DirichletError> {
        let all: Vec<usize> = (0..model.states()).collect();
        Self::new(model, &all)
    }

    /// The `size` window states closest to `i0`, ties to the lower index.
    pub fn nearest(model: &GameModel, size: usize) -> Result<Self, DirichletError> {
        let i0 = model.i0();
        let mut order: Vec<usize> = (0..model.states()).collect();
        order.sort_by_key(|&i| (i.abs_diff(i0), i));
        order.truncate(size.min(model.states()));
        Self::new(model, &order)
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }
    pub fn len(&self) -> usize {
        self.states.len()
    }
    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
    pub fn contains(&self, i: usize) -> bool {
        self.mask.get(i).copied().unwrap_or(false)
    }
    pub fn window(&self) -> usize {
        self.mask.len()
    }

    /// `log ψ` with `-inf` forced outside the domain.
    pub fn restrict(&self, log_psi: &[f64]) -> Vec<f64> {
        log_psi.iter().enumerate().map(|(i, &x)| if self.mask[i] { x } else { f64::NEG_INFINITY }).collect()
    }
}

/// Eigenvalue and eigenfunction of one Dirichlet problem, ψ(i0) = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub rho: f64,
    /// ψ over the whole window, zero outside the domain.
    pub psi: Vec<f64>,
    #[serde(with = "crate::report::vec_f64_or_null")]
    pub log_psi: Vec<f64>,
    pub domain: Vec<usize>,
    /// Final Collatz–Wielandt bracket on `log Gψ - log ψ`.
    pub bracket: [f64; 2],
    pub iterations: usize,
    /// Number of half-step blended updates.
    pub damped_steps: usize,
}

impl EigenPair {
    fn new(rho: f64, log_psi: Vec<f64>, domain: &DirichletDomain, bracket: [f64; 2], iterations: usize, damped_steps: usize) -> Self {
        Self {
            rho,
            psi: log_psi.iter().map(|x| x.exp()).collect(),
            log_psi,
            domain: domain.states().to_vec(),
            bracket,
            iterations,
            damped_steps,
        }
    }

    pub fn bracket_width(&self) -> f64 {
        self.bracket[1] - self.bracket[0]
    }
}

/// `log Gψ(i)` on the domain (`-inf` elsewhere), with the Dirichlet boundary.
/// States are processed in parallel and collected in index order.
pub fn apply_operator(model: &GameModel, domain: &DirichletDomain, log_psi: &[f64]) -> Vec<f64> {
    let inside = domain.restrict(log_psi);
    let vals: Vec<f64> = domain
        .states()
        .par_iter()
        .map(|&i| LocalGame::new(model, i, &inside).lower_value())
        .collect();
    let mut out = vec![f64::NEG_INFINITY; model.states()];
    for (&i, v) in domain.states().iter().zip(vals) {
        out[i] = v;
    }
    out
}

/// Collatz–Wielandt bracket `[min, max]` of `log Gψ - log ψ` over the support of ψ in the domain.
pub fn collatz_wielandt(domain: &DirichletDomain, log_psi: &[f64], log_g: &[f64]) -> [f64; 2] {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &i in domain.states() {
        if log_psi[i] == f64::NEG_INFINITY {
            continue;
        }
        let r = log_g[i] - log_psi[i];
        lo = lo.min(r);
        hi = hi.max(r);
    }
    [lo, hi]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerOptions {
    /// Bracket width at which the iteration stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_EIG_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

/// Nonlinear power iteration from ψ ≡ 1 on the domain.
pub fn dirichlet_eigenpair(
    model: &GameModel,
    domain: &DirichletDomain,
    opts: &PowerOptions,
) -> Result<EigenPair, DirichletError> {
    dirichlet_eigenpair_from(model, domain, &vec![0.0; model.states()], opts)
}

/// Nonlinear power iteration warm-started from `init` (non-finite entries
/// inside the domain restart at ψ = 1).
pub fn dirichlet_eigenpair_from(
    model: &GameModel,
    domain: &DirichletDomain,
    init: &[f64],
    opts: &PowerOptions,
) -> Result<EigenPair, DirichletError> {
    let n = model.states();
    if init.len() != n {
        return Err(DirichletError::ShapeMismatch { expected: n, found: init.len() });
    }
    let i0 = model.i0();
    let mut log_psi: Vec<f64> = (0..n)
        .map(|i| {
            if !domain.contains(i) {
                f64::NEG_INFINITY
            } else if init[i].is_finite() {
                init[i]
            } else {
                0.0
            }
        })
        .collect();
    let base = log_psi[i0];
    log_psi.iter_mut().for_each(|x| *x -= base);

    let mut bracket = [f64::NEG_INFINITY, f64::INFINITY];
    let mut damped = 0;
    for k in 0..opts.max_iter {
        let g = apply_operator(model, domain, &log_psi);
        if g[i0] == f64::NEG_INFINITY {
            return Err(DirichletError::CollapseToZero { iteration: k });
        }
        bracket = collatz_wielandt(domain, &log_psi, &g);
        if bracket[1] - bracket[0] <= opts.tol {
            let rho = 0.5 * (bracket[0] + bracket[1]);
            return Ok(EigenPair::new(rho, log_psi, domain, bracket, k, damped));
        }
        let g0 = g[i0];
        let mut next: Vec<f64> = g.iter().map(|&x| x - g0).collect();
        if k >= DAMPING_AFTER {
            damped += 1;
            for (x, &old) in next.iter_mut().zip(&log_psi) {
                *x = if *x == f64::NEG_INFINITY || old == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    0.5 * (*x + old)
                };
            }
        }
        log_psi = next;
    }
    let rho = 0.5 * (bracket[0] + bracket[1]);
    let last = EigenPair::new(rho, log_psi, domain, bracket, opts.max_iter, damped);
    Err(DirichletError::NoConvergence {
        iterations: opts.max_iter,
        lo: bracket[0],
        hi: bracket[1],
        last: Box::new(last),
    })
}

/// Unique fixed point of `φ(i) = sup_ν inf_μ [e^{c̄(i,μ,ν)} Σ_j φ(j) P(j|i,μ,ν)] + g(i)`
/// on the domain, `φ = 0` outside. `cbar[i]` is laid out `u * n_v + v`.
pub fn solve_source_problem(
    model: &GameModel,
    domain: &DirichletDomain,
    cbar: &[Vec<f64>],
    g: &[f64],
    tol: f64,
) -> Result<Vec<f64>, DirichletError> {
    let n = model.states();
    if cbar.len() != n {
        return Err(DirichletError::ShapeMismatch { expected: n, found: cbar.len() });
    }
    if g.len() != n {
        return Err(DirichletError::ShapeMismatch { expected: n, found: g.len() });
    }
    for &i in domain.states() {
        let want = model.kernel(i).n_u() * model.kernel(i).n_v();
        if cbar[i].len() != want {
            return Err(DirichletError::ShapeMismatch { expected: want, found: cbar[i].len() });
        }
        if g[i] < 0.0 {
            return Err(DirichletError::NegativeSource { state: i });
        }
    }
    let max = domain.states().iter().flat_map(|&i| cbar[i].iter().copied()).fold(f64::NEG_INFINITY, f64::max);
    if !(max < 0.0) {
        return Err(DirichletError::NotStrictlyNegative { max });
    }
    let alpha = max.exp();
    let stop = tol * (1.0 - alpha) / alpha;

    let mut phi = vec![0.0f64; n];
    loop {
        let log_phi: Vec<f64> =
            (0..n).map(|i| if domain.contains(i) { phi[i].ln() } else { f64::NEG_INFINITY }).collect();
        let next: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                if !domain.contains(i) {
                    return 0.0;
                }
                let k = model.kernel(i);
                let game = LocalGame::with_costs(model, i, cbar[i].clone(), &log_phi);
                debug_assert_eq!(game.n_u() * game.n_v(), k.n_u() * k.n_v());
                game.lower_value().exp() + g[i]
            })
            .collect();
        let step = next.iter().zip(&phi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        phi = next;
        if step <= stop {
            return Ok(phi);
        }
    }
}
