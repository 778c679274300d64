//! The per-state saddle problem behind the Shapley operator.
//!
//! At state `i` with eigenfunction `ψ` (given as `log ψ`), the payoff is
//!
//! ```text
//! log F(μ, ν) = μᵀCν + ln(μᵀAν) + m,   A[u][v] = Σ_j P(j|i,u,v) exp(log ψ(j) - m)
//! ```
//!
//! with `m` the largest `log ψ` reachable from `i`. For fixed `ν` the payoff is
//! concave in `μ`, so the inner minimum sits at a pure action and the lower
//! value is the maximum over `ν` of the concave function
//! `H(ν) = min_u [C_u ν + ln(A_u ν)]`. For fixed `μ` the supremum over `ν` is
//! computed exactly by walking the edges of a planar polygon, which gives a
//! certified upper value and therefore a certified gap.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::GameModel;
use crate::numeric::log_sum_exp;

pub const DEFAULT_LOCAL_TOL: f64 = 1e-8;
pub const DEFAULT_LOCAL_BUDGET: usize = 10_000;

/// Solution of one local saddle problem. All values are natural logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalSaddle {
    /// Lower value `sup_ν min_u log F(δ_u, ν)`; `-inf` when ψ vanishes on the support.
    #[serde(with = "crate::report::f64_or_null")]
    pub log_value: f64,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    /// `sup_ν log F(μ, ν) - log_value`, never negative.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LocalGameError {
    #[error("Σ_j ψ(j) P(j|i,μ,ν) = 0 at state {state}")]
    EmptySupport { state: usize },
    #[error("local saddle did not certify: gap {gap:e} after {iterations} iterations")]
    NoConvergence { iterations: usize, gap: f64, best: Box<LocalSaddle> },
    #[error("invalid tolerance {0}")]
    InvalidTolerance(f64),
}

/// Solver knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaddleOptions {
    pub tol: f64,
    /// Refinement budget used when the first certificate misses `tol`.
    pub budget: usize,
}

impl Default for SaddleOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_LOCAL_TOL, budget: DEFAULT_LOCAL_BUDGET }
    }
}

/// The local game at one state in shifted matrix form.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGame {
    n_u: usize,
    n_v: usize,
    /// Cost matrix, `u * n_v + v`.
    c: Vec<f64>,
    /// Shifted continuation matrix, `u * n_v + v`.
    a: Vec<f64>,
    /// Shift added back to every log value.
    shift: f64,
}

impl LocalGame {
    /// Builds the local game at state `i`. States outside the window never
    /// appear (rows are window-sparse); `log_psi = -inf` marks ψ = 0.
    pub fn new(model: &GameModel, i: usize, log_psi: &[f64]) -> Self {
        Self::with_costs(model, i, model.kernel(i).costs().to_vec(), log_psi)
    }

    /// As [`LocalGame::new`] with the state's costs replaced by `costs` (`u * n_v + v`).
    pub fn with_costs(model: &GameModel, i: usize, costs: Vec<f64>, log_psi: &[f64]) -> Self {
        let k = model.kernel(i);
        assert_eq!(costs.len(), k.n_u() * k.n_v());
        let (n_u, n_v) = (k.n_u(), k.n_v());
        let shift = k
            .rows()
            .iter()
            .flat_map(|r| r.iter())
            .filter(|&&(_, p)| p > 0.0)
            .map(|&(j, _)| log_psi[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let a = k
            .rows()
            .iter()
            .map(|r| {
                if shift == f64::NEG_INFINITY {
                    return 0.0;
                }
                r.iter()
                    .filter(|&&(_, p)| p > 0.0)
                    .map(|&(j, p)| p * (log_psi[j] - shift).exp())
                    .sum()
            })
            .collect();
        Self { n_u, n_v, c: costs, a, shift }
    }

    /// Direct construction from matrices (row-major `u * n_v + v`).
    pub fn from_matrices(n_u: usize, n_v: usize, c: Vec<f64>, a: Vec<f64>) -> Self {
        assert_eq!(c.len(), n_u * n_v);
        assert_eq!(a.len(), n_u * n_v);
        Self { n_u, n_v, c, a, shift: 0.0 }
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }
    pub fn n_v(&self) -> usize {
        self.n_v
    }

    /// `μᵀCν`.
    pub fn mixed_cost(&self, mu: &[f64], nu: &[f64]) -> f64 {
        bilinear(&self.c, self.n_v, mu, nu)
    }

    /// `μᵀAν`, the shifted continuation mass.
    pub fn mixed_mass(&self, mu: &[f64], nu: &[f64]) -> f64 {
        bilinear(&self.a, self.n_v, mu, nu)
    }

    /// `log F(μ, ν)`.
    pub fn payoff(&self, mu: &[f64], nu: &[f64]) -> f64 {
        self.mixed_cost(mu, nu) + self.mixed_mass(mu, nu).ln() + self.shift
    }

    /// `log F(δ_u, ν)` for a pure row.
    fn pure_row(&self, u: usize, nu: &[f64]) -> f64 {
        let row = u * self.n_v;
        let mut c = 0.0;
        let mut a = 0.0;
        for (v, &w) in nu.iter().enumerate() {
            c += w * self.c[row + v];
            a += w * self.a[row + v];
        }
        c + a.ln() + self.shift
    }

    /// Lowest-index minimizing pure action against `ν`.
    pub fn best_pure_min(&self, nu: &[f64]) -> (usize, f64) {
        let mut best = (0, self.pure_row(0, nu));
        for u in 1..self.n_u {
            let val = self.pure_row(u, nu);
            if val < best.1 {
                best = (u, val);
            }
        }
        best
    }

    /// `H(ν) = min_u log F(δ_u, ν)`.
    pub fn lower_at(&self, nu: &[f64]) -> f64 {
        self.best_pure_min(nu).1
    }

    /// Exact `sup_ν log F(μ, ν)` and a maximizing `ν` (lowest-index ties).
    ///
    /// The image of the simplex under `ν ↦ (μᵀCν, μᵀAν)` is the convex hull of
    /// the per-action points; `x + ln y` increases in both coordinates, so its
    /// maximum lies on a segment between two of those points.
    pub fn upper_at(&self, mu: &[f64]) -> (f64, Vec<f64>) {
        let n = self.n_v;
        let cv: Vec<f64> = (0..n).map(|v| (0..self.n_u).map(|u| mu[u] * self.c[u * n + v]).sum()).collect();
        let av: Vec<f64> = (0..n).map(|v| (0..self.n_u).map(|u| mu[u] * self.a[u * n + v]).sum()).collect();
        let f = |x: f64, y: f64| x + y.ln();
        let mut best_val = f64::NEG_INFINITY;
        let mut best = (0usize, 0usize, 0.0f64);
        for k in 0..n {
            let val = f(cv[k], av[k]);
            if val > best_val {
                best_val = val;
                best = (k, k, 0.0);
            }
        }
        for l in 0..n {
            for k in (l + 1)..n {
                let (dc, da) = (cv[k] - cv[l], av[k] - av[l]);
                if dc == 0.0 || da == 0.0 || dc.signum() == da.signum() {
                    // Monotone along the segment: the endpoints already cover it.
                    continue;
                }
                let t = ((-da / dc - av[l]) / da).clamp(0.0, 1.0);
                let val = f(cv[l] + t * dc, av[l] + t * da);
                if val > best_val {
                    best_val = val;
                    best = (l, k, t);
                }
            }
        }
        let mut nu = vec![0.0; n];
        let (l, k, t) = best;
        nu[l] += 1.0 - t;
        nu[k] += t;
        (best_val + self.shift, nu)
    }

    /// Lower value without the refinement loop; the operator entry used by the iterations.
    pub fn lower_value(&self) -> f64 {
        self.solve(&SaddleOptions { tol: DEFAULT_LOCAL_TOL, budget: 0 }).log_value
    }

    /// Certified gap of a candidate pair.
    fn certify(&self, mu: Vec<f64>, nu: Vec<f64>) -> LocalSaddle {
        let lower = self.lower_at(&nu);
        let (upper, _) = self.upper_at(&mu);
        LocalSaddle { log_value: lower, mu, nu, gap: (upper - lower).max(0.0) }
    }

    /// Lower value, a maximin `ν`, and the best certified `μ` found.
    pub fn solve(&self, opts: &SaddleOptions) -> LocalSaddle {
        let (n_u, n_v) = (self.n_u, self.n_v);

        // A player-1 action with no continuation mass sends the value to -inf.
        if let Some(u) = (0..n_u).find(|&u| self.a[u * n_v..(u + 1) * n_v].iter().all(|&x| x == 0.0)) {
            return LocalSaddle {
                log_value: f64::NEG_INFINITY,
                mu: unit(n_u, u),
                nu: vec![1.0 / n_v as f64; n_v],
                gap: 0.0,
            };
        }
        if n_v == 1 {
            let (u, val) = self.best_pure_min(&[1.0]);
            return LocalSaddle { log_value: val, mu: unit(n_u, u), nu: vec![1.0], gap: 0.0 };
        }

        // Pure player-1 candidates paired with their exact best responses.
        let mut best: Option<LocalSaddle> = None;
        let consider = |cand: LocalSaddle, best: &mut Option<LocalSaddle>| {
            let better = match best {
                None => true,
                Some(b) => (cand.gap, -cand.log_value) < (b.gap, -b.log_value),
            };
            if better {
                *best = Some(cand);
            }
        };
        for u in 0..n_u {
            let mu = unit(n_u, u);
            let (_, nu) = self.upper_at(&mu);
            consider(self.certify(mu, nu), &mut best);
        }
        if n_u == 1 || best.as_ref().is_some_and(|b| b.gap <= opts.tol * 1e-3) {
            return best.unwrap();
        }

        let ipm = self.maximin_interior_point();
        let nu = ipm.nu;
        let h_nu = self.lower_at(&nu);
        for mu in self.multiplier_candidates(&ipm.lambda, &nu) {
            consider(self.certify(mu, nu.clone()), &mut best);
        }
        let mut best = best.unwrap();
        // Keep the best lower value found while the certificate uses the best μ.
        if h_nu > best.log_value {
            let (upper, _) = self.upper_at(&best.mu);
            best = LocalSaddle { log_value: h_nu, nu, gap: (upper - h_nu).max(0.0), mu: best.mu };
        }
        if best.gap > opts.tol {
            best = self.fictitious_play(best, opts);
        }
        best
    }

    /// μ candidates from the maximin multipliers: the multipliers themselves,
    /// and their restriction to each group of active rows sharing `A_u ν`.
    fn multiplier_candidates(&self, lambda: &[f64], nu: &[f64]) -> Vec<Vec<f64>> {
        let n_u = self.n_u;
        let mut out = Vec::new();
        let total: f64 = lambda.iter().sum();
        if total > 0.0 {
            out.push(lambda.iter().map(|x| x / total).collect());
        }
        let mass: Vec<f64> = (0..n_u)
            .map(|u| (0..self.n_v).map(|v| self.a[u * self.n_v + v] * nu[v]).sum())
            .collect();
        let active: Vec<usize> = (0..n_u).filter(|&u| lambda[u] > 1e-9 * total.max(1e-300)).collect();
        let mut seen = vec![false; n_u];
        for &u in &active {
            if seen[u] {
                continue;
            }
            let group: Vec<usize> = active
                .iter()
                .copied()
                .filter(|&w| ((mass[w] - mass[u]) / mass[u]).abs() <= 1e-7)
                .collect();
            for &w in &group {
                seen[w] = true;
            }
            let s: f64 = group.iter().map(|&w| lambda[w]).sum();
            let mut mu = vec![0.0; n_u];
            for &w in &group {
                mu[w] = lambda[w] / s;
            }
            out.push(mu);
        }
        out
    }

    /// Averaged fictitious play starting from a certified pair: player 1 best
    /// responds with pure actions, player 2 with exact mixed best responses.
    fn fictitious_play(&self, start: LocalSaddle, opts: &SaddleOptions) -> LocalSaddle {
        let mut best = start;
        let mut mu_avg = best.mu.clone();
        let mut nu_avg = best.nu.clone();
        for k in 1..=opts.budget {
            let (u, _) = self.best_pure_min(&nu_avg);
            let (_, nu_br) = self.upper_at(&mu_avg);
            let w = 1.0 / (k as f64 + 1.0);
            for (x, e) in mu_avg.iter_mut().enumerate() {
                *e = (1.0 - w) * *e + if x == u { w } else { 0.0 };
            }
            for (e, b) in nu_avg.iter_mut().zip(&nu_br) {
                *e = (1.0 - w) * *e + w * b;
            }
            if k % 16 == 0 || k == opts.budget {
                let (upper, _) = self.upper_at(&mu_avg);
                let gap = (upper - best.log_value).max(0.0);
                if gap < best.gap {
                    best.gap = gap;
                    best.mu = mu_avg.clone();
                }
                if best.gap <= opts.tol {
                    break;
                }
            }
        }
        best
    }

    /// Primal-dual interior-point method for `max t s.t. t ≤ h_u(ν), ν ∈ Δ`.
    fn maximin_interior_point(&self) -> InteriorPointResult {
        let (n_u, n) = (self.n_u, self.n_v);
        let dim = n + 1;
        let m = n_u + n;
        let row = |u: usize| &self.a[u * n..(u + 1) * n];
        let crow = |u: usize| &self.c[u * n..(u + 1) * n];
        let h = |u: usize, nu: &[f64]| -> f64 {
            let a: f64 = row(u).iter().zip(nu).map(|(x, y)| x * y).sum();
            let c: f64 = crow(u).iter().zip(nu).map(|(x, y)| x * y).sum();
            c + a.ln()
        };
        // Inequalities: f_u = t - h_u(ν) for u < n_u, then -ν_k.
        let ineq = |x: &[f64]| -> Vec<f64> {
            let (nu, t) = (&x[..n], x[n]);
            let mut f: Vec<f64> = (0..n_u).map(|u| t - h(u, nu)).collect();
            f.extend(nu.iter().map(|&v| -v));
            f
        };
        let grads = |x: &[f64]| -> Vec<DVector<f64>> {
            let nu = &x[..n];
            let mut g = Vec::with_capacity(m);
            for u in 0..n_u {
                let a: f64 = row(u).iter().zip(nu).map(|(x, y)| x * y).sum();
                let mut d = DVector::zeros(dim);
                for v in 0..n {
                    d[v] = -crow(u)[v] - row(u)[v] / a;
                }
                d[n] = 1.0;
                g.push(d);
            }
            for k in 0..n {
                let mut d = DVector::zeros(dim);
                d[k] = -1.0;
                g.push(d);
            }
            g
        };
        let residual = |x: &[f64], lam: &[f64], w: f64, tau: f64| -> (DVector<f64>, DVector<f64>, f64) {
            let f = ineq(x);
            let g = grads(x);
            let mut r_dual = DVector::zeros(dim);
            r_dual[n] = -1.0;
            for (gi, &li) in g.iter().zip(lam) {
                r_dual += gi * li;
            }
            for v in 0..n {
                r_dual[v] += w;
            }
            let r_cent = DVector::from_iterator(m, f.iter().zip(lam).map(|(&fi, &li)| -li * fi - 1.0 / tau));
            let r_pri = x[..n].iter().sum::<f64>() - 1.0;
            (r_dual, r_cent, r_pri)
        };
        let norm = |rd: &DVector<f64>, rc: &DVector<f64>, rp: f64| (rd.norm_squared() + rc.norm_squared() + rp * rp).sqrt();

        let mut x = vec![1.0 / n as f64; dim];
        x[n] = (0..n_u).map(|u| h(u, &x[..n])).fold(f64::INFINITY, f64::min) - 1.0;
        let mut lam: Vec<f64> = ineq(&x).iter().map(|&fi| -1.0 / fi).collect();
        let mut w = 0.0;
        let (mu_factor, alpha, beta, eps) = (10.0, 0.01, 0.5, 1e-14);

        for _ in 0..200 {
            let f = ineq(&x);
            let eta: f64 = -f.iter().zip(&lam).map(|(a, b)| a * b).sum::<f64>();
            let tau = mu_factor * m as f64 / eta;
            let (r_dual, r_cent, r_pri) = residual(&x, &lam, w, tau);
            if r_pri.abs() <= eps && r_dual.norm() <= eps && eta <= eps {
                break;
            }
            let g = grads(&x);
            // H_pd = Σ λ_u ∇²f_u + Σ_i (λ_i / -f_i) ∇f_i ∇f_iᵀ
            let mut kkt = DMatrix::zeros(dim + 1, dim + 1);
            let nu = &x[..n];
            for u in 0..n_u {
                let a: f64 = row(u).iter().zip(nu).map(|(x, y)| x * y).sum();
                let s = lam[u] / (a * a);
                for p in 0..n {
                    for q in 0..n {
                        kkt[(p, q)] += s * row(u)[p] * row(u)[q];
                    }
                }
            }
            let mut rhs = DVector::zeros(dim + 1);
            for i in 0..m {
                let s = lam[i] / -f[i];
                let gi = &g[i];
                for p in 0..dim {
                    for q in 0..dim {
                        kkt[(p, q)] += s * gi[p] * gi[q];
                    }
                }
            }
            for v in 0..n {
                kkt[(v, dim)] = 1.0;
                kkt[(dim, v)] = 1.0;
            }
            // -(r_dual + Dfᵀ diag(f)⁻¹ r_cent)
            let mut top = r_dual.clone();
            for i in 0..m {
                top += &g[i] * (r_cent[i] / f[i]);
            }
            for p in 0..dim {
                rhs[p] = -top[p];
            }
            rhs[dim] = -r_pri;
            let Some(sol) = kkt.lu().solve(&rhs) else { break };
            let dx: Vec<f64> = (0..dim).map(|p| sol[p]).collect();
            let dw = sol[dim];
            let dlam: Vec<f64> = (0..m)
                .map(|i| {
                    let gdx: f64 = (0..dim).map(|p| g[i][p] * dx[p]).sum();
                    -(lam[i] * gdx - r_cent[i]) / f[i]
                })
                .collect();

            let mut s_max: f64 = 1.0;
            for i in 0..m {
                if dlam[i] < 0.0 {
                    s_max = s_max.min(-lam[i] / dlam[i]);
                }
            }
            let mut s = 0.99 * s_max;
            let r0 = norm(&r_dual, &r_cent, r_pri);
            let mut accepted = false;
            for _ in 0..60 {
                let xn: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + s * b).collect();
                if xn[..n].iter().all(|&v| v > 0.0) && ineq(&xn).iter().all(|&fi| fi < 0.0) {
                    let ln: Vec<f64> = lam.iter().zip(&dlam).map(|(a, b)| a + s * b).collect();
                    let (rd, rc, rp) = residual(&xn, &ln, w + s * dw, tau);
                    if norm(&rd, &rc, rp) <= (1.0 - alpha * s) * r0 {
                        x = xn;
                        lam = ln;
                        w += s * dw;
                        accepted = true;
                        break;
                    }
                }
                s *= beta;
            }
            if !accepted {
                break;
            }
        }
        let mut nu: Vec<f64> = x[..n].iter().map(|&v| v.max(0.0)).collect();
        let total: f64 = nu.iter().sum();
        nu.iter_mut().for_each(|v| *v /= total);
        InteriorPointResult { nu, lambda: lam[..n_u].to_vec() }
    }
}

struct InteriorPointResult {
    nu: Vec<f64>,
    lambda: Vec<f64>,
}

fn unit(n: usize, k: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[k] = 1.0;
    e
}

fn bilinear(m: &[f64], n_v: usize, mu: &[f64], nu: &[f64]) -> f64 {
    let mut s = 0.0;
    for (u, &x) in mu.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let row = &m[u * n_v..(u + 1) * n_v];
        s += x * row.iter().zip(nu).map(|(a, b)| a * b).sum::<f64>();
    }
    s
}

/// `c(i,μ,ν) + ln Σ_j ψ(j) P(j|i,μ,ν)`, mixing the sparse rows explicitly.
pub fn local_payoff(
    model: &GameModel,
    i: usize,
    log_psi: &[f64],
    mu: &[f64],
    nu: &[f64],
) -> Result<f64, LocalGameError> {
    let k = model.kernel(i);
    let mut cost = 0.0;
    let mut mixed: Vec<(usize, f64)> = Vec::new();
    for (u, &mu_u) in mu.iter().enumerate() {
        for (v, &nu_v) in nu.iter().enumerate() {
            let w = mu_u * nu_v;
            if w == 0.0 {
                continue;
            }
            cost += w * k.cost(u, v);
            for &(j, p) in k.row(u, v) {
                match mixed.iter_mut().find(|(jj, _)| *jj == j) {
                    Some(e) => e.1 += w * p,
                    None => mixed.push((j, w * p)),
                }
            }
        }
    }
    let terms: Vec<f64> = mixed
        .iter()
        .filter(|&&(_, p)| p > 0.0)
        .map(|&(j, p)| log_psi[j] + p.ln())
        .collect();
    let inner = log_sum_exp(&terms);
    if inner == f64::NEG_INFINITY {
        return Err(LocalGameError::EmptySupport { state: i });
    }
    Ok(cost + inner)
}

/// Lowest-index pure minimizer against `ν` and its log value.
pub fn best_response_pure_min(model: &GameModel, i: usize, log_psi: &[f64], nu: &[f64]) -> (usize, f64) {
    LocalGame::new(model, i, log_psi).best_pure_min(nu)
}

/// Solves the local saddle at state `i` and certifies the gap against `tol`.
pub fn solve_saddle(
    model: &GameModel,
    i: usize,
    log_psi: &[f64],
    opts: &SaddleOptions,
) -> Result<LocalSaddle, LocalGameError> {
    if !(opts.tol > 0.0) {
        return Err(LocalGameError::InvalidTolerance(opts.tol));
    }
    let game = LocalGame::new(model, i, log_psi);
    let sol = game.solve(opts);
    if sol.gap > opts.tol {
        return Err(LocalGameError::NoConvergence { iterations: opts.budget, gap: sol.gap, best: Box::new(sol) });
    }
    Ok(sol)
}

/// Lower value only; this is the Shapley operator entry used by the iterations.
pub fn lower_value(model: &GameModel, i: usize, log_psi: &[f64]) -> f64 {
    LocalGame::new(model, i, log_psi).lower_value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelBuilder;
    use proptest::prelude::*;

    fn one_state(n_u: usize, n_v: usize, c: &[f64], rows: &[Vec<f64>]) -> GameModel {
        let n = rows[0].len();
        let mut b = ModelBuilder::new(n).action_counts(0, n_u, n_v);
        for s in 1..n {
            b = b.dense_row(s, 0, 0, &vec![1.0 / n as f64; n]).cost(s, 0, 0, 0.0);
        }
        for u in 0..n_u {
            for v in 0..n_v {
                b = b.dense_row(0, u, v, &rows[u * n_v + v]).cost(0, u, v, c[u * n_v + v]);
            }
        }
        b.build().unwrap()
    }

    #[test]
    fn payoff_singleton_full_row() {
        let m = one_state(1, 1, &[0.7], &[vec![0.25, 0.25, 0.5]]);
        let v = local_payoff(&m, 0, &[0.0; 3], &[1.0], &[1.0]).unwrap();
        assert!((v - 0.7).abs() < 1e-15);
    }

    #[test]
    fn payoff_constant_psi_mixes_only_cost() {
        let row = vec![0.5, 0.5];
        let m = one_state(2, 2, &[0.0, 1.0, 1.0, 0.0], &vec![row; 4]);
        let v = local_payoff(&m, 0, &[0.0, 0.0], &[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        let v = local_payoff(&m, 0, &[0.0, 0.0], &[0.2, 0.8], &[0.9, 0.1]).unwrap();
        let direct = 0.2 * 0.1 + 0.8 * 0.9;
        assert!((v - direct).abs() < 1e-15);
    }

    #[test]
    fn payoff_empty_support_is_flagged() {
        let m = one_state(1, 1, &[0.0], &[vec![0.0, 1.0]]);
        let err = local_payoff(&m, 0, &[0.0, f64::NEG_INFINITY], &[1.0], &[1.0]).unwrap_err();
        assert_eq!(err, LocalGameError::EmptySupport { state: 0 });
    }

    #[test]
    fn pure_min_prefers_cheaper_action_and_breaks_ties_low() {
        let row = vec![1.0];
        let m = one_state(2, 1, &[2.0, 1.0], &[row.clone(), row.clone()]);
        assert_eq!(best_response_pure_min(&m, 0, &[0.0], &[1.0]).0, 1);
        let m = one_state(3, 1, &[1.0; 3], &[row.clone(), row.clone(), row]);
        assert_eq!(best_response_pure_min(&m, 0, &[0.0], &[1.0]).0, 0);
    }

    #[test]
    fn singleton_saddle_is_exact() {
        let m = one_state(1, 1, &[0.3], &[vec![0.5, 0.25]]);
        let lp = [0.0, 1.0];
        let s = solve_saddle(&m, 0, &lp, &SaddleOptions::default()).unwrap();
        let expect = 0.3 + (0.5 + 0.25 * 1f64.exp()).ln();
        assert!((s.log_value - expect).abs() < 1e-15);
        assert_eq!(s.gap, 0.0);
        assert_eq!((s.mu, s.nu), (vec![1.0], vec![1.0]));
    }

    #[test]
    fn matching_pennies_on_cost_alone() {
        let row = vec![1.0];
        let m = one_state(2, 2, &[1.0, 0.0, 0.0, 1.0], &vec![row; 4]);
        let s = solve_saddle(&m, 0, &[0.0], &SaddleOptions::default()).unwrap();
        assert!((s.log_value - 0.5).abs() < 1e-10);
        for x in s.mu.iter().chain(&s.nu) {
            assert!((x - 0.5).abs() < 1e-6);
        }
        assert!(s.gap <= 1e-8);
    }

    #[test]
    fn zero_mass_row_gives_minus_infinity() {
        let m = one_state(2, 2, &[0.0; 4], &[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]]);
        let s = solve_saddle(&m, 0, &[0.0, f64::NEG_INFINITY], &SaddleOptions::default()).unwrap();
        assert_eq!(s.log_value, f64::NEG_INFINITY);
        assert_eq!(s.mu, vec![0.0, 1.0]);
    }

    /// Upper value against a dense ν grid (oracle for the polygon walk).
    fn grid_upper(g: &LocalGame, mu: &[f64], steps: usize) -> f64 {
        simplex_grid(g.n_v(), steps).iter().map(|nu| g.payoff(mu, nu)).fold(f64::NEG_INFINITY, f64::max)
    }

    fn simplex_grid(n: usize, steps: usize) -> Vec<Vec<f64>> {
        fn rec(n: usize, left: usize, steps: usize, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
            if n == 1 {
                cur.push(left as f64 / steps as f64);
                out.push(cur.clone());
                cur.pop();
                return;
            }
            for k in 0..=left {
                cur.push(k as f64 / steps as f64);
                rec(n - 1, left - k, steps, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        rec(n, steps, steps, &mut Vec::new(), &mut out);
        out
    }

    fn random_game(seed: u64, n_u: usize, n_v: usize) -> LocalGame {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let c = (0..n_u * n_v).map(|_| rng.random_range(0.0..2.0)).collect();
        let a = (0..n_u * n_v).map(|_| rng.random_range(0.01..1.0)).collect();
        LocalGame::from_matrices(n_u, n_v, c, a)
    }

    #[test]
    fn polygon_walk_matches_grid_sup() {
        for seed in 0..20 {
            let g = random_game(seed, 3, 3);
            let mu = [0.2, 0.5, 0.3];
            let (exact, nu) = g.upper_at(&mu);
            assert!((g.payoff(&mu, &nu) - exact).abs() < 1e-12);
            let grid = grid_upper(&g, &mu, 200);
            assert!(grid <= exact + 1e-12, "grid beat exact sup");
            assert!(exact - grid < 1e-3);
        }
    }

    #[test]
    fn lower_value_dominates_grid_maximin() {
        for seed in 0..20 {
            let g = random_game(100 + seed, 3, 3);
            let s = g.solve(&SaddleOptions::default());
            let grid =
                simplex_grid(3, 60).iter().map(|nu| g.lower_at(nu)).fold(f64::NEG_INFINITY, f64::max);
            assert!(s.log_value >= grid - 1e-12);
            assert!(s.log_value - grid < 1e-2);
        }
    }

    #[test]
    fn gap_is_never_negative_and_upper_bounds_lower() {
        for seed in 0..30 {
            let g = random_game(200 + seed, 2, 3);
            let s = g.solve(&SaddleOptions::default());
            assert!(s.gap >= 0.0);
            let (upper, _) = g.upper_at(&s.mu);
            assert!(upper >= s.log_value - 1e-12);
        }
    }

    proptest! {
        #[test]
        fn payoff_is_bilinear_under_mixing(
            seed in 0u64..1000,
            a in 0.0f64..1.0,
            x in 0.0f64..1.0,
            y in 0.0f64..1.0,
        ) {
            let g = random_game(seed, 2, 2);
            let mu1 = [x, 1.0 - x];
            let mu2 = [y, 1.0 - y];
            let mix = [a * x + (1.0 - a) * y, 1.0 - (a * x + (1.0 - a) * y)];
            let nu = [0.3, 0.7];
            let c = g.mixed_cost(&mix, &nu);
            let cc = a * g.mixed_cost(&mu1, &nu) + (1.0 - a) * g.mixed_cost(&mu2, &nu);
            prop_assert!((c - cc).abs() < 1e-12);
            let m = g.mixed_mass(&mix, &nu);
            let mm = a * g.mixed_mass(&mu1, &nu) + (1.0 - a) * g.mixed_mass(&mu2, &nu);
            prop_assert!((m - mm).abs() < 1e-12);
        }

        #[test]
        fn no_mixed_minimizer_beats_best_pure(seed in 0u64..1000, w in 0.0f64..1.0) {
            let g = random_game(seed, 3, 3);
            let nu = [w, (1.0 - w) / 2.0, (1.0 - w) / 2.0];
            let (_, pure) = g.best_pure_min(&nu);
            for mu in simplex_grid(3, 30) {
                prop_assert!(g.payoff(&mu, &nu) >= pure - 1e-10);
            }
        }

        #[test]
        fn shifting_log_psi_shifts_value(seed in 0u64..500, shift in -20.0f64..20.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..4).map(|_| {
                let r: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
                let s: f64 = r.iter().sum();
                r.iter().map(|x| x / s).collect()
            }).collect();
            let c: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..2.0)).collect();
            let m = one_state(2, 2, &c, &rows);
            let lp: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lp2: Vec<f64> = lp.iter().map(|x| x + shift).collect();
            let v1 = lower_value(&m, 0, &lp);
            let v2 = lower_value(&m, 0, &lp2);
            prop_assert!((v2 - v1 - shift).abs() < 1e-10);
        }
    }
}
