//! Independent oracles and random instance generators shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsgame_core::{GameModel, ModelBuilder};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random probability vector of length `n` with roughly `zeros` entries set to zero.
pub fn random_row(rng: &mut ChaCha8Rng, n: usize, zeros: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    for _ in 0..zeros.min(n - 1) {
        let k = rng.random_range(0..n);
        w[k] = 0.0;
    }
    if w.iter().all(|&x| x == 0.0) {
        w[0] = 1.0;
    }
    let s: f64 = w.iter().sum();
    let mut w: Vec<f64> = w.iter().map(|x| x / s).collect();
    // Exact row sums keep the model closed.
    let last = w.iter().rposition(|&x| x > 0.0).unwrap();
    let head: f64 = w.iter().enumerate().filter(|&(k, _)| k != last).map(|(_, x)| x).sum();
    w[last] = 1.0 - head;
    w
}

/// Random closed uncontrolled chain with its transition matrix and costs.
pub fn random_chain(rng: &mut ChaCha8Rng, n: usize) -> (GameModel, Vec<Vec<f64>>, Vec<f64>) {
    let p: Vec<Vec<f64>> = (0..n).map(|_| random_row(rng, n, n / 3)).collect();
    let c: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..1.5)).collect();
    (GameModel::uncontrolled(&p, &c).unwrap(), p, c)
}

/// Random closed game with `fanout` targets per action pair.
pub fn random_game(rng: &mut ChaCha8Rng, n: usize, n_u: usize, n_v: usize, fanout: usize) -> GameModel {
    let mut b = ModelBuilder::new(n);
    for i in 0..n {
        b = b.action_counts(i, n_u, n_v);
        for u in 0..n_u {
            for v in 0..n_v {
                let mut targets: Vec<usize> = (0..fanout).map(|_| rng.random_range(0..n)).collect();
                targets.push((i + 1) % n);
                targets.sort_unstable();
                targets.dedup();
                let w = random_row(rng, targets.len(), 0);
                for (&j, &p) in targets.iter().zip(&w) {
                    b = b.transition(i, u, v, j, p);
                }
                b = b.cost(i, u, v, rng.random_range(0.0..1.0));
            }
        }
    }
    b.build().unwrap()
}

/// `ln` of the spectral radius of `diag(e^c) P` from a dense eigenvalue solve.
pub fn perron_log_root(p: &[Vec<f64>], c: &[f64]) -> f64 {
    let n = p.len();
    let m = DMatrix::from_fn(n, n, |i, j| c[i].exp() * p[i][j]);
    let radius = m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    radius.ln()
}

/// `ln` of the larger root of `x² - tr x + det` for a 2×2 matrix.
pub fn perron_log_root_2x2(m: [[f64; 2]; 2]) -> f64 {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    ((tr + (tr * tr - 4.0 * det).sqrt()) / 2.0).ln()
}

/// Direct evaluation of `c(i,μ,ν) + ln Σ_j ψ(j) P(j|i,μ,ν)` from the model.
pub fn direct_payoff(model: &GameModel, i: usize, log_psi: &[f64], mu: &[f64], nu: &[f64]) -> f64 {
    let k = model.kernel(i);
    let mut cost = 0.0;
    let mut mass = 0.0;
    for (u, &a) in mu.iter().enumerate() {
        for (v, &b) in nu.iter().enumerate() {
            cost += a * b * k.cost(u, v);
            for &(j, p) in k.row(u, v) {
                mass += a * b * p * log_psi[j].exp();
            }
        }
    }
    cost + mass.ln()
}

fn simplex_points(center: &[f64], half_width: f64, steps: usize) -> Vec<Vec<f64>> {
    let n = center.len();
    let mut out = Vec::new();
    let offsets: Vec<f64> = (0..=2 * steps).map(|k| -half_width + half_width * k as f64 / steps as f64).collect();
    let mut idx = vec![0usize; n - 1];
    loop {
        // Clamp into the simplex so its faces are on the grid.
        let mut x: Vec<f64> = (0..n - 1).map(|d| (center[d] + offsets[idx[d]]).clamp(0.0, 1.0)).collect();
        let head: f64 = x.iter().sum();
        if head > 1.0 {
            x.iter_mut().for_each(|t| *t /= head);
        }
        let head: f64 = x.iter().sum();
        x.push((1.0 - head).max(0.0));
        out.push(x);
        let mut d = 0;
        loop {
            if d == n - 1 {
                return out;
            }
            idx[d] += 1;
            if idx[d] <= 2 * steps {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Maximin by zooming grid search over ν. The payoff is concave in μ, so
/// the inner minimum over the simplex sits at a vertex.
pub fn brute_force_maximin(n_u: usize, n_v: usize, payoff: impl Fn(&[f64], &[f64]) -> f64) -> f64 {
    let vertices: Vec<Vec<f64>> = (0..n_u)
        .map(|u| {
            let mut e = vec![0.0; n_u];
            e[u] = 1.0;
            e
        })
        .collect();
    let lower = |nu: &[f64]| vertices.iter().map(|mu| payoff(mu, nu)).fold(f64::INFINITY, f64::min);
    let mut center = vec![1.0 / n_v as f64; n_v];
    let mut best = lower(&center);
    let mut half = 1.0;
    for _ in 0..80 {
        for nu in simplex_points(&center, half, 20) {
            let val = lower(&nu);
            if val > best {
                best = val;
                center = nu;
            }
        }
        half *= 0.7;
    }
    best
}
