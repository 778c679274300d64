//! Simulation-side checks against closed forms and test-local Monte Carlo.

mod common;

use rand::Rng;
use rsgame_core::dirichlet::{solve_source_problem, DirichletDomain};
use rsgame_core::montecarlo::{
    estimate_ergodic_cost, verify_saddle, verify_stochastic_representation, SimConfig, Verdict,
};
use rsgame_core::shapley::{solve_ergodic_game, SolveOptions};
use rsgame_core::{GameModel, Player, StationaryStrategy};

fn uniform(m: &GameModel) -> (StationaryStrategy, StationaryStrategy) {
    (StationaryStrategy::uniform(m, Player::P1), StationaryStrategy::uniform(m, Player::P2))
}

#[test]
fn estimator_error_shrinks_into_band() {
    // i.i.d. costs with small variance: the offset from the start state decays
    // like 1/T and the log-mean-exp bias stays small while σ²T is O(1).
    let p = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
    let c = vec![0.0, 0.02];
    let model = GameModel::uncontrolled(&p, &c).unwrap();
    let rho = common::perron_log_root(&p, &c);
    let (a, b) = uniform(&model);
    let coarse = estimate_ergodic_cost(&model, &a, &b, &SimConfig::new(50, 200, 1, 0)).unwrap();
    let fine = estimate_ergodic_cost(&model, &a, &b, &SimConfig::new(5000, 2000, 1, 0)).unwrap();
    let (e1, e2) = ((coarse.estimate - rho).abs(), (fine.estimate - rho).abs());
    assert!(e2 < e1, "coarse error {e1:e}, fine error {e2:e}");
    assert!(e2 <= 3.0 * fine.spread, "fine error {e2:e} vs spread {:e}", fine.spread);
}

#[test]
fn uncontrolled_saddle_has_no_deviations() {
    let model = GameModel::uncontrolled(&[vec![0.9, 0.1], vec![0.2, 0.8]], &[0.0, 0.05]).unwrap();
    let report = solve_ergodic_game(&model, &[2], &SolveOptions::default()).unwrap();
    let v = verify_saddle(&model, &report, &SimConfig::new(2000, 20_000, 3, 0), 5).unwrap();
    assert!(v.deviations.is_empty());
    assert!(v.pass, "{:?}", v.baseline);
}

#[test]
fn one_step_entry_matches_hand_expansion() {
    // From state 2 the chain always enters {0, 1}.
    let p = vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.6, 0.3], vec![0.7, 0.3, 0.0]];
    let c = vec![0.1, 0.4, 0.9];
    let model = GameModel::uncontrolled(&p, &c).unwrap();
    let report = solve_ergodic_game(&model, &[3], &SolveOptions::default()).unwrap();
    let psi = &report.psi_star;
    let hand = (c[2] - report.rho_star).exp() * (p[2][0] * psi[0] + p[2][1] * psi[1]);
    assert!((hand - psi[2]).abs() <= 1e-8 * psi[2]);
    let v = verify_stochastic_representation(&model, &report, &[0, 1], &[2], &SimConfig::new(1, 100_000, 5, 2))
        .unwrap();
    assert_eq!(v.verdict, Verdict::Pass, "{v:?}");
}

#[test]
fn capped_paths_make_the_verdict_inconclusive() {
    let model = GameModel::uncontrolled(&[vec![0.5, 0.5], vec![0.001, 0.999]], &[0.0, 0.0]).unwrap();
    let report = solve_ergodic_game(&model, &[2], &SolveOptions::default()).unwrap();
    let cfg = SimConfig { hit_cap: 5, ..SimConfig::new(1, 1000, 1, 1) };
    let v = verify_stochastic_representation(&model, &report, &[0], &[1], &cfg).unwrap();
    assert_eq!(v.verdict, Verdict::Inconclusive);
    assert!(v.states[0].capped_paths > 10);
}

#[test]
fn source_problem_matches_exit_time_sum() {
    // φ(i) = E_i[Σ_{t<τ} e^{Σ_{s<t} c̄(X_s)} g(X_t)], τ the exit time from {0, 1}.
    let p = vec![vec![0.4, 0.4, 0.2], vec![0.3, 0.3, 0.4], vec![0.0, 0.0, 1.0]];
    let model = GameModel::uncontrolled(&p, &[0.0, 0.0, 0.0]).unwrap();
    let domain = DirichletDomain::new(&model, &[0, 1]).unwrap();
    let cbar = vec![vec![-0.5]; 3];
    let g = vec![1.0, 0.5, 0.0];
    let phi = solve_source_problem(&model, &domain, &cbar, &g, 1e-12).unwrap();

    let mut rng = common::rng(17);
    let n = 200_000;
    let samples: Vec<f64> = (0..n)
        .map(|_| {
            let (mut x, mut weight, mut total) = (0usize, 1.0f64, 0.0);
            while x < 2 {
                total += weight * g[x];
                weight *= (-0.5f64).exp();
                let r: f64 = rng.random();
                x = if r < p[x][0] {
                    0
                } else if r < p[x][0] + p[x][1] {
                    1
                } else {
                    2
                };
            }
            total
        })
        .collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!((mean - phi[0]).abs() <= 3.0 * se, "mc {mean} ± {se} vs {}", phi[0]);
}

#[test]
fn absorbing_runs_lose_value() {
    // Exit mass 0.2 per step from a single zero-cost state: e^{T ρ} = 0.8^T.
    let model = GameModel::uncontrolled(&[vec![0.8]], &[0.0]).unwrap();
    let (a, b) = uniform(&model);
    let cfg = SimConfig { absorb_exits: true, ..SimConfig::new(10, 50_000, 2, 0) };
    let r = estimate_ergodic_cost(&model, &a, &b, &cfg).unwrap();
    assert!((r.estimate - 0.8f64.ln()).abs() <= 3.0 * r.spread + 0.01, "{r:?}");
}
