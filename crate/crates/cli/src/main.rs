//! `rsgame`: validate, check, solve, simulate and verify risk-sensitive
//! ergodic zero-sum games; generate the birth-death example.
//!
//! Exit codes: 0 success or PASS, 1 FAIL verdict or failed solve, 2 usage or
//! ingestion error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use rsgame_core::birthdeath::{build_birth_death_with_log, verify_drift_assumptions, BirthDeathParams};
use rsgame_core::dirichlet::DirichletDomain;
use rsgame_core::localgame::DEFAULT_LOCAL_TOL;
use rsgame_core::model::{
    check_irreducibility, check_lyapunov, check_reference_state, validate_model, IrreducibilityMode,
    IrreducibilityReport, LyapunovReport,
};
use rsgame_core::montecarlo::{
    deviation_set, estimate_ergodic_cost, simulate_paths, verify_saddle, verify_stochastic_representation,
    DeviationKind, EstimatorReport, RepresentationVerdict, SaddleVerdict, SimConfig, Verdict, DEFAULT_HIT_CAP,
};
use rsgame_core::shapley::{
    default_ladder, residual, solve_ergodic_game, LadderStatus, SolveOptions, SolveReport, DEFAULT_TOL_OUTER,
};
use rsgame_core::{GameModel, Player, StationaryStrategy};

#[derive(Parser)]
#[command(name = "rsgame", version, about = "Risk-sensitive ergodic zero-sum stochastic games")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Well-formedness report for a model file.
    Validate { model: PathBuf },
    /// Lyapunov drift, irreducibility and reference-state checks.
    Check {
        model: PathBuf,
        /// Strategy pairs sampled by the irreducibility check.
        #[arg(long, default_value_t = 64)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Solve the Shapley eigenproblem over a ladder of domains.
    Solve(SolveArgs),
    /// Estimate the risk-sensitive cost of a strategy pair by simulation.
    Simulate(SimulateArgs),
    /// Re-check a solve report: residual, saddle inequalities, representation.
    Verify(VerifyArgs),
    /// Generate a built-in example model.
    Example {
        #[command(subcommand)]
        which: Example,
    },
}

#[derive(Args)]
struct SolveArgs {
    model: PathBuf,
    /// Comma-separated domain sizes, e.g. 10,20,40 (default: doubling from 10 to the window).
    #[arg(long, value_delimiter = ',')]
    ladder: Option<Vec<usize>>,
    /// Sets both the local-game and the eigenvalue tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    tol_local: Option<f64>,
    #[arg(long)]
    tol_eig: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_TOL_OUTER)]
    tol_outer: f64,
    #[arg(long, default_value_t = rsgame_core::dirichlet::DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Report JSON destination (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ladder trace CSV destination.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long = "T", default_value_t = 1000)]
    horizon: usize,
    #[arg(long = "N", default_value_t = 10_000)]
    paths: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Start state (default: the model's reference state).
    #[arg(long)]
    start: Option<usize>,
    /// Kill paths that leave the window instead of rejecting open models.
    #[arg(long)]
    absorb: bool,
}

#[derive(Args)]
struct SimulateArgs {
    model: PathBuf,
    /// Solve report (or `{"p1": ..., "p2": ...}`) holding the strategy pair.
    #[arg(long)]
    strategies: PathBuf,
    #[command(flatten)]
    sim: SimArgs,
    /// Also estimate `count` random stationary deviations of a player, e.g. p2:4.
    #[arg(long, value_parser = parse_deviate)]
    deviate: Option<(Player, usize)>,
    /// Write every simulated step as CSV.
    #[arg(long)]
    paths_csv: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    model: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Check the saddle inequalities by simulation.
    #[arg(long)]
    saddle: bool,
    /// Check the first-entry representation of ψ* for a target set, e.g. B=0..4 or 0,1,2.
    #[arg(long, value_parser = parse_target)]
    representation: Option<TargetSet>,
    /// Start states for the representation check (default: the two smallest domain states outside B).
    #[arg(long, value_delimiter = ',')]
    starts: Option<Vec<usize>>,
    /// Random deviations per player for the saddle check.
    #[arg(long, default_value_t = 4)]
    deviations: usize,
    #[arg(long, default_value_t = DEFAULT_HIT_CAP)]
    hit_cap: usize,
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Example {
    /// The controlled birth-death chain.
    BirthDeath(BirthDeathArgs),
}

#[derive(Args)]
struct BirthDeathArgs {
    #[arg(long, default_value_t = 0.1)]
    p_hat: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long = "L1", default_value_t = 1.0)]
    l1: f64,
    #[arg(long = "L2", default_value_t = 1.0)]
    l2: f64,
    /// Points in each action grid.
    #[arg(long, default_value_t = 5)]
    grid: usize,
    #[arg(long, default_value_t = 60)]
    window: usize,
    /// Build even when p_hat >= 1/6.
    #[arg(long)]
    allow_large_p_hat: bool,
    #[arg(long)]
    out: PathBuf,
    /// Also write the assumption-check report for states 0..=window-1.
    #[arg(long)]
    prop_report: Option<PathBuf>,
}

fn parse_deviate(s: &str) -> Result<(Player, usize), String> {
    let (p, n) = s.split_once(':').ok_or("expected player:count, e.g. p2:4")?;
    let player = match p.to_ascii_lowercase().as_str() {
        "p1" | "1" => Player::P1,
        "p2" | "2" => Player::P2,
        other => return Err(format!("unknown player {other:?}; use p1 or p2")),
    };
    let count = n.parse().map_err(|e| format!("bad count {n:?}: {e}"))?;
    Ok((player, count))
}

/// Target set of the representation check.
#[derive(Clone, Debug)]
struct TargetSet(Vec<usize>);

/// `B=a..b` (inclusive), `a..b`, or a comma list.
fn parse_target(s: &str) -> Result<TargetSet, String> {
    let body = s.strip_prefix("B=").unwrap_or(s);
    if let Some((a, b)) = body.split_once("..") {
        let a: usize = a.trim().parse().map_err(|e| format!("bad range start {a:?}: {e}"))?;
        let b: usize = b.trim().parse().map_err(|e| format!("bad range end {b:?}: {e}"))?;
        if b < a {
            return Err(format!("empty range {a}..{b}"));
        }
        return Ok(TargetSet((a..=b).collect()));
    }
    body.split(',')
        .map(|t| t.trim().parse().map_err(|e| format!("bad state {t:?}: {e}")))
        .collect::<Result<_, _>>()
        .map(TargetSet)
}

/// Usage or ingestion failure (exit 2).
struct Usage(String);

type Outcome = Result<bool, Usage>;

fn usage<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> Usage + '_ {
    move |e| Usage(format!("{context}: {e}"))
}

fn load_model(path: &Path) -> Result<GameModel, Usage> {
    let text = fs::read_to_string(path).map_err(usage(&path.display().to_string()))?;
    GameModel::from_json_str(&text).map_err(usage(&path.display().to_string()))
}

/// Prints to stdout; a closed pipe (e.g. `| head`) is not an error.
fn print(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<(), Usage> {
    match path {
        Some(p) => fs::write(p, text).map_err(usage(&p.display().to_string())),
        None => {
            print(text);
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report types serialize")
}

fn positive(name: &str, x: f64) -> Result<f64, Usage> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(Usage(format!("--{name} must be positive, got {x}")))
    }
}

fn run_validate(model: &Path) -> Outcome {
    let m = load_model(model)?;
    let report = validate_model(&m);
    print(&to_json(&report));
    Ok(report.is_well_formed())
}

#[derive(Serialize)]
struct CheckOutput {
    lyapunov: Option<LyapunovReport>,
    irreducibility_sufficient: IrreducibilityReport,
    irreducibility_sampled: IrreducibilityReport,
    reference_state: bool,
    pass: bool,
}

fn run_check(model: &Path, samples: usize, seed: u64) -> Outcome {
    let m = load_model(model)?;
    let lyapunov = check_lyapunov(&m).ok();
    let sufficient = check_irreducibility(&m, IrreducibilityMode::Sufficient);
    let sampled = check_irreducibility(&m, IrreducibilityMode::Sampled { samples, seed });
    let reference_state = check_reference_state(&m);
    let pass = lyapunov.as_ref().is_none_or(|l| l.pass) && sampled.pass && reference_state;
    let out = CheckOutput {
        lyapunov,
        irreducibility_sufficient: sufficient,
        irreducibility_sampled: sampled,
        reference_state,
        pass,
    };
    print(&to_json(&out));
    Ok(pass)
}

fn run_solve(a: &SolveArgs) -> Outcome {
    let m = load_model(&a.model)?;
    let base = a.tol.map(|t| positive("tol", t)).transpose()?;
    let opts = SolveOptions {
        tol_local: positive("tol-local", a.tol_local.or(base).unwrap_or(DEFAULT_LOCAL_TOL))?,
        tol_eig: positive("tol-eig", a.tol_eig.or(base).unwrap_or(rsgame_core::dirichlet::DEFAULT_EIG_TOL))?,
        tol_outer: positive("tol-outer", a.tol_outer)?,
        max_iter: a.max_iter,
    };
    let ladder = a.ladder.clone().unwrap_or_else(|| default_ladder(m.states()));
    let report = match solve_ergodic_game(&m, &ladder, &opts) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("solve failed: {e}");
            return Ok(false);
        }
    };
    write_or_print(a.out.as_deref(), &to_json(&report))?;
    if let Some(t) = &a.trace {
        fs::write(t, report.trace_csv()).map_err(usage(&t.display().to_string()))?;
    }
    for w in &report.diagnostics.warnings {
        eprintln!("warning: {w}");
    }
    if report.status == LadderStatus::LadderExhausted {
        eprintln!("ladder exhausted before the outer tolerance was met");
    }
    Ok(report.certified)
}

#[derive(Deserialize)]
struct StrategyPair {
    p1: StationaryStrategy,
    p2: StationaryStrategy,
}

fn load_report(path: &Path) -> Result<SolveReport, Usage> {
    let text = fs::read_to_string(path).map_err(usage(&path.display().to_string()))?;
    serde_json::from_str(&text).map_err(usage(&path.display().to_string()))
}

fn load_strategies(path: &Path) -> Result<(StationaryStrategy, StationaryStrategy), Usage> {
    let text = fs::read_to_string(path).map_err(usage(&path.display().to_string()))?;
    if let Ok(r) = serde_json::from_str::<SolveReport>(&text) {
        return Ok((r.selectors.p1, r.selectors.p2));
    }
    let pair: StrategyPair = serde_json::from_str(&text).map_err(usage(&path.display().to_string()))?;
    Ok((pair.p1, pair.p2))
}

fn sim_config(m: &GameModel, s: &SimArgs) -> SimConfig {
    SimConfig {
        absorb_exits: s.absorb,
        ..SimConfig::new(s.horizon, s.paths, s.seed, s.start.unwrap_or(m.i0()))
    }
}

#[derive(Serialize)]
struct DeviationEstimate {
    player: Player,
    kind: DeviationKind,
    strategy: StationaryStrategy,
    estimate: EstimatorReport,
}

#[derive(Serialize)]
struct SimulateOutput {
    baseline: EstimatorReport,
    deviations: Vec<DeviationEstimate>,
}

fn run_simulate(a: &SimulateArgs) -> Outcome {
    let m = load_model(&a.model)?;
    let (pi1, pi2) = load_strategies(&a.strategies)?;
    let cfg = sim_config(&m, &a.sim);
    let fail = |e: rsgame_core::montecarlo::MonteCarloError| Usage(format!("simulate: {e}"));
    let baseline = estimate_ergodic_cost(&m, &pi1, &pi2, &cfg).map_err(fail)?;
    let mut deviations = Vec::new();
    if let Some((player, count)) = a.deviate {
        for (kind, strategy) in deviation_set(&m, player, count, cfg.seed) {
            let (x, y) = match player {
                Player::P1 => (&strategy, &pi2),
                Player::P2 => (&pi1, &strategy),
            };
            let estimate = estimate_ergodic_cost(&m, x, y, &cfg).map_err(fail)?;
            deviations.push(DeviationEstimate { player, kind, strategy, estimate });
        }
    }
    if let Some(p) = &a.paths_csv {
        let batch = simulate_paths(&m, &pi1, &pi2, &cfg).map_err(fail)?;
        let file = fs::File::create(p).map_err(usage(&p.display().to_string()))?;
        batch
            .write_csv(std::io::BufWriter::new(file))
            .map_err(usage(&p.display().to_string()))?;
    }
    write_or_print(a.out.as_deref(), &to_json(&SimulateOutput { baseline, deviations }))?;
    Ok(true)
}

#[derive(Serialize)]
struct ResidualCheck {
    residual: f64,
    tol_outer: f64,
    pass: bool,
}

#[derive(Serialize)]
struct VerifyOutput {
    residual: ResidualCheck,
    #[serde(skip_serializing_if = "Option::is_none")]
    saddle: Option<SaddleVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    representation: Option<RepresentationVerdict>,
    pass: bool,
}

fn run_verify(a: &VerifyArgs) -> Outcome {
    let m = load_model(&a.model)?;
    let report = load_report(&a.report)?;
    if report.log_psi_star.len() != m.states() {
        return Err(Usage(format!(
            "report covers {} states but the model has {}",
            report.log_psi_star.len(),
            m.states()
        )));
    }
    let domain = DirichletDomain::new(&m, &report.domain).map_err(usage("report domain"))?;
    let r = residual(&m, report.rho_star, &report.log_psi_star, &domain);
    let residual_check =
        ResidualCheck { residual: r, tol_outer: report.tolerances.tol_outer, pass: r <= report.tolerances.tol_outer };
    let mut cfg = sim_config(&m, &a.sim);
    cfg.hit_cap = a.hit_cap;
    let fail = |e: rsgame_core::montecarlo::MonteCarloError| Usage(format!("verify: {e}"));

    let saddle = if a.saddle {
        Some(verify_saddle(&m, &report, &cfg, a.deviations).map_err(fail)?)
    } else {
        None
    };
    let representation = match &a.representation {
        Some(TargetSet(target)) => {
            let starts = match &a.starts {
                Some(s) => s.clone(),
                None => report.domain.iter().copied().filter(|i| !target.contains(i)).take(2).collect(),
            };
            if starts.is_empty() {
                return Err(Usage("--representation: no start states outside the target set".into()));
            }
            Some(verify_stochastic_representation(&m, &report, target, &starts, &cfg).map_err(fail)?)
        }
        None => None,
    };
    let pass = residual_check.pass
        && saddle.as_ref().is_none_or(|s| s.pass)
        && representation.as_ref().is_none_or(|v| v.verdict == Verdict::Pass);
    let out = VerifyOutput { residual: residual_check, saddle, representation, pass };
    write_or_print(a.out.as_deref(), &to_json(&out))?;
    Ok(pass)
}

fn run_birth_death(a: &BirthDeathArgs) -> Outcome {
    let params = BirthDeathParams {
        p_hat: a.p_hat,
        delta: a.delta,
        l1: a.l1,
        l2: a.l2,
        grid_u: a.grid,
        grid_v: a.grid,
        window: a.window,
        allow_large_p_hat: a.allow_large_p_hat,
        ..BirthDeathParams::default()
    };
    let (model, log) = build_birth_death_with_log(&params).map_err(usage("birth-death"))?;
    for w in &log.warnings {
        eprintln!("warning: {w}");
    }
    fs::write(&a.out, model.to_json_string()).map_err(usage(&a.out.display().to_string()))?;
    if let Some(p) = &a.prop_report {
        let report = verify_drift_assumptions(&params, params.window - 1).map_err(usage("assumption check"))?;
        fs::write(p, to_json(&report)).map_err(usage(&p.display().to_string()))?;
        return Ok(report.pass);
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("--threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("--threads: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match &cli.command {
        Command::Validate { model } => run_validate(model),
        Command::Check { model, samples, seed } => run_check(model, *samples, *seed),
        Command::Solve(a) => run_solve(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Verify(a) => run_verify(a),
        Command::Example { which: Example::BirthDeath(a) } => run_birth_death(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
