use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_rsgame");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const TRAP: &str = r#"{
    "states": 2,
    "actions_p1": [["a"], ["a"]],
    "actions_p2": [["b"], ["b"]],
    "transition": [
        {"i": 0, "u": 0, "v": 0, "j": 1, "p": 1.0},
        {"i": 1, "u": 0, "v": 0, "j": 1, "p": 1.0}
    ],
    "cost": [
        {"i": 0, "u": 0, "v": 0, "c": 0.5},
        {"i": 1, "u": 0, "v": 0, "c": 1.0}
    ],
    "i0": 0
}"#;

const TWO_STATE: &str = r#"{
    "states": 2,
    "actions_p1": [["a"], ["a"]],
    "actions_p2": [["b"], ["b"]],
    "transition": [
        {"i": 0, "u": 0, "v": 0, "j": 0, "p": 0.5},
        {"i": 0, "u": 0, "v": 0, "j": 1, "p": 0.5},
        {"i": 1, "u": 0, "v": 0, "j": 0, "p": 0.5},
        {"i": 1, "u": 0, "v": 0, "j": 1, "p": 0.5}
    ],
    "cost": [
        {"i": 0, "u": 0, "v": 0, "c": 0.0},
        {"i": 1, "u": 0, "v": 0, "c": 0.6931471805599453}
    ],
    "i0": 0,
    "closed": true
}"#;

#[test]
fn example_then_validate() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["example", "birth-death", "--out", "m.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(dir.path(), &["validate", "m.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["violations"].as_array().unwrap().is_empty());
}

#[test]
fn solve_then_verify_saddle_on_birth_death() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["example", "birth-death", "--out", "m.json"])), 0);
    let o = run(dir.path(), &["solve", "m.json", "--out", "r.json", "--trace", "t.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let trace = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert!(trace.starts_with("n,domain_size,rho_n,bracket_width,iterations\n"));
    let o = run(
        dir.path(),
        &["verify", "m.json", "--report", "r.json", "--saddle", "--T", "2000", "--N", "20000", "--out", "v.json"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&dir.path().join("v.json"));
    assert_eq!(v["saddle"]["pass"], true);
    assert_eq!(v["residual"]["pass"], true);
}

#[test]
fn verify_is_deterministic_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.json"), TWO_STATE).unwrap();
    assert_eq!(code(&run(dir.path(), &["solve", "m.json", "--ladder", "2", "--out", "r.json"])), 0);
    let a = run(dir.path(), &["--threads", "1", "verify", "m.json", "--report", "r.json", "--representation", "B=0", "--N", "5000"]);
    let b = run(dir.path(), &["--threads", "2", "verify", "m.json", "--report", "r.json", "--representation", "B=0", "--N", "5000"]);
    assert_eq!(a.stdout, b.stdout);
    let a = run(dir.path(), &["--threads", "1", "simulate", "m.json", "--strategies", "r.json", "--T", "20", "--N", "50", "--paths-csv", "p1.csv"]);
    let b = run(dir.path(), &["--threads", "2", "simulate", "m.json", "--strategies", "r.json", "--T", "20", "--N", "50", "--paths-csv", "p2.csv"]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let csv1 = std::fs::read(dir.path().join("p1.csv")).unwrap();
    let csv2 = std::fs::read(dir.path().join("p2.csv")).unwrap();
    assert_eq!(csv1, csv2);
    assert!(csv1.starts_with(b"path,step,state,u,v,cost\n"));
}

#[test]
fn report_round_trips_through_verify() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.json"), TWO_STATE).unwrap();
    assert_eq!(code(&run(dir.path(), &["solve", "m.json", "--ladder", "2", "--out", "r.json"])), 0);
    let r = json(&dir.path().join("r.json"));
    let rho = r["rho_star"].as_f64().unwrap();
    assert!((rho - 1.5f64.ln()).abs() < 1e-9);
    let o = run(dir.path(), &["verify", "m.json", "--report", "r.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn collapse_is_a_failed_solve() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("trap.json"), TRAP).unwrap();
    let o = run(dir.path(), &["solve", "trap.json", "--ladder", "1,2"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("collapse"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_two_and_name_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.json"), TWO_STATE).unwrap();
    let o = run(dir.path(), &["solve", "m.json", "--tol", "0"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--tol"));
    let o = run(dir.path(), &["simulate", "m.json", "--strategies", "m.json", "--deviate", "p3:2"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--deviate"));
    let o = run(dir.path(), &["solve", "missing.json"]);
    assert_eq!(code(&o), 2);
    std::fs::write(dir.path().join("bad.json"), "{\"states\": 1, \"oops\": true}").unwrap();
    assert_eq!(code(&run(dir.path(), &["validate", "bad.json"])), 2);
}

#[test]
fn invalid_model_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let heavy = TWO_STATE.replace("\"j\": 1, \"p\": 0.5},\n        {\"i\": 1", "\"j\": 1, \"p\": 1.0},\n        {\"i\": 1");
    std::fs::write(dir.path().join("m.json"), heavy).unwrap();
    let o = run(dir.path(), &["validate", "m.json"]);
    assert_eq!(code(&o), 1);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["violations"][0]["kind"], "row_sum_exceeded");
}

#[test]
fn check_reports_birth_death_assumptions() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["example", "birth-death", "--window", "40", "--out", "m.json", "--prop-report", "p.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&dir.path().join("p.json"))["pass"], true);
    let o = run(dir.path(), &["check", "m.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}
