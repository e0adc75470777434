use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn ptequil(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptequil")).args(args).output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn solve_then_certify() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = fixture("three_node.cfg");
    let solved = ptequil(&["solve", "--config", cfg.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert_eq!(solved.status.code(), Some(0), "{}", text(&solved.stderr));
    assert!(text(&solved.stdout).contains("converged"));
    assert!(out.join("result.json").is_file());
    assert!(out.join("prices.csv").is_file());

    let cert = ptequil(&["certify", "--result", out.to_str().unwrap()]);
    assert_eq!(cert.status.code(), Some(0), "{}", text(&cert.stderr));
    let value: serde_json::Value = serde_json::from_str(text(&cert.stdout).trim()).unwrap();
    assert_eq!(value["pass"], true);

    let copy = dir.path().join("copy");
    let report = ptequil(&["report", "--result", out.to_str().unwrap(), "--output", copy.to_str().unwrap()]);
    assert_eq!(report.status.code(), Some(0), "{}", text(&report.stderr));
    assert_eq!(
        std::fs::read_to_string(out.join("buses.csv")).unwrap(),
        std::fs::read_to_string(copy.join("buses.csv")).unwrap()
    );
}

#[test]
fn infeasible_scenario_exits_one_with_its_id() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("three_node_short.cfg");
    let out = ptequil(&["solve", "--config", cfg.to_str().unwrap(), "--output", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_str(text(&out.stderr).trim()).unwrap();
    assert_eq!(err["error"], "infeasible");
    assert_eq!(err["scenario"], 1);
}

#[test]
fn bad_arguments_exit_two() {
    assert_eq!(ptequil(&["solve", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(ptequil(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(ptequil(&["sample-scenarios", "--count", "3", "--seed", "1"]).status.code(), Some(2));
}

#[test]
fn missing_file_is_an_io_error() {
    let out = ptequil(&["solve", "--config", "/nonexistent/run.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_str(text(&out.stderr).trim()).unwrap();
    assert_eq!(err["error"], "io");
}

#[test]
fn sampled_scenarios_are_reproducible() {
    let run = || ptequil(&["sample-scenarios", "--sites", "2,3", "--count", "4", "--seed", "9"]);
    let (a, b) = (run(), run());
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let set = ptequil::tables::parse_scenarios(&text(&a.stdout), "stdout").unwrap();
    assert_eq!(set.scenarios.len(), 4);
    assert!(set.scenarios.iter().all(|s| s.factors.values().all(|f| (0.5..=1.5).contains(f))));
}
