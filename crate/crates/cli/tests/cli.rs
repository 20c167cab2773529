use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

/// Short analysis that still passes the surrogate hold-out check: a 4-step
/// gait period, horizon 5 and a denser surrogate fit.
const SMALL: &str = r#"{"analysis":{"horizon":5,"lip":{"period_steps":4},"volume_samples":2000,"balance":{"volume_samples":2000},"fit":{"samples":1200}},"sim":{"plan":{"horizon":5}}}"#;

fn quadcap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadcap")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Directory holding a short-horizon archive, computed once per test binary.
fn workdir() -> &'static Path {
    static DIR: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    &DIR.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = write(tmp.path(), "small.json", SMALL);
        let out = tmp.path().join("a");
        let o = quadcap(&["analyze", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        (tmp, out)
    })
    .1
}

fn archive() -> String {
    workdir().join("archive.json").to_str().unwrap().to_string()
}

/// Run config matching the short archive.
fn config() -> String {
    workdir().parent().unwrap().join("small.json").to_str().unwrap().to_string()
}

#[test]
fn analyze_writes_archive_summary_and_slices() {
    let dir = workdir();
    let a = read_json(&dir.join("archive.json"));
    assert_eq!(a["schema"], "quadcap.tube-archive/1");
    assert_eq!(a["config"]["horizon"], 5);
    let summary = std::fs::read_to_string(dir.join("summary.txt")).unwrap();
    assert!(summary.starts_with("# schema: quadcap.analysis-summary/1\n# config: {"));
    let slices = std::fs::read_to_string(dir.join("slices.csv")).unwrap();
    let rows: Vec<&str> = slices.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "tube,k,phase,plane,vertex,u,v");
    assert!(rows.len() > 100);
}

#[test]
fn analysis_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.json", SMALL);
    let out = tmp.path().join("b");
    let o = quadcap(&["analyze", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let first = std::fs::read(workdir().join("archive.json")).unwrap();
    let second = std::fs::read(out.join("archive.json")).unwrap();
    assert!(first == second, "archives differ");
}

#[test]
fn empty_target_region_is_an_analysis_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "c.json",
        r#"{"analysis":{"horizon":3,"lip":{"target_region":[[0.1,-0.1],[-0.2,0.2],[-0.11,0.11],[-0.2,0.2]]}}}"#,
    );
    let o = quadcap(&["analyze", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!tmp.path().join("o/archive.json").exists());
}

#[test]
fn configuration_errors_exit_with_4() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_dt = write(tmp.path(), "dt.json", r#"{"analysis":{"lip":{"dt":-0.05}}}"#);
    let garbage = write(tmp.path(), "g.json", "{not json");
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    let a = archive();
    let cases: Vec<Vec<&str>> = vec![
        vec!["analyze", "--config", &bad_dt, "--out", out],
        vec!["analyze", "--config", &garbage, "--out", out],
        vec!["analyze", "--config", "/nonexistent/cfg.json", "--out", out],
        vec!["plan", "--state", "0,0,0,0", "--out", out],
        vec!["plan", "--archive", "/nonexistent/archive.json", "--state", "0,0,0,0", "--out", out],
        vec!["plan", "--archive", &a, "--state", "0,0,0", "--out", out],
        vec!["plan", "--archive", &a, "--state", "0,0,0,0", "--phase", "4", "--out", out],
        vec!["plan", "--archive", &a, "--gait", "bound", "--state", "0,0,0,0", "--out", out],
        vec!["simulate", "--archive", &a, "--timing", "7", "--out", out],
        // planner horizon 10 by default, longer than the archive's tubes
        vec!["simulate", "--archive", &a, "--out", out],
        vec!["sweep", "--archive", &a, "--grid", "1:0:0.1,0:1:0.1", "--out", out],
        vec!["analyze", "--gait", "gallop"],
        vec!["frobnicate"],
    ];
    for args in cases {
        let o = quadcap(&args);
        assert_eq!(code(&o), 4, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn balanced_state_gives_a_noop_plan() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = quadcap(&["plan", "--archive", &archive(), "--config", &config(), "--state", "0,0,0,0", "--phase", "0", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let p = read_json(&tmp.path().join("plan.json"));
    assert_eq!(p["schema"], "quadcap.plan/1");
    assert_eq!(p["seed"], 0);
    assert_eq!(p["config"]["analysis"]["horizon"], 5);
    assert!(p["plan"]["diagnostics"]["noop"].as_bool().unwrap());
    assert_eq!(p["plan"]["delta_w"], serde_json::json!([0.0, 0.0]));
}

#[test]
fn off_balance_state_gets_a_recovery_plan() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = quadcap(&["plan", "--archive", &archive(), "--config", &config(), "--state", "0.05,0.6,-0.02,0.1", "--phase", "1", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let p = read_json(&tmp.path().join("plan.json"));
    assert!(!p["plan"]["diagnostics"]["noop"].as_bool().unwrap());
    assert!(!p["plan"]["steps"].as_array().unwrap().is_empty());
    assert!(p["plan"]["com"].as_array().unwrap().len() > 1);
}

#[test]
fn extreme_state_is_not_capturable() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = quadcap(&["plan", "--archive", &archive(), "--config", &config(), "--state", "0,5,0,-5", "--phase", "2", "--out", out]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let p = read_json(&tmp.path().join("plan.json"));
    assert!(p["error"].as_str().unwrap().contains("not capturable"));
    assert!(p["distance"].as_f64().unwrap() > 0.0);
    assert!(p.get("plan").is_none());
}

#[test]
fn simulate_writes_trajectory_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = quadcap(&["simulate", "--archive", &archive(), "--config", &config(), "--timing", "2", "--dv", "0,0", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = read_json(&tmp.path().join("simulate.json"));
    assert_eq!(s["schema"], "quadcap.simulate/1");
    assert!(s["success"].as_bool().unwrap());
    let traj = std::fs::read_to_string(tmp.path().join("trajectory.csv")).unwrap();
    let mut lines = traj.lines();
    assert!(lines.next().unwrap().starts_with("# schema: quadcap.trajectory/1"));
    assert!(lines.next().unwrap().starts_with("# config: "));
    assert!(lines.next().unwrap().starts_with("t,phase,c_x,v_x,c_y,v_y"));
    assert_eq!(lines.count(), s["steps"].as_u64().unwrap() as usize + 1);
    assert!(tmp.path().join("slices.csv").exists());
}

#[test]
fn sweep_is_repeatable_across_job_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |dir: &str, jobs: &str| {
        let out = tmp.path().join(dir);
        let o = quadcap(&[
            "sweep", "--archive", &archive(), "--config", &config(), "--timing", "3", "--grid", "-0.8:0.8:0.4,-0.8:0.8:0.4", "--jobs", jobs, "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        (std::fs::read(out.join("sweep_t3.csv")).unwrap(), read_json(&out.join("sweep_t3.json")))
    };
    let (csv1, json1) = run("j1", "1");
    let (csv2, _) = run("j2", "2");
    assert_eq!(csv1, csv2);
    assert_eq!(json1["cells"], 25);
    let mask = json1["mask"].as_array().unwrap();
    assert_eq!(mask.len(), 5);
    // the zero push sits in the middle of the grid
    assert_eq!(mask[2].as_str().unwrap().as_bytes()[2], b'#');
}

#[test]
fn show_prints_the_archive() {
    let o = quadcap(&["show", "--archive", &archive()]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("gait trot"));
    assert!(text.contains("balance slice volumes"));
}

#[test]
fn help_and_version_exit_cleanly() {
    assert_eq!(code(&quadcap(&["--help"])), 0);
    assert_eq!(code(&quadcap(&["--version"])), 0);
}
