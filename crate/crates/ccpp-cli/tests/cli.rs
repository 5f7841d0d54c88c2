use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ccpp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccpp"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

#[test]
fn missing_file_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccpp(&["solve", "no_such_problem.json"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not found"));
}

#[test]
fn unknown_method_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccpp(&["solve", "case1", "--method", "magic"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    let out = ccpp(&["compare", "case1", "--methods", "cpp-mip,magic", "--n", "1"], dir.path());
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn bad_flag_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccpp(&["solve", "case1", "--divergence", "hellinger"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    let out = ccpp(&["certify", "case1", "--x", "1,2"], dir.path());
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn jcco_kkt_enumerate_at_k8_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccpp(
        &["solve", "jcco", "--method", "cpp-kkt", "--backend", "enumerate", "--k", "8"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn tiny_enumerate_solve_matches_branch_and_bound() {
    let dir = tempfile::tempdir().unwrap();
    let run = |backend: &str| {
        let out = ccpp(
            &["--seed", "3", "solve", "case1", "--method", "cpp-kkt", "--backend", backend, "--k", "3", "--delta", "0.6", "--multistart", "3"],
            dir.path(),
        );
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        json(&out)
    };
    let (e, b) = (run("enumerate"), run("bnb"));
    assert_eq!(e["status"], "optimal");
    let (je, jb) = (e["objective"].as_f64().unwrap(), b["objective"].as_f64().unwrap());
    assert!((je - jb).abs() < 1e-6, "{je} vs {jb}");
}

#[test]
fn solve_with_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccpp(
        &["--seed", "1", "solve", "case1", "--method", "cpp-mip", "--k", "500", "--certify", "--l", "1000"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["status"], "optimal");
    let x = v["x"][0].as_f64().unwrap();
    assert!((-10.0..=-2.72).contains(&x));
    assert!((v["objective"].as_f64().unwrap() - x.powi(3) * x.exp()).abs() < 1e-9);
    let c = &v["certificate"];
    let bound = c["bound"].as_f64().unwrap();
    assert!((-2.0..0.5).contains(&bound), "{bound}");
    assert!(c.get("scores").is_none());
}

#[test]
fn certify_reports_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccpp(&["certify", "case1", "--x", "-4.5", "--l", "200", "--v", "500"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let ec0 = v["ec0"].as_f64().unwrap();
    assert!((0.85..=1.0).contains(&ec0), "{ec0}");
}

#[test]
fn experiment_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccpp(
        &["--output-dir", "run", "experiment", "case1", "--method", "cpp-mip", "--k", "50", "--l", "200", "--n", "4", "--v", "200", "--svg"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    let csv = std::fs::read_to_string(run.join("trials.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("trial,status,"));
    for f in ["summary.json", "hist_bound.csv", "hist_ec0.csv", "hist_objective.svg"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["trials"], 4);
    assert_eq!(json(&out)["summary"]["trials"], 4);
}

#[test]
fn compare_uses_shared_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccpp(
        &["-v", "--output-dir", "cmp", "compare", "case1", "--methods", "cpp-mip,sa,saa", "--omega", "0.03", "--k", "40", "--l", "100", "--v", "100", "--n", "2"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["summaries"].as_array().unwrap().len(), 3);
    for m in ["cpp-mip", "sa", "saa"] {
        assert!(dir.path().join("cmp").join(m).join("trials.csv").exists());
    }
    // Every method reports the same data fingerprint for each trial.
    let err = String::from_utf8_lossy(&out.stderr);
    for t in 0..2 {
        let prints: Vec<&str> = err
            .lines()
            .filter(|l| l.contains(&format!("trial {t}: data")))
            .map(|l| l.rsplit(' ').next().unwrap())
            .collect();
        assert_eq!(prints.len(), 3);
        assert!(prints.iter().all(|p| *p == prints[0]));
    }
}

#[test]
fn emit_ir_prints_the_program() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccpp(&["emit-ir", "case1", "--method", "cpp-mip", "--k", "5", "--delta", "0.5"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["meta"]["origin"], "cpp-mip");
    assert_eq!(v["vars"].as_array().unwrap().len(), 6);
    let out = ccpp(&["emit-ir", "case1", "--method", "penalty", "--k", "5", "--delta", "0.5"], dir.path());
    assert_eq!(out.status.code(), Some(4));
}
