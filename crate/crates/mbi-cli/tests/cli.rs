//! End-to-end checks of the `mbi` binary: flags, exit codes, file outputs.

use std::process::{Command, Output};

fn mbi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mbi"))
        .args(args)
        .env_remove("MBI_SEED")
        .output()
        .expect("binary runs")
}

fn mbi_with_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mbi"))
        .args(args)
        .env_remove("MBI_SEED")
        .env(key, value)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

#[test]
fn list_names_every_scenario() {
    let out = mbi(&["list"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for name in [
        "assembly_line",
        "quadratic_n",
        "scaling",
        "effort_tradeoff",
        "noisy",
        "tracking",
        "nonconvex",
        "asymmetric_info",
        "bic",
        "heterogeneous",
    ] {
        assert!(text.contains(&format!("{name}: ")), "missing {name}");
    }
}

#[test]
fn run_prints_params_and_metrics() {
    let out = mbi(&["run", "assembly_line"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("scenario: assembly_line"));
    assert!(text.contains("converged=1"));
    assert!(text.contains("eta=4e-1"));
    assert!(text.contains("final_loss="));
}

#[test]
fn run_honors_overrides() {
    let out = mbi(&["run", "assembly_line", "--set", "max_cycles=3"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("cycles=3"));
    assert!(text.contains("converged=0"));
}

#[test]
fn unknown_scenarios_and_params_fail_cleanly() {
    let out = mbi(&["run", "warp_drive"]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("unknown scenario"), "{err}");
    assert!(err.contains("assembly_line"), "lists what exists: {err}");

    let out = mbi(&["run", "assembly_line", "--set", "banana=1"]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("no parameter"), "{err}");

    let out = mbi(&["run", "assembly_line", "--set", "eta"]);
    assert!(!out.status.success());
}

#[test]
fn trace_csv_has_one_row_per_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let out = mbi(&[
        "run",
        "assembly_line",
        "--trace",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    let cycles: usize = extract(&text, "cycles=") as usize;
    let csv = std::fs::read_to_string(&path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "cycle,loss,grad_norm,total_effort,wall_nanos"
    );
    assert_eq!(lines.count(), cycles);
}

#[test]
fn seed_flag_and_env_agree() {
    let flag = mbi(&["run", "noisy", "--seed", "7"]);
    let env = mbi_with_env(&["run", "noisy"], "MBI_SEED", "7");
    let setp = mbi(&["run", "noisy", "--set", "seed=7"]);
    assert!(flag.status.success());
    assert_eq!(stdout(&flag), stdout(&env));
    assert_eq!(stdout(&flag), stdout(&setp));
    let other = mbi(&["run", "noisy", "--seed", "8"]);
    assert_ne!(stdout(&flag), stdout(&other));
}

#[test]
fn bad_env_seed_is_an_error() {
    let out = mbi_with_env(&["run", "noisy"], "MBI_SEED", "lucky");
    assert!(!out.status.success());
}

#[test]
fn bench_reports_rows_and_slope() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bench.csv");
    let out = mbi(&[
        "bench",
        "--sizes",
        "50,200",
        "--cycles",
        "3",
        "--csv",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("agents=50 "));
    assert!(text.contains("agents=200 "));
    assert!(text.contains("slope="));
    let csv = std::fs::read_to_string(&path).unwrap();
    assert!(csv.starts_with("agents,median_cycle_nanos\n"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn audits_expose_pass_fail_exit_codes() {
    let ok = mbi(&["audit", "vcg"]);
    assert!(ok.status.success());
    assert!(stdout(&ok).contains("vcg_audit=PASS"));

    let bad = mbi(&["audit", "vcg", "--corrupt", "0"]);
    assert!(!bad.status.success());
    assert!(stdout(&bad).contains("vcg_audit=FAIL"));

    let inc = mbi(&["audit", "incentive", "--scenario", "quadratic_n", "--set", "agents=5"]);
    assert!(inc.status.success(), "{}", stdout(&inc));

    let honest = mbi(&["audit", "bic"]);
    assert!(honest.status.success());
    assert!(stdout(&honest).contains("verdict=Truthful"));

    let control = mbi(&["audit", "bic", "--set", "ignore_reports=1"]);
    assert!(!control.status.success());
    assert!(stdout(&control).contains("verdict=NonInformative"));
}

#[test]
fn audit_rejects_graphless_scenarios() {
    let out = mbi(&["audit", "vcg", "--scenario", "asymmetric_info"]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("no mechanism graph"), "{err}");
}

#[test]
fn trace_note_for_graphless_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("none.csv");
    let out = mbi(&["run", "bic", "--trace", path.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(!path.exists());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("no per-cycle trace"));
}

fn extract(text: &str, key: &str) -> f64 {
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix(key) {
            return rest.trim().parse().unwrap();
        }
    }
    panic!("missing `{key}` in:\n{text}");
}
