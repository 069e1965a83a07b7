use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fracstep"))
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        r#"{
  "final_time": 0.002,
  "steps": 20,
  "mesh": {"n_coarse": 3, "refinement": 4},
  "kappa": {"strikes": 3, "min_length": 3, "max_length": 8}
}"#,
    )
    .unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn error_record(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("an error line on stderr");
    serde_json::from_str(line).expect("error line is JSON")
}

#[test]
fn help_succeeds() {
    let out = run(&["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("check-stability"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["compare", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["error"], "usage");
}

#[test]
fn malformed_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\"steps\": ").unwrap();
    let out = run(&["gen-field", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_record(&out)["error"], "config");

    std::fs::write(&cfg, "{\"alpha\": 2.0}").unwrap();
    let out = run(&["gen-field", "--config", cfg.to_str().unwrap()]);
    assert_eq!(error_record(&out)["error"], "invalid_argument");

    let out = run(&["gen-field", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(error_record(&out)["error"], "io");
}

#[test]
fn kernel_test_exit_status() {
    let out = run(&["kernel-test", "--alpha", "0.8"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.matches("PASS").count(), 2, "{text}");

    let out = run(&["kernel-test", "--alpha", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_record(&out)["error"], "invalid_argument");
}

#[test]
fn gen_field_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let mut prints = Vec::new();
    for sub in ["a", "b"] {
        let out_dir = dir.path().join(sub);
        let out = run(&["gen-field", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
        assert!(out.status.success());
        prints.push(String::from_utf8_lossy(&out.stdout).into_owned());
        let kappa = std::fs::read_to_string(out_dir.join("kappa.txt")).unwrap();
        assert_eq!(kappa.lines().count(), 12);
        assert_eq!(kappa.lines().next().unwrap().split_whitespace().count(), 12);
        let source = std::fs::read_to_string(out_dir.join("source.txt")).unwrap();
        assert_eq!(source.lines().count(), 13);
    }
    assert_eq!(prints[0], prints[1]);
    assert!(prints[0].starts_with("fingerprint="));
    assert_eq!(
        std::fs::read(dir.path().join("a/kappa.txt")).unwrap(),
        std::fs::read(dir.path().join("b/kappa.txt")).unwrap()
    );
}

#[test]
fn compare_writes_error_series() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = run(&["compare", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let errors = std::fs::read_to_string(out_dir.join("errors.csv")).unwrap();
    let mut lines = errors.lines();
    assert_eq!(lines.next(), Some("step,t,scheme,rel_l2,rel_energy"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3 * 20);
    for scheme in ["implicit-cem", "implicit-cem-plus", "partially-explicit"] {
        assert_eq!(rows.iter().filter(|r| r.split(',').nth(2) == Some(scheme)).count(), 20);
    }
    assert!(!errors.contains('\r'));
    for f in ["energy.csv", "iterations.csv", "summary.csv", "stability.csv"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    assert!(out_dir.join("snapshots/implicit-fine_step000020.txt").exists());
}

#[test]
fn compare_scheme_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = run(&[
        "compare",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--schemes",
        "implicit-cem,explicit",
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("explicit seconds="));
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    let explicit = summary.lines().find(|l| l.starts_with("explicit,")).unwrap();
    assert!(!explicit.split(',').nth(2).unwrap().is_empty(), "explicit run must be flagged: {explicit}");

    let out = run(&["compare", "--config", cfg.to_str().unwrap(), "--schemes", "leapfrog"]);
    assert_eq!(error_record(&out)["error"], "invalid_argument");
}

#[test]
fn check_stability_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = run(&["check-stability", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("satisfied="));
    assert!(text.contains("max_stable_dt="));
    let csv = std::fs::read_to_string(out_dir.join("stability.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("gamma,lambda2,"));
}

#[test]
fn run_and_basis_commands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = run(&["build-basis", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("dim1=27 dim2=27"));
    assert!(out_dir.join("basis/basis.txt").exists());
    let manifest = std::fs::read_to_string(out_dir.join("basis/manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 54);

    let out = run(&[
        "run",
        "--scheme",
        "implicit-cem",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let traj = std::fs::read_to_string(out_dir.join("trajectory_implicit-cem.csv")).unwrap();
    assert_eq!(traj.lines().count(), 1 + 21);
}
