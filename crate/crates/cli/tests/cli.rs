use std::path::Path;
use std::process::Command;

const TINY: &str = r#"
name = "tiny"
episodes = 50
seeds = [0, 1]
gamma = 1.0
metrics = ["delta_q"]

[env]
name = "chain_and_split"

[exploration]
kind = "constant"
epsilon = 1.0

[[learners]]
label = "SARSA(0)"
algorithm = "sarsa_lambda"
alpha = [0.01]
lambda = [0.0]

[[learners]]
label = "Chunked SARSA"
algorithm = "chunked_sarsa"
alpha = [0.01]
model = { name = "tabular_count" }
"#;

fn chunktd(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_chunktd"))
        .args(args)
        .env("CHUNKTD_WORKERS", "2")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn verify_quick_passes() {
    let out = chunktd(&["verify", "--quick"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.contains("[PASS]"));
    assert!(!stdout.contains("[FAIL]"));
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let results = dir.path().join("out");
    let out = chunktd(&["run", &cfg, "--out", results.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["runs.csv", "totals.csv", "config.toml"] {
        assert!(results.join(f).exists(), "{f}");
    }
    let run_stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    let report = chunktd(&["report", results.to_str().unwrap()]);
    assert!(report.status.success(), "{}", String::from_utf8_lossy(&report.stderr));
    assert_eq!(String::from_utf8_lossy(&report.stdout), run_stdout);
    assert!(run_stdout.contains("Chunked SARSA"));
}

#[test]
fn run_rejects_grid_but_sweep_accepts_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TINY.replace("alpha = [0.01]\nlambda", "alpha = [0.01, 0.02]\nlambda"));
    let out_dir = dir.path().join("out");
    let out = chunktd(&["run", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(!out.status.success());
    let out = chunktd(&["sweep", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_config_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "name = \"broken\"\nepisodes = \"many\"\n");
    let out = chunktd(&["run", &cfg]);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}
