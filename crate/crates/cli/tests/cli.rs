use std::path::Path;
use std::process::{Command, Output};

fn pilot(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pilot"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

const SESSION: &str = r#"
session = "cli"
seed = 4

[pilot]
cores = 16
cores_per_node = 8

[workload]
count = 8
cores = 2
duration = 0.3
"#;

#[test]
fn run_virtual_session_and_analyze() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.toml"), SESSION).unwrap();
    let out = pilot(&["run", "s.toml", "--backend", "virtual"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("status      completed"), "{stdout}");
    let trace = dir.path().join("runs/cli/unified.prof");
    assert!(trace.exists());

    let out = pilot(&["analyze", "runs/cli/unified.prof", "--report", "ttx,ru", "--out", "an"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let files: Vec<_> = std::fs::read_dir(dir.path().join("an")).unwrap().collect();
    assert!(files.len() >= 2);
}

#[test]
fn run_real_session_with_builtin_emulator() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.toml"), SESSION).unwrap();
    let out = pilot(&["run", "s.toml", "--backend", "real", "--profile", "off"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("runs/cli/unified.prof").exists());
}

#[test]
fn failing_units_give_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SESSION.replace("duration = 0.3", "kind = \"command\"\ncommand = [\"sh\", \"-c\", \"exit 3\"]\nduration = 0.1");
    std::fs::write(dir.path().join("s.toml"), cfg).unwrap();
    let out = pilot(&["run", "s.toml", "--backend", "real"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.toml"), "scheduler = \"torus\"\n").unwrap();
    let out = pilot(&["validate", "m.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));
}

#[test]
fn validate_echoes_defaults() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.toml"), "mode = \"strong\"\n").unwrap();
    let out = pilot(&["validate", "m.toml"], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("pilot_cores = [256, 512, 1024]"), "{stdout}");
}

#[test]
fn matrix_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("m.toml"),
        "task_counts = [4, 8]\nrepetitions = 2\nscale_factor = 10\noutput = \"mx\"\n",
    )
    .unwrap();
    let out = pilot(&["matrix", "m.toml", "--seed", "5"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(dir.path().join("mx/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert_eq!(std::fs::read_dir(dir.path().join("mx")).unwrap().count(), 6);
}

#[test]
fn emulate_sleep_and_burn() {
    let dir = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    let out = pilot(&["emulate", "--kind", "sleep", "--duration", "0.2"], dir.path());
    assert!(out.status.success());
    assert!(start.elapsed().as_secs_f64() >= 0.2);
    let out = pilot(&["emulate", "--kind", "flop-burn", "--duration", "0", "--flops", "1000"], dir.path());
    assert!(out.status.success());
    let out = pilot(&["emulate", "--kind", "flop-burn", "--duration", "1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
