use std::path::Path;

use pilot_core::config::{load_resource, load_session, ConfigError};
use pilot_core::emulator::PayloadKind;
use pilot_core::harness::{run_matrix, validate_config, ExperimentMatrix, MatrixMode, RunMetrics};
use pilot_core::model::{Backend, UnitState};
use pilot_core::runtime::{run_session, SchedulerCost};
use pilot_core::scheduler::SchedulerKind;

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn minimal_matrix_gets_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let m = validate_config(&write(dir.path(), "m.toml", "")).unwrap();
    assert_eq!(m.mode, MatrixMode::Weak);
    assert_eq!(m.task_counts, vec![8, 16, 32, 64]);
    assert_eq!(m.pilot_cores, vec![32, 64, 128, 256]);
    assert_eq!(m.cores_per_task, 4);
    assert_eq!(m.cores_per_node, 16);
    assert_eq!(m.repetitions, 3);
    assert_eq!(m.payload.kind, PayloadKind::Sleep);
    assert_eq!(m.payload.target_duration, 3.0);
    assert_eq!(m.payload.jitter_sigma, 0.05);
    assert_eq!(m.scheduler, SchedulerKind::ContinuousSearch);
    assert_eq!(m.backend, Backend::Virtual);
    let echoed = m.echo();
    assert!(echoed.contains("repetitions = 3"), "{echoed}");
    let again = pilot_core::harness::matrix_from_table(&echoed.parse().unwrap(), dir.path()).unwrap();
    assert_eq!(again.pilot_cores, m.pilot_cores);
}

#[test]
fn weak_ratio_mismatch_names_the_index() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "m.toml",
        "task_counts = [8, 16, 32]\npilot_cores = [32, 64, 96]\n",
    );
    match validate_config(&p) {
        Err(ConfigError::Schema { path, .. }) => assert_eq!(path, "pilot_cores[2]"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_scheduler_is_unknown_key() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "m.toml", "scheduler = \"torus\"\n");
    assert!(matches!(validate_config(&p), Err(ConfigError::UnknownKey { .. })));
    let p = write(dir.path(), "n.toml", "[scheduler]\nkind = \"torus\"\n");
    assert!(matches!(validate_config(&p), Err(ConfigError::UnknownKey { .. })));
}

#[test]
fn stray_key_is_unknown_key() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "m.toml", "[payload]\nduraton = 3\n");
    match validate_config(&p) {
        Err(ConfigError::UnknownKey { path }) => assert_eq!(path, "payload.duraton"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn empty_task_counts_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "m.toml", "task_counts = []\npilot_cores = []\n");
    assert!(matches!(validate_config(&p), Err(ConfigError::Schema { .. })));
}

#[test]
fn wrong_type_reports_path() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "m.toml", "[agent]\nexecutors = \"two\"\n");
    match validate_config(&p) {
        Err(ConfigError::Schema { path, .. }) => assert_eq!(path, "agent.executors"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn weak_matrix_runs_one_generation_each() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = ExperimentMatrix::weak(vec![8, 16, 32, 64], 4);
    m.repetitions = 1;
    m.output = dir.path().join("out");
    assert_eq!(m.generations(), vec![1, 1, 1, 1]);
    let report = run_matrix(&m).unwrap();
    assert_eq!(report.runs.len(), 4);
    assert!(report.all_clean());
    for r in &report.runs {
        let metrics = r.result.as_ref().unwrap();
        assert_eq!(metrics.generations, 1);
        assert_eq!(metrics.observed_generations, 1);
    }
    let summary = std::fs::read_to_string(&report.summary_csv).unwrap();
    assert_eq!(summary.lines().count(), 5);
}

#[test]
fn strong_matrix_generations_halve() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = ExperimentMatrix::strong(256, vec![256, 512, 1024], 4);
    m.repetitions = 1;
    m.output = dir.path().join("out");
    assert_eq!(m.generations(), vec![4, 2, 1]);
    let report = run_matrix(&m).unwrap();
    let observed: Vec<usize> = report
        .runs
        .iter()
        .map(|r| r.result.as_ref().unwrap().observed_generations)
        .collect();
    assert_eq!(observed, vec![4, 2, 1]);
}

#[test]
fn summary_rows_recompute_from_traces() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = ExperimentMatrix::weak(vec![8, 16], 4);
    m.repetitions = 2;
    m.latency = pilot_core::executor::LatencyModel::titan();
    m.scale_factor = 100.0;
    m.output = dir.path().join("out");
    let report = run_matrix(&m).unwrap();
    let csv = std::fs::read_to_string(&report.sessions_csv).unwrap();
    for (r, line) in report.runs.iter().zip(csv.lines().skip(1)) {
        let again = RunMetrics::from_trace(&r.result.as_ref().unwrap().trace).unwrap();
        let ttx: f64 = line.split(',').nth(7).unwrap().parse().unwrap();
        assert!((ttx - again.ttx).abs() < 1e-5);
    }
}

#[test]
fn failing_session_does_not_stop_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = ExperimentMatrix::weak(vec![2, 4], 4);
    m.repetitions = 1;
    m.cores_per_node = 4;
    m.agent.executors = 0;
    m.output = dir.path().join("out");
    let report = run_matrix(&m).unwrap();
    assert_eq!(report.runs.len(), 2);
    assert!(report.runs.iter().all(|r| r.result.is_err()));
    let csv = std::fs::read_to_string(&report.sessions_csv).unwrap();
    assert_eq!(csv.matches("failed").count(), 2);
}

#[test]
fn matrix_seeds_are_distinct_and_stable() {
    let m = ExperimentMatrix::weak(vec![8, 16], 4);
    let seeds: Vec<u64> = (0..2).flat_map(|c| (0..3).map(move |r| (c, r))).map(|(c, r)| m.session_seed(c, r)).collect();
    let mut uniq = seeds.clone();
    uniq.dedup();
    assert_eq!(uniq.len(), 6);
    assert_eq!(seeds, (0..6).collect::<Vec<u64>>());
}

#[test]
fn session_config_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "res.toml",
        "[resource]\nname = \"desk\"\ncores_per_node = 8\nnodes = [\"b\", \"a\", \"c\", \"d\"]\n",
    );
    let p = write(
        dir.path(),
        "s.toml",
        r#"
session = "demo"
seed = 9
scheduler = "homogeneous"

[pilot]
resource_file = "res.toml"
walltime = 100

[workload]
count = 8
cores = 4
kind = "sleep"
duration = 2.0
jitter = 0.1

[latency]
preset = "titan"
time_scale = 10

[agent]
executors = 2
"#,
    );
    let cfg = load_session(&p).unwrap();
    assert_eq!(cfg.pilot.resource, "desk");
    assert_eq!(cfg.pilot.node_names, vec!["b", "a", "c", "d"]);
    assert_eq!(cfg.pilot.walltime, 100.0);
    assert_eq!(cfg.options.scheduler, SchedulerKind::HomogeneousLookup);
    assert_eq!(cfg.options.executors, 2);
    assert_eq!(cfg.options.seed, 9);
    assert!(matches!(cfg.options.cost, SchedulerCost::Zero));
    assert!((cfg.pilot.latency.prepare.median - pilot_core::executor::LatencyModel::titan().prepare.median / 10.0).abs() < 1e-12);
    let out = run_session(&cfg.session()).unwrap();
    assert_eq!(out.count(UnitState::Done), 8);
    assert_eq!(out.dir, dir.path().join("runs").join("demo"));
}

#[test]
fn resource_needs_cores_per_node() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "r.toml", "[resource]\nnode_count = 2\n");
    match load_resource(&p) {
        Err(ConfigError::Schema { path, .. }) => assert_eq!(path, "resource.cores_per_node"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn session_rejects_command_without_argv() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "s.toml",
        "[pilot]\ncores = 8\ncores_per_node = 4\n[workload]\ncount = 1\nkind = \"command\"\n",
    );
    match load_session(&p) {
        Err(ConfigError::Schema { path, .. }) => assert_eq!(path, "workload.command"),
        other => panic!("{other:?}"),
    }
}
