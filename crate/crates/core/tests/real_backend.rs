mod support;

use std::time::{Duration, Instant};

use pilot_core::analytics::{compute_ttx, compute_utilization, Trace};
use pilot_core::emulator::TaskPayload;
use pilot_core::executor::{LatencyModel, LaunchMethod};
use pilot_core::model::{Backend, UnitState};
use pilot_core::profiler::{read_profile, violations};
use pilot_core::runtime::{run_session, SessionOptions, SessionStatus};
use support::{pilot, session, units};

fn real_pilot(cores: usize) -> pilot_core::model::PilotDescription {
    pilot(cores, 4, Backend::Real, LatencyModel::zero())
}

#[test]
fn sleep_units_complete() {
    let dir = tempfile::tempdir().unwrap();
    let s = session(dir.path(), real_pilot(8), units(8, 2, TaskPayload::sleep(0.2, 0.0)), SessionOptions::default());
    let out = run_session(&s).unwrap();
    assert!(out.all_done());
    assert!(out.units.iter().all(|u| u.exit_code == Some(0)));
    let trace = out.trace.unwrap();
    assert!(violations(&read_profile(&trace).unwrap().events).is_empty());
    let t = Trace::load(&trace).unwrap();
    let r = compute_ttx(&t).unwrap();
    assert_eq!(r.observed_generations, 2);
    assert!(r.ttx >= 0.4 && r.ttx < 1.5, "{}", r.ttx);
    let u = compute_utilization(&t).unwrap();
    assert!((u.workload_pct() + u.overhead_pct() + u.idle_pct() - 100.0).abs() < 0.1);
}

#[test]
fn nonzero_exit_marks_failed() {
    let dir = tempfile::tempdir().unwrap();
    let mut u = units(3, 1, TaskPayload::sleep(0.05, 0.0));
    u[1].payload = TaskPayload::external(vec!["sh".into(), "-c".into(), "exit 3".into()], 0.05);
    let s = session(dir.path(), real_pilot(4), u, SessionOptions::default());
    let out = run_session(&s).unwrap();
    assert_eq!(out.units[1].state, UnitState::Failed);
    assert_eq!(out.units[1].exit_code, Some(3));
    assert_eq!(out.count(UnitState::Done), 2);
    assert!(!out.all_done());
}

#[test]
fn shell_wrapper_exports_placement() {
    let dir = tempfile::tempdir().unwrap();
    let mut u = units(2, 4, TaskPayload::sleep(0.05, 0.0));
    for unit in &mut u {
        unit.payload = TaskPayload::external(
            vec!["sh".into(), "-c".into(), "echo $PILOT_CORES $PILOT_SLOTS".into()],
            0.05,
        );
    }
    let s = session(
        dir.path(),
        real_pilot(8),
        u,
        SessionOptions {
            launch: LaunchMethod::ShellWrapper,
            ..SessionOptions::default()
        },
    );
    let out = run_session(&s).unwrap();
    assert!(out.all_done());
    let text = std::fs::read_to_string(out.dir.join("sandbox/unit.000000.out")).unwrap();
    assert!(text.starts_with("4 "), "{text}");
    assert!(out.dir.join("sandbox/unit.000000.sh").exists());
}

#[test]
fn walltime_aborts_real_session() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = real_pilot(4);
    p.walltime = 0.3;
    let s = session(dir.path(), p, units(4, 1, TaskPayload::sleep(5.0, 0.0)), SessionOptions::default());
    let start = Instant::now();
    let out = run_session(&s).unwrap();
    assert!(start.elapsed() < Duration::from_secs(3));
    assert_eq!(out.status, SessionStatus::Aborted);
    assert_eq!(out.count(UnitState::Canceled), 4);
    let events = read_profile(out.trace.as_ref().unwrap()).unwrap().events;
    assert!(violations(&events).is_empty());
}

#[test]
fn several_executors_share_the_work() {
    let dir = tempfile::tempdir().unwrap();
    let s = session(
        dir.path(),
        real_pilot(16),
        units(32, 1, TaskPayload::sleep(0.05, 0.01)),
        SessionOptions {
            executors: 4,
            seed: 2,
            ..SessionOptions::default()
        },
    );
    let out = run_session(&s).unwrap();
    assert!(out.all_done());
}
