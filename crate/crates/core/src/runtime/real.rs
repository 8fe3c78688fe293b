//! Real backend: one thread per component, child processes for payloads
//! and a single session clock shared by every worker.

use std::collections::HashMap;
use std::fs;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::process::Child;
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{never, select, TryRecvError};

use crate::emulator::sample_duration;
use crate::executor::{build_launch_command, collect_completion, spawn, ExecError, LaunchContext};
use crate::model::{Backend, ComputeUnit, ResourceModel, UnitState};
use crate::profiler::{EventName, Recorder};
use crate::scheduler::{build_scheduler, SchedulerLoop, Step};
use crate::Seconds;

use super::{channel, unit_rng, BackendRun, BridgeReceiver, BridgeSender, Recorders, Recv, RuntimeError, Session, SessionStatus, WorkloadStore};

#[derive(Clone, Copy)]
struct Clock(Instant);

impl Clock {
    fn now(&self) -> Seconds {
        self.0.elapsed().as_secs_f64()
    }
}

const POLL: Duration = Duration::from_millis(1);
const IDLE_WAIT: Duration = Duration::from_millis(20);

pub(crate) fn run(
    session: &Session,
    model: ResourceModel,
    block: usize,
    flops: Option<f64>,
    rec: Recorders,
    start: Instant,
) -> Result<BackendRun, RuntimeError> {
    let opts = &session.options;
    let clock = Clock(start);
    let n = session.units.len();
    let min_cores = session.units.iter().map(|u| u.cores).min().unwrap_or(1);
    let capacity = 2 * (model.total_cores() / min_cores).max(1);
    let sandbox = session.dir.join("sandbox");
    fs::create_dir_all(&sandbox).map_err(|source| RuntimeError::Io {
        path: sandbox.clone(),
        source,
    })?;
    let ctx = LaunchContext {
        backend: Backend::Real,
        sandbox,
        emulator: opts.emulator.clone(),
        flops_per_second: flops,
    };
    let deadline = start + Duration::from_secs_f64(session.pilot.walltime.min(1.0e9));
    let cancel = AtomicBool::new(false);
    let cpn = model.cores_per_node();
    let snapshot = model.clone();
    let sched = SchedulerLoop::new(build_scheduler(opts.scheduler, model, block)?, cpn);
    let mut store = WorkloadStore::in_memory(session.units.clone())?;
    let batch = opts.pull_batch.unwrap_or(NonZeroUsize::MIN.saturating_add(n));

    let (units_tx, units_rx) = channel::<ComputeUnit>("db-scheduler", capacity);
    let (exec_tx, exec_rx) = channel::<ComputeUnit>("scheduler-executor", capacity);
    let (rel_tx, rel_rx) = channel::<ComputeUnit>("executor-scheduler", capacity);

    let Recorders {
        db,
        scheduler,
        agent,
        executors: exec_recs,
    } = rec;

    let (db_out, sched_out, exec_out) = thread::scope(|s| {
        let cancel = &cancel;
        let db_handle = s.spawn(move || {
            db_worker(&mut store, batch, opts.seed, units_tx, db, cancel, clock)
        });
        let sched_handle = s.spawn(move || {
            scheduler_worker(sched, units_rx, rel_rx, exec_tx, scheduler, agent, cancel, deadline, clock)
        });
        let exec_handles: Vec<_> = exec_recs
            .into_iter()
            .map(|r| {
                let rx = exec_rx.clone();
                let tx = rel_tx.clone();
                let ctx = ctx.clone();
                let model = &snapshot;
                let dir = session.dir.as_path();
                s.spawn(move || executor_worker(rx, tx, r, ctx, model, dir, opts.launch, cancel, clock))
            })
            .collect();
        drop(exec_rx);
        drop(rel_tx);
        let sched_out = join(sched_handle, "scheduler");
        if sched_out.is_err() {
            cancel.store(true, Ordering::SeqCst);
        }
        let exec_out: Vec<_> = exec_handles.into_iter().map(|h| join(h, "executor")).collect();
        let db_out = join(db_handle, "db");
        (db_out, sched_out, exec_out)
    });

    let (mut units, db_rec) = db_out?;
    let (finished, generations, sched_rec, agent_rec, aborted) = sched_out?;
    let exec_recs = exec_out.into_iter().collect::<Result<Vec<_>, _>>()?;
    units.extend(finished);
    if units.len() != n {
        return Err(RuntimeError::WorkerPanic(format!(
            "{} of {n} units came back from the agent",
            units.len()
        )));
    }
    let order: HashMap<&str, usize> = session
        .units
        .iter()
        .enumerate()
        .map(|(i, u)| (u.id.as_str(), i))
        .collect();
    units.sort_by_key(|u| order[u.id().as_str()]);
    Ok(BackendRun {
        units,
        generations,
        status: if aborted {
            SessionStatus::Aborted
        } else {
            SessionStatus::Completed
        },
        end: clock.now(),
        recorders: Recorders {
            db: db_rec,
            scheduler: sched_rec,
            agent: agent_rec,
            executors: exec_recs,
        },
    })
}

fn join<T>(h: thread::ScopedJoinHandle<'_, Result<T, RuntimeError>>, name: &str) -> Result<T, RuntimeError> {
    h.join().map_err(|_| RuntimeError::WorkerPanic(name.to_string()))?
}

fn db_worker(
    store: &mut WorkloadStore,
    batch: NonZeroUsize,
    seed: u64,
    tx: BridgeSender<ComputeUnit>,
    mut rec: Recorder,
    cancel: &AtomicBool,
    clock: Clock,
) -> Result<(Vec<ComputeUnit>, Recorder), RuntimeError> {
    let mut index = 0;
    let mut left = Vec::new();
    'pull: loop {
        let pulled = store.pull_units(batch);
        if pulled.is_empty() {
            break;
        }
        let now = clock.now();
        let mut units = Vec::with_capacity(pulled.len());
        for desc in pulled {
            let mut rng = unit_rng(seed, index);
            index += 1;
            let duration = sample_duration(&desc.payload, &mut rng);
            let mut unit = ComputeUnit::new(desc, duration, now);
            rec.record(EventName::DbPull, now, Some(unit.id()));
            unit.transition(UnitState::PendingSchedule, now, &mut rec)?;
            units.push(unit);
        }
        let mut units = units.into_iter();
        while let Some(unit) = units.next() {
            if cancel.load(Ordering::SeqCst) {
                left.push(unit);
                left.extend(units);
                break 'pull;
            }
            if tx.send(unit).is_err() {
                cancel.store(true, Ordering::SeqCst);
                left.extend(units);
                break 'pull;
            }
        }
    }
    let now = clock.now();
    for desc in store.drain() {
        left.push(ComputeUnit::new(desc, 0.0, now));
    }
    for unit in &mut left {
        unit.transition(UnitState::Canceled, now, &mut rec)?;
    }
    Ok((left, rec))
}

type SchedulerOut = (Vec<ComputeUnit>, u32, Recorder, Recorder, bool);

#[allow(clippy::too_many_arguments)]
fn scheduler_worker(
    mut sched: SchedulerLoop,
    units_rx: BridgeReceiver<ComputeUnit>,
    rel_rx: BridgeReceiver<ComputeUnit>,
    exec_tx: BridgeSender<ComputeUnit>,
    mut rec: Recorder,
    mut agent: Recorder,
    cancel: &AtomicBool,
    deadline: Instant,
    clock: Clock,
) -> Result<SchedulerOut, RuntimeError> {
    let mut finished = Vec::new();
    let mut inbound_open = true;
    let mut aborted = false;
    let cancel_unit = |mut unit: ComputeUnit, agent: &mut Recorder, finished: &mut Vec<ComputeUnit>| {
        unit.transition(UnitState::Canceled, clock.now(), agent)?;
        finished.push(unit);
        Ok::<(), RuntimeError>(())
    };
    loop {
        while let Some(unit) = rel_rx.try_recv() {
            sched.release(unit);
        }
        loop {
            match units_rx.inner().try_recv() {
                Ok(unit) if aborted => cancel_unit(unit, &mut agent, &mut finished)?,
                Ok(unit) => sched.enqueue(unit),
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    inbound_open = false;
                    break;
                }
            }
        }
        if !aborted && (Instant::now() >= deadline || cancel.load(Ordering::SeqCst)) {
            aborted = true;
            cancel.store(true, Ordering::SeqCst);
            for unit in sched.drain_pending() {
                cancel_unit(unit, &mut agent, &mut finished)?;
            }
        }
        if sched.has_work() {
            let t0 = clock.now();
            let step = sched.step()?;
            let t1 = clock.now();
            match step {
                Step::Unscheduled { unit, .. } => {
                    rec.record(EventName::UnschedDone, t1, Some(unit.id()));
                    finished.push(unit);
                }
                Step::Scheduled { mut unit, .. } => {
                    rec.record(EventName::SchedStart, t0, Some(unit.id()));
                    rec.record(EventName::SchedDone, t1, Some(unit.id()));
                    unit.transition(UnitState::Scheduled, t1, &mut rec)?;
                    unit.transition(UnitState::PendingExecution, t1, &mut rec)?;
                    rec.record(EventName::ExecQueued, t1, Some(unit.id()));
                    exec_tx.send(unit)?;
                }
                Step::Rejected { mut unit, .. } => {
                    unit.transition(UnitState::Failed, t1, &mut rec)?;
                    finished.push(unit);
                }
                Step::NoFit { .. } | Step::Idle => {}
            }
            continue;
        }
        if !inbound_open && sched.pending() == 0 && sched.live() == 0 {
            break;
        }
        let units_in = if inbound_open {
            units_rx.inner().clone()
        } else {
            never()
        };
        let wait = if aborted {
            IDLE_WAIT
        } else {
            deadline.saturating_duration_since(Instant::now())
        };
        select! {
            recv(units_in) -> msg => match msg {
                Ok(unit) if aborted => cancel_unit(unit, &mut agent, &mut finished)?,
                Ok(unit) => sched.enqueue(unit),
                Err(_) => inbound_open = false,
            },
            recv(rel_rx.inner()) -> msg => {
                if let Ok(unit) = msg {
                    sched.release(unit);
                }
            },
            default(wait) => {}
        }
    }
    drop(exec_tx);
    Ok((finished, sched.generations(), rec, agent, aborted))
}

struct Running {
    unit: ComputeUnit,
    child: Child,
    cwd: PathBuf,
}

#[allow(clippy::too_many_arguments)]
fn executor_worker(
    rx: BridgeReceiver<ComputeUnit>,
    tx: BridgeSender<ComputeUnit>,
    mut rec: Recorder,
    ctx: LaunchContext,
    model: &ResourceModel,
    session_dir: &Path,
    method: crate::executor::LaunchMethod,
    cancel: &AtomicBool,
    clock: Clock,
) -> Result<Recorder, RuntimeError> {
    let mut running: Vec<Running> = Vec::new();
    let mut open = true;
    loop {
        if cancel.load(Ordering::SeqCst) {
            for mut r in running.drain(..) {
                let _ = r.child.kill();
                let _ = r.child.wait();
                r.unit.transition(UnitState::Canceled, clock.now(), &mut rec)?;
                tx.send(r.unit)?;
            }
        }
        let mut k = 0;
        while k < running.len() {
            let id = running[k].unit.id().to_string();
            match collect_completion(&id, &mut running[k].child) {
                Ok(None) => k += 1,
                Ok(Some(code)) => {
                    let r = running.swap_remove(k);
                    finish(r, Some(code), session_dir, &mut rec, &tx, clock)?;
                }
                Err(_) => {
                    let r = running.swap_remove(k);
                    finish(r, None, session_dir, &mut rec, &tx, clock)?;
                }
            }
        }
        if !open {
            if running.is_empty() {
                break;
            }
            thread::sleep(POLL);
            continue;
        }
        let wait = if running.is_empty() { IDLE_WAIT } else { POLL };
        match rx.recv_timeout(wait) {
            Recv::Item(unit) => {
                if let Some(r) = launch(unit, &ctx, model, method, cancel, &mut rec, &tx, clock)? {
                    running.push(r);
                }
            }
            Recv::Timeout => {}
            Recv::Closed => open = false,
        }
    }
    Ok(rec)
}

#[allow(clippy::too_many_arguments)]
fn launch(
    mut unit: ComputeUnit,
    ctx: &LaunchContext,
    model: &ResourceModel,
    method: crate::executor::LaunchMethod,
    cancel: &AtomicBool,
    rec: &mut Recorder,
    tx: &BridgeSender<ComputeUnit>,
    clock: Clock,
) -> Result<Option<Running>, RuntimeError> {
    let now = clock.now();
    if cancel.load(Ordering::SeqCst) {
        unit.transition(UnitState::Canceled, now, rec)?;
        tx.send(unit)?;
        return Ok(None);
    }
    rec.record(EventName::ExecStart, now, Some(unit.id()));
    let spawned = stage_in(&unit, &ctx.sandbox).and_then(|cwd| {
        let spec = build_launch_command(&unit, model, method, ctx)?;
        let child = spawn(unit.id().as_str(), &spec, &cwd)?;
        Ok((child, cwd))
    });
    match spawned {
        Ok((child, cwd)) => {
            let t = clock.now();
            rec.record(EventName::PayloadStart, t, Some(unit.id()));
            unit.transition(UnitState::Executing, t, rec)?;
            Ok(Some(Running { unit, child, cwd }))
        }
        Err(_) => {
            unit.transition(UnitState::Failed, clock.now(), rec)?;
            tx.send(unit)?;
            Ok(None)
        }
    }
}

fn finish(
    mut r: Running,
    code: Option<i32>,
    session_dir: &Path,
    rec: &mut Recorder,
    tx: &BridgeSender<ComputeUnit>,
    clock: Clock,
) -> Result<(), RuntimeError> {
    let now = clock.now();
    rec.record(EventName::PayloadStop, now, Some(r.unit.id()));
    rec.record(EventName::SpawnReturn, now, Some(r.unit.id()));
    r.unit.exit_code = code;
    let staged = code == Some(0) && stage_out(&r.unit, &r.cwd, session_dir).is_ok();
    let state = if staged {
        UnitState::Done
    } else {
        UnitState::Failed
    };
    r.unit.transition(state, now, rec)?;
    tx.send(r.unit)?;
    Ok(())
}

/// Copies input files into a per-unit directory and returns the working
/// directory for the payload.
fn stage_in(unit: &ComputeUnit, sandbox: &Path) -> Result<PathBuf, ExecError> {
    if unit.desc.stage_in.is_empty() && unit.desc.stage_out.is_empty() {
        return Ok(sandbox.to_path_buf());
    }
    let fail = |source| ExecError::SpawnFailure {
        unit: unit.id().to_string(),
        source,
    };
    let dir = sandbox.join(unit.id().as_str());
    fs::create_dir_all(&dir).map_err(fail)?;
    for src in &unit.desc.stage_in {
        let name = src.file_name().ok_or_else(|| fail(std::io::ErrorKind::InvalidInput.into()))?;
        fs::copy(src, dir.join(name)).map_err(fail)?;
    }
    Ok(dir)
}

fn stage_out(unit: &ComputeUnit, cwd: &Path, session_dir: &Path) -> std::io::Result<()> {
    if unit.desc.stage_out.is_empty() {
        return Ok(());
    }
    let dest = session_dir.join("staged").join(unit.id().as_str());
    fs::create_dir_all(&dest)?;
    for rel in &unit.desc.stage_out {
        let name = rel.file_name().ok_or(std::io::ErrorKind::InvalidInput)?;
        fs::copy(cwd.join(rel), dest.join(name))?;
    }
    Ok(())
}
