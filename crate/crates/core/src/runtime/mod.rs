//! The agent: bulk pull from the workload store, sequential scheduling,
//! executor workers and per-component profiling, on either backend.

pub mod channel;
mod real;
mod sim;
pub mod store;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::emulator::{EmulatorError, PayloadKind};
use crate::executor::{ExecError, LaunchMethod};
use crate::model::{validate_pilot, Backend, ComputeUnit, ModelError, PilotDescription, UnitDescription, UnitState};
use crate::profiler::{self, FlushPolicy, ProfileError, Recorder, SyncPoint, UNIFIED_FILE};
use crate::scheduler::{SchedError, SchedulerKind, Step};
use crate::Seconds;

pub use channel::{channel, BridgeReceiver, BridgeSender, ChannelClosed, Recv};
pub use store::{Backing, StoreError, WorkloadStore};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Payload(#[from] EmulatorError),
    #[error(transparent)]
    Channel(#[from] ChannelClosed),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid session: {0}")]
    InvalidSession(String),
    #[error("worker {0} panicked")]
    WorkerPanic(String),
}

/// Virtual time charged for each scheduler operation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SchedulerCost {
    /// Scheduling takes no time.
    Zero,
    /// `base + per_probe * probes` for every schedule and unschedule call.
    Modeled(CostParams),
    /// The wall time each call actually took. Not reproducible.
    Measured,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    pub schedule_base: Seconds,
    pub schedule_per_probe: Seconds,
    pub unschedule_base: Seconds,
    pub unschedule_per_probe: Seconds,
}

/// Per-call base and per-probe cost of the search scheduler, solved so
/// that a single generation of 32-core tasks on 16-core nodes waits 18 s
/// on average at 512 tasks and 350 s at 4096 tasks from pull to placement.
pub const TITAN_SEARCH_BASE: Seconds = 0.054_472_079_6;
pub const TITAN_SEARCH_PER_PROBE: Seconds = 4.213_781_49e-5;
/// The lookup scheduler places 70 tasks per second.
pub const TITAN_LOOKUP_BASE: Seconds = 1.0 / 70.0;

impl CostParams {
    pub fn titan(kind: SchedulerKind) -> Self {
        match kind {
            SchedulerKind::ContinuousSearch => CostParams {
                schedule_base: TITAN_SEARCH_BASE,
                schedule_per_probe: TITAN_SEARCH_PER_PROBE,
                unschedule_base: 0.0,
                unschedule_per_probe: TITAN_SEARCH_PER_PROBE,
            },
            SchedulerKind::HomogeneousLookup => CostParams {
                schedule_base: TITAN_LOOKUP_BASE,
                schedule_per_probe: 0.0,
                unschedule_base: 0.0,
                unschedule_per_probe: 0.0,
            },
        }
    }

    pub fn compressed(&self, factor: f64) -> Self {
        CostParams {
            schedule_base: self.schedule_base / factor,
            schedule_per_probe: self.schedule_per_probe / factor,
            unschedule_base: self.unschedule_base / factor,
            unschedule_per_probe: self.unschedule_per_probe / factor,
        }
    }
}

impl SchedulerCost {
    pub(crate) fn of(&self, step: &Step) -> Seconds {
        match (self, step) {
            (_, Step::Idle) | (SchedulerCost::Zero, _) => 0.0,
            (SchedulerCost::Measured, Step::Unscheduled { service, .. })
            | (SchedulerCost::Measured, Step::Scheduled { service, .. })
            | (SchedulerCost::Measured, Step::NoFit { service, .. }) => service.as_secs_f64(),
            (SchedulerCost::Measured, Step::Rejected { .. }) => 0.0,
            (SchedulerCost::Modeled(p), Step::Unscheduled { probes, .. }) => {
                p.unschedule_base + p.unschedule_per_probe * *probes as f64
            }
            (SchedulerCost::Modeled(p), Step::Scheduled { probes, .. })
            | (SchedulerCost::Modeled(p), Step::NoFit { probes, .. }) => {
                p.schedule_base + p.schedule_per_probe * *probes as f64
            }
            (SchedulerCost::Modeled(p), Step::Rejected { .. }) => p.schedule_base,
        }
    }
}

/// Agent settings that are not part of the pilot or the workload.
#[derive(Debug, Clone)]
pub struct SessionOptions {
    pub scheduler: SchedulerKind,
    /// Virtual backend only.
    pub cost: SchedulerCost,
    pub executors: usize,
    /// Real backend only; the virtual backend always launches virtually.
    pub launch: LaunchMethod,
    /// Units per store pull; everything at once when `None`.
    pub pull_batch: Option<NonZeroUsize>,
    /// Virtual time an executor worker is busy per launch.
    pub executor_service: Seconds,
    pub seed: u64,
    pub profile: bool,
    /// Executable providing the `emulate` subcommand for real payloads.
    pub emulator: Option<PathBuf>,
    pub flops_per_second: Option<f64>,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions {
            scheduler: SchedulerKind::ContinuousSearch,
            cost: SchedulerCost::Zero,
            executors: 1,
            launch: LaunchMethod::ForkLocal,
            pull_batch: None,
            executor_service: 0.0,
            seed: 0,
            profile: true,
            emulator: None,
            flops_per_second: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub pilot: PilotDescription,
    pub units: Vec<UnitDescription>,
    pub options: SessionOptions,
    /// Session directory for profiles, the unified trace and the sandbox.
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionStatus {
    Completed,
    /// Walltime ran out; unfinished units were canceled.
    Aborted,
}

impl SessionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionStatus::Completed => "completed",
            SessionStatus::Aborted => "aborted",
        }
    }
}

#[derive(Debug)]
pub struct SessionOutcome {
    pub session: String,
    pub dir: PathBuf,
    /// Unified trace, when profiling was on.
    pub trace: Option<PathBuf>,
    /// Final unit records in submission order.
    pub units: Vec<ComputeUnit>,
    /// Slot-lineage generations handed out by the scheduler.
    pub generations: u32,
    pub status: SessionStatus,
    /// Session clock at the last processed event.
    pub end: Seconds,
    pub wall: Duration,
    pub flops_per_second: Option<f64>,
}

impl SessionOutcome {
    pub fn count(&self, state: UnitState) -> usize {
        self.units.iter().filter(|u| u.state == state).count()
    }

    pub fn all_done(&self) -> bool {
        self.units.iter().all(|u| u.state == UnitState::Done)
    }
}

/// Per-component recorders of one session.
pub(crate) struct Recorders {
    pub db: Recorder,
    pub scheduler: Recorder,
    pub agent: Recorder,
    pub executors: Vec<Recorder>,
}

impl Recorders {
    fn open(dir: &Path, pilot: &str, executors: usize, enabled: bool, start: SyncPoint) -> Result<Self, ProfileError> {
        let open = |component: &str, worker: u32| {
            if enabled {
                Recorder::to_file(dir, component, worker, Some(pilot), start, FlushPolicy::default())
            } else {
                Ok(Recorder::disabled())
            }
        };
        Ok(Recorders {
            db: open("db", 0)?,
            scheduler: open("scheduler", 0)?,
            agent: open("agent", 0)?,
            executors: (0..executors)
                .map(|w| open("executor", w as u32))
                .collect::<Result<_, _>>()?,
        })
    }

    fn close(self, end: SyncPoint) -> Result<(), ProfileError> {
        for r in [self.db, self.scheduler, self.agent].into_iter().chain(self.executors) {
            r.close(end)?;
        }
        Ok(())
    }
}

/// Per-unit random stream: the payload duration, then the launch
/// preparation and completion acknowledgement latencies, are drawn in this
/// order so that results do not depend on processing order.
pub fn unit_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub const PILOT_ID: &str = "pilot.0000";

/// Runs every unit of the session to a terminal state and writes the
/// profiles plus `unified.prof` into the session directory.
pub fn run_session(session: &Session) -> Result<SessionOutcome, RuntimeError> {
    let model = validate_pilot(&session.pilot)?;
    let opts = &session.options;
    let executors = crate::executor::executor_pool(opts.executors)?.get();
    if session.units.is_empty() {
        return Err(RuntimeError::InvalidSession("workload is empty".into()));
    }
    let mut seen = HashSet::new();
    for u in &session.units {
        if u.cores == 0 {
            return Err(ModelError::InvalidDescription(format!("unit {} requests zero cores", u.id)).into());
        }
        u.payload.validate()?;
        if !seen.insert(u.id.as_str()) {
            return Err(StoreError::DuplicateUnit(u.id.to_string()).into());
        }
    }
    let block = session.units[0].cores;
    if opts.scheduler == SchedulerKind::HomogeneousLookup && session.units.iter().any(|u| u.cores != block) {
        return Err(RuntimeError::InvalidSession(
            "the homogeneous scheduler needs equal core counts for all units".into(),
        ));
    }
    if session.pilot.backend == Backend::Real && !opts.launch.supports(Backend::Real) {
        return Err(ExecError::IncompatibleMethod {
            method: opts.launch,
            backend: Backend::Real,
        }
        .into());
    }
    fs::create_dir_all(&session.dir).map_err(|source| RuntimeError::Io {
        path: session.dir.clone(),
        source,
    })?;
    clear_profiles(&session.dir)?;

    let flops = match session.pilot.backend {
        Backend::Real => opts.flops_per_second.or_else(|| {
            session
                .units
                .iter()
                .any(|u| matches!(u.payload.kind, PayloadKind::FlopBurn { flops: None }))
                .then(|| crate::emulator::calibrate(Duration::from_millis(200)))
        }),
        Backend::Virtual => opts.flops_per_second,
    };

    let wall_start = std::time::Instant::now();
    let recorders = Recorders::open(&session.dir, PILOT_ID, executors, opts.profile, SyncPoint::identity(0.0))?;
    let run = match session.pilot.backend {
        Backend::Virtual => sim::run(session, model, block, executors, recorders)?,
        Backend::Real => real::run(session, model, block, flops, recorders, wall_start)?,
    };
    run.recorders.close(SyncPoint::identity(run.end))?;
    let wall = wall_start.elapsed();

    let trace = if opts.profile {
        let path = session.dir.join(UNIFIED_FILE);
        let profiles = profiler::read_component_profiles(&session.dir)?;
        let events = profiler::synchronize(&profiles)?;
        let meta = trace_meta(session, executors, flops, run.status);
        profiler::write_unified(&path, &meta, &events)?;
        Some(path)
    } else {
        None
    };
    Ok(SessionOutcome {
        session: session.id.clone(),
        dir: session.dir.clone(),
        trace,
        units: run.units,
        generations: run.generations,
        status: run.status,
        end: run.end,
        wall,
        flops_per_second: flops,
    })
}

pub(crate) struct BackendRun {
    pub units: Vec<ComputeUnit>,
    pub generations: u32,
    pub status: SessionStatus,
    pub end: Seconds,
    pub recorders: Recorders,
}

fn clear_profiles(dir: &Path) -> Result<(), RuntimeError> {
    let io = |source| RuntimeError::Io {
        path: dir.to_path_buf(),
        source,
    };
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.extension().is_some_and(|e| e == "prof") {
            fs::remove_file(&path).map_err(|source| RuntimeError::Io { path, source })?;
        }
    }
    Ok(())
}

fn trace_meta(session: &Session, executors: usize, flops: Option<f64>, status: SessionStatus) -> Vec<(String, String)> {
    let pilot = &session.pilot;
    let mut meta: Vec<(String, String)> = vec![
        ("session".into(), session.id.clone()),
        ("backend".into(), pilot.backend.to_string()),
        ("scheduler".into(), session.options.scheduler.to_string()),
        ("pilot_cores".into(), pilot.total_cores().to_string()),
        ("cores_per_node".into(), pilot.cores_per_node.to_string()),
        ("executors".into(), executors.to_string()),
        ("seed".into(), session.options.seed.to_string()),
        ("status".into(), status.as_str().to_string()),
    ];
    if let Some(f) = flops {
        meta.push(("flops_per_second".into(), format!("{f:.0}")));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for u in &session.units {
        *counts.entry(u.cores).or_default() += 1;
    }
    let common = counts
        .iter()
        .max_by_key(|&(cores, n)| (*n, std::cmp::Reverse(*cores)))
        .map(|(c, _)| *c)
        .unwrap_or(1);
    meta.push(("default_unit_cores".into(), common.to_string()));
    for u in &session.units {
        if u.cores != common {
            meta.push(("unit_cores".into(), format!("{}:{}", u.id, u.cores)));
        }
    }
    meta
}
