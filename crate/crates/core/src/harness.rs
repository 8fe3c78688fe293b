//! Weak and strong scaling experiment matrices.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;
use toml::{Table, Value};

use crate::analytics::{compute_ttx, compute_utilization, describe, Trace};
use crate::config::{read_agent, read_latency, read_payload, read_scheduler, read_table, ConfigError, Section};
use crate::emulator::TaskPayload;
use crate::executor::LatencyModel;
use crate::model::{Backend, PilotDescription, UnitDescription, UnitId};
use crate::runtime::{run_session, SchedulerCost, Session, SessionOptions, SessionStatus};
use crate::scheduler::{generation_count, SchedulerKind};
use crate::Seconds;

pub const DEFAULT_WEAK_TASKS: [usize; 4] = [8, 16, 32, 64];
pub const DEFAULT_STRONG_TASKS: usize = 256;
pub const DEFAULT_STRONG_CORES: [usize; 3] = [256, 512, 1024];
pub const DEFAULT_CORES_PER_TASK: usize = 4;
pub const DEFAULT_CORES_PER_NODE: usize = 16;
pub const DEFAULT_REPETITIONS: usize = 3;
pub const DEFAULT_DURATION: Seconds = 3.0;
pub const DEFAULT_JITTER: Seconds = 0.05;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixMode {
    Weak,
    Strong,
}

impl MatrixMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MatrixMode::Weak => "weak",
            MatrixMode::Strong => "strong",
        }
    }

    pub fn parse(s: &str) -> Option<MatrixMode> {
        match s {
            "weak" => Some(MatrixMode::Weak),
            "strong" => Some(MatrixMode::Strong),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentMatrix {
    pub mode: MatrixMode,
    pub task_counts: Vec<usize>,
    pub cores_per_task: usize,
    pub pilot_cores: Vec<usize>,
    pub cores_per_node: usize,
    pub payload: TaskPayload,
    pub scheduler: SchedulerKind,
    pub cost: SchedulerCost,
    pub latency: LatencyModel,
    pub repetitions: usize,
    /// Every payload, latency and scheduler cost is divided by this.
    pub scale_factor: f64,
    pub backend: Backend,
    pub seed: u64,
    pub output: PathBuf,
    /// Agent settings shared by every session; scheduler, cost, seed and
    /// profiling are set per session.
    pub agent: SessionOptions,
}

impl ExperimentMatrix {
    /// Weak matrix with every default in place.
    pub fn weak(task_counts: Vec<usize>, cores_per_task: usize) -> Self {
        ExperimentMatrix {
            mode: MatrixMode::Weak,
            pilot_cores: task_counts.iter().map(|t| t * cores_per_task).collect(),
            task_counts,
            cores_per_task,
            cores_per_node: DEFAULT_CORES_PER_NODE,
            payload: TaskPayload::sleep(DEFAULT_DURATION, DEFAULT_JITTER),
            scheduler: SchedulerKind::ContinuousSearch,
            cost: SchedulerCost::Zero,
            latency: LatencyModel::zero(),
            repetitions: DEFAULT_REPETITIONS,
            scale_factor: 1.0,
            backend: Backend::Virtual,
            seed: 0,
            output: PathBuf::from("matrix"),
            agent: SessionOptions::default(),
        }
    }

    pub fn strong(tasks: usize, pilot_cores: Vec<usize>, cores_per_task: usize) -> Self {
        ExperimentMatrix {
            mode: MatrixMode::Strong,
            task_counts: vec![tasks],
            pilot_cores,
            ..ExperimentMatrix::weak(Vec::new(), cores_per_task)
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.task_counts.is_empty() {
            return Err(ConfigError::schema("task_counts", "must not be empty"));
        }
        if self.cores_per_task == 0 {
            return Err(ConfigError::schema("cores_per_task", "must be at least 1"));
        }
        if self.cores_per_node == 0 {
            return Err(ConfigError::schema("cores_per_node", "must be at least 1"));
        }
        if self.repetitions == 0 {
            return Err(ConfigError::schema("repetitions", "must be at least 1"));
        }
        if !(self.scale_factor.is_finite() && self.scale_factor > 0.0) {
            return Err(ConfigError::schema("scale_factor", "must be positive"));
        }
        match self.mode {
            MatrixMode::Weak => {
                if self.pilot_cores.len() != self.task_counts.len() {
                    return Err(ConfigError::schema(
                        "pilot_cores",
                        format!("weak mode needs one entry per task count ({})", self.task_counts.len()),
                    ));
                }
                for (i, (t, c)) in self.task_counts.iter().zip(&self.pilot_cores).enumerate() {
                    if t * self.cores_per_task != *c {
                        return Err(ConfigError::schema(
                            format!("pilot_cores[{i}]"),
                            format!(
                                "weak mode needs task_counts[{i}] x cores_per_task = {} cores, got {c}",
                                t * self.cores_per_task
                            ),
                        ));
                    }
                }
            }
            MatrixMode::Strong => {
                if self.task_counts.len() != 1 {
                    return Err(ConfigError::schema("task_counts", "strong mode takes a single task count"));
                }
                if self.pilot_cores.is_empty() {
                    return Err(ConfigError::schema("pilot_cores", "must not be empty"));
                }
            }
        }
        for (i, c) in self.pilot_cores.iter().enumerate() {
            if *c == 0 || c % self.cores_per_node != 0 {
                return Err(ConfigError::schema(
                    format!("pilot_cores[{i}]"),
                    format!("must be a positive multiple of cores_per_node ({})", self.cores_per_node),
                ));
            }
            if *c < self.cores_per_task {
                return Err(ConfigError::schema(
                    format!("pilot_cores[{i}]"),
                    "smaller than one task",
                ));
            }
        }
        self.payload
            .validate()
            .map_err(|e| ConfigError::schema("payload", e.to_string()))?;
        Ok(())
    }

    /// `(tasks, pilot cores)` per configuration, in matrix order.
    pub fn configurations(&self) -> Vec<(usize, usize)> {
        match self.mode {
            MatrixMode::Weak => self.task_counts.iter().copied().zip(self.pilot_cores.iter().copied()).collect(),
            MatrixMode::Strong => self.pilot_cores.iter().map(|&c| (self.task_counts[0], c)).collect(),
        }
    }

    pub fn generations(&self) -> Vec<usize> {
        self.configurations()
            .into_iter()
            .map(|(t, c)| generation_count(t, c, self.cores_per_task).unwrap_or(0))
            .collect()
    }

    pub fn session_seed(&self, config: usize, repetition: usize) -> u64 {
        self.seed
            .wrapping_add((config * self.repetitions + repetition) as u64)
    }

    pub fn session(&self, config: usize, repetition: usize) -> Session {
        let (tasks, cores) = self.configurations()[config];
        let mut pilot = PilotDescription::new(cores / self.cores_per_node, self.cores_per_node);
        pilot.backend = self.backend;
        pilot.latency = self.latency.compressed(self.scale_factor);
        let payload = self.payload.compressed(self.scale_factor);
        let id = format!("c{config}_t{tasks}_p{cores}_r{repetition}");
        let mut options = self.agent.clone();
        options.scheduler = self.scheduler;
        options.cost = match self.cost {
            SchedulerCost::Modeled(p) => SchedulerCost::Modeled(p.compressed(self.scale_factor)),
            other => other,
        };
        options.seed = self.session_seed(config, repetition);
        options.profile = true;
        Session {
            units: (0..tasks)
                .map(|i| UnitDescription::new(UnitId::indexed(i), self.cores_per_task, payload.clone()))
                .collect(),
            dir: self.output.join(&id),
            id,
            pilot,
            options,
        }
    }

    /// The matrix with all defaults resolved, as TOML.
    pub fn echo(&self) -> String {
        let ints = |v: &[usize]| Value::Array(v.iter().map(|&x| Value::Integer(x as i64)).collect());
        let mut t = Table::new();
        t.insert("mode".into(), self.mode.as_str().into());
        t.insert("task_counts".into(), ints(&self.task_counts));
        t.insert("cores_per_task".into(), (self.cores_per_task as i64).into());
        t.insert("pilot_cores".into(), ints(&self.pilot_cores));
        t.insert("cores_per_node".into(), (self.cores_per_node as i64).into());
        t.insert("repetitions".into(), (self.repetitions as i64).into());
        t.insert("scale_factor".into(), self.scale_factor.into());
        t.insert("backend".into(), self.backend.to_string().into());
        t.insert("seed".into(), (self.seed as i64).into());
        t.insert("output".into(), self.output.display().to_string().into());
        let mut sched = Table::new();
        sched.insert("kind".into(), self.scheduler.as_str().into());
        let cost = match self.cost {
            SchedulerCost::Zero => "zero",
            SchedulerCost::Modeled(_) => "titan",
            SchedulerCost::Measured => "measured",
        };
        sched.insert("cost".into(), cost.into());
        t.insert("scheduler".into(), sched.into());
        let mut payload = Table::new();
        let kind = match &self.payload.kind {
            crate::emulator::PayloadKind::Sleep => "sleep",
            crate::emulator::PayloadKind::FlopBurn { .. } => "flop_burn",
            crate::emulator::PayloadKind::ExternalCommand { .. } => "command",
        };
        payload.insert("kind".into(), kind.into());
        payload.insert("duration".into(), self.payload.target_duration.into());
        payload.insert("jitter".into(), self.payload.jitter_sigma.into());
        t.insert("payload".into(), payload.into());
        let mut lat = Table::new();
        lat.insert("prepare_median".into(), self.latency.prepare.median.into());
        lat.insert("prepare_sigma".into(), self.latency.prepare.sigma.into());
        lat.insert("ack_median".into(), self.latency.ack_median.coefficient.into());
        lat.insert("ack_median_exponent".into(), self.latency.ack_median.exponent.into());
        lat.insert("ack_sigma".into(), self.latency.ack_sigma.coefficient.into());
        lat.insert("ack_sigma_exponent".into(), self.latency.ack_sigma.exponent.into());
        lat.insert("reference_cores".into(), self.latency.reference_cores.into());
        t.insert("latency".into(), lat.into());
        let mut agent = Table::new();
        agent.insert("executors".into(), (self.agent.executors as i64).into());
        agent.insert("launch".into(), self.agent.launch.as_str().into());
        agent.insert("executor_service".into(), self.agent.executor_service.into());
        if let Some(b) = self.agent.pull_batch {
            agent.insert("pull_batch".into(), (b.get() as i64).into());
        }
        t.insert("agent".into(), agent.into());
        toml::to_string(&t).expect("plain table serializes")
    }
}

/// Reads and checks a matrix file, filling in defaults for absent keys.
pub fn validate_config(path: &Path) -> Result<ExperimentMatrix, ConfigError> {
    let table = read_table(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    matrix_from_table(&table, base)
}

pub fn matrix_from_table(table: &Table, base: &Path) -> Result<ExperimentMatrix, ConfigError> {
    let root = Section::root(table);
    let mode = root.choice("mode", MatrixMode::parse)?.unwrap_or(MatrixMode::Weak);
    let cores_per_task = root.count("cores_per_task")?.unwrap_or(DEFAULT_CORES_PER_TASK);
    let task_counts = match root.counts("task_counts")? {
        Some(t) => t,
        None if mode == MatrixMode::Weak => DEFAULT_WEAK_TASKS.to_vec(),
        None => vec![DEFAULT_STRONG_TASKS],
    };
    let pilot_cores = match root.counts("pilot_cores")? {
        Some(p) => p,
        None if mode == MatrixMode::Weak => task_counts.iter().map(|t| t * cores_per_task).collect(),
        None => DEFAULT_STRONG_CORES.to_vec(),
    };
    let mut m = ExperimentMatrix {
        mode,
        task_counts,
        pilot_cores,
        ..ExperimentMatrix::weak(Vec::new(), cores_per_task)
    };
    if let Some(c) = root.count("cores_per_node")? {
        m.cores_per_node = c;
    }
    if let Some(r) = root.count("repetitions")? {
        m.repetitions = r;
    }
    if let Some(f) = root.positive("scale_factor")? {
        m.scale_factor = f;
    }
    if let Some(b) = root.choice("backend", |v| v.parse::<Backend>().ok())? {
        m.backend = b;
    }
    if let Some(s) = root.u64("seed")? {
        m.seed = s;
    }
    if let Some(o) = root.str("output")? {
        m.output = base.join(o);
    } else {
        m.output = base.join("matrix");
    }
    let (kind, cost) = read_scheduler(&root, "scheduler")?;
    m.scheduler = kind;
    m.cost = cost;
    if let Some(p) = root.section("payload")? {
        m.payload = read_payload(&p, DEFAULT_DURATION, DEFAULT_JITTER)?;
        p.finish()?;
    }
    if let Some(l) = root.section("latency")? {
        m.latency = read_latency(&l)?;
        l.finish()?;
    }
    if let Some(a) = root.section("agent")? {
        read_agent(&a, &mut m.agent)?;
        a.finish()?;
    }
    root.finish()?;
    m.validate()?;
    Ok(m)
}

#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub trace: PathBuf,
    pub status: SessionStatus,
    pub all_done: bool,
    pub generations: usize,
    pub observed_generations: usize,
    pub ttx: Seconds,
    pub ideal: Seconds,
    pub overhead_pct: f64,
    pub ru_workload_pct: f64,
    pub ru_overhead_pct: f64,
    pub ru_idle_pct: f64,
    /// Completed tasks per second of TTX.
    pub throughput: f64,
}

impl RunMetrics {
    /// Recomputes every metric from a unified trace.
    pub fn from_trace(path: &Path) -> Result<RunMetrics, String> {
        let trace = Trace::load(path).map_err(|e| e.to_string())?;
        let ttx = compute_ttx(&trace).map_err(|e| e.to_string())?;
        let ru = compute_utilization(&trace).map_err(|e| e.to_string())?;
        let status = match trace.meta_value("status") {
            Some("aborted") => SessionStatus::Aborted,
            _ => SessionStatus::Completed,
        };
        let done = trace
            .units
            .values()
            .filter(|u| matches!(u.terminal, Some((crate::model::UnitState::Done, _))))
            .count();
        Ok(RunMetrics {
            trace: path.to_path_buf(),
            status,
            all_done: done == trace.units.len(),
            generations: ttx.generations,
            observed_generations: ttx.observed_generations,
            ttx: ttx.ttx,
            ideal: ttx.ideal,
            overhead_pct: ttx.overhead_pct(),
            ru_workload_pct: ru.workload_pct(),
            ru_overhead_pct: ru.overhead_pct(),
            ru_idle_pct: ru.idle_pct(),
            throughput: if ttx.ttx > 0.0 { done as f64 / ttx.ttx } else { 0.0 },
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config: usize,
    pub tasks: usize,
    pub pilot_cores: usize,
    pub repetition: usize,
    pub seed: u64,
    pub session: String,
    pub result: Result<RunMetrics, String>,
}

impl RunRecord {
    pub fn is_clean(&self) -> bool {
        matches!(&self.result, Ok(m) if m.all_done)
    }
}

#[derive(Debug)]
pub struct MatrixReport {
    pub runs: Vec<RunRecord>,
    pub sessions_csv: PathBuf,
    pub summary_csv: PathBuf,
}

impl MatrixReport {
    pub fn traces(&self) -> Vec<PathBuf> {
        self.runs
            .iter()
            .filter_map(|r| r.result.as_ref().ok().map(|m| m.trace.clone()))
            .collect()
    }

    pub fn all_clean(&self) -> bool {
        self.runs.iter().all(RunRecord::is_clean)
    }
}

fn run_one(session: &Session) -> Result<RunMetrics, String> {
    let out = run_session(session).map_err(|e| e.to_string())?;
    let trace = out.trace.ok_or("session wrote no trace")?;
    RunMetrics::from_trace(&trace)
}

/// Runs every configuration and repetition in turn and writes
/// `sessions.csv` and `summary.csv` to the matrix output directory. A
/// failing session is recorded and the matrix moves on.
pub fn run_matrix(matrix: &ExperimentMatrix) -> Result<MatrixReport, HarnessError> {
    run_matrix_with(matrix, |_| {})
}

/// As [`run_matrix`], calling `progress` after each session.
pub fn run_matrix_with(
    matrix: &ExperimentMatrix,
    mut progress: impl FnMut(&RunRecord),
) -> Result<MatrixReport, HarnessError> {
    matrix.validate()?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| HarnessError::Io { path, source }
    };
    std::fs::create_dir_all(&matrix.output).map_err(io(&matrix.output))?;
    let mut runs = Vec::new();
    for (config, (tasks, pilot_cores)) in matrix.configurations().into_iter().enumerate() {
        for repetition in 0..matrix.repetitions {
            let session = matrix.session(config, repetition);
            let record = RunRecord {
                config,
                tasks,
                pilot_cores,
                repetition,
                seed: session.options.seed,
                result: run_one(&session),
                session: session.id,
            };
            progress(&record);
            runs.push(record);
        }
    }
    let sessions_csv = matrix.output.join("sessions.csv");
    std::fs::write(&sessions_csv, sessions_table(&runs)).map_err(io(&sessions_csv))?;
    let summary_csv = matrix.output.join("summary.csv");
    std::fs::write(&summary_csv, summary_table(matrix, &runs)).map_err(io(&summary_csv))?;
    Ok(MatrixReport {
        runs,
        sessions_csv,
        summary_csv,
    })
}

fn sessions_table(runs: &[RunRecord]) -> String {
    let mut s = String::from(
        "session,tasks,pilot_cores,repetition,seed,status,generations,ttx,ideal_ttx,overhead_pct,\
         ru_workload_pct,ru_overhead_pct,ru_idle_pct,throughput,error\n",
    );
    for r in runs {
        let _ = write!(s, "{},{},{},{},{},", r.session, r.tasks, r.pilot_cores, r.repetition, r.seed);
        match &r.result {
            Ok(m) => {
                let _ = writeln!(
                    s,
                    "{},{},{:.6},{:.6},{:.4},{:.4},{:.4},{:.4},{:.6},",
                    m.status.as_str(),
                    m.generations,
                    m.ttx,
                    m.ideal,
                    m.overhead_pct,
                    m.ru_workload_pct,
                    m.ru_overhead_pct,
                    m.ru_idle_pct,
                    m.throughput
                );
            }
            Err(e) => {
                let _ = writeln!(s, "failed,,,,,,,,,\"{}\"", e.replace('"', "'"));
            }
        }
    }
    s
}

fn summary_table(matrix: &ExperimentMatrix, runs: &[RunRecord]) -> String {
    let mut s = String::from(
        "tasks,pilot_cores,generations,runs,failed,ttx_mean,ttx_std,overhead_pct_mean,overhead_pct_std,\
         ru_workload_pct_mean,ru_workload_pct_std,ru_overhead_pct_mean,ru_overhead_pct_std,\
         ru_idle_pct_mean,ru_idle_pct_std,throughput_mean,throughput_std\n",
    );
    let generations = matrix.generations();
    for (config, (tasks, cores)) in matrix.configurations().into_iter().enumerate() {
        let ok: Vec<&RunMetrics> = runs
            .iter()
            .filter(|r| r.config == config)
            .filter_map(|r| r.result.as_ref().ok())
            .collect();
        let failed = runs.iter().filter(|r| r.config == config && !r.is_clean()).count();
        let _ = write!(s, "{tasks},{cores},{},{},{failed}", generations[config], ok.len());
        let columns: [fn(&RunMetrics) -> f64; 6] = [
            |m| m.ttx,
            |m| m.overhead_pct,
            |m| m.ru_workload_pct,
            |m| m.ru_overhead_pct,
            |m| m.ru_idle_pct,
            |m| m.throughput,
        ];
        for f in columns {
            match describe(ok.iter().map(|m| f(m)).collect()) {
                Some(d) => {
                    let _ = write!(s, ",{:.6},{:.6}", d.mean, d.std);
                }
                None => s.push_str(",,"),
            }
        }
        s.push('\n');
    }
    s
}
