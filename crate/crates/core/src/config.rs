//! TOML configuration for pilots, sessions and their workloads.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use thiserror::Error;
use toml::{Table, Value};

use crate::emulator::{PayloadKind, TaskPayload};
use crate::executor::{LatencyModel, LaunchMethod, LogNormalLatency};
use crate::model::{Backend, PilotDescription, UnitDescription, UnitId};
use crate::runtime::{CostParams, SchedulerCost, Session, SessionOptions};
use crate::scheduler::SchedulerKind;
use crate::Seconds;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid TOML: {0}")]
    Parse(String),
    #[error("{path}: {msg}")]
    Schema { path: String, msg: String },
    #[error("unknown key `{path}`")]
    UnknownKey { path: String },
}

impl ConfigError {
    pub fn schema(path: impl Into<String>, msg: impl Into<String>) -> Self {
        ConfigError::Schema {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub fn read_table(path: &Path) -> Result<Table, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_table(&text)
}

pub fn parse_table(text: &str) -> Result<Table, ConfigError> {
    text.parse::<Table>().map_err(|e| ConfigError::Parse(e.to_string()))
}

/// A table being read key by key. Keys never asked for are reported by
/// [`Section::finish`].
pub struct Section<'a> {
    prefix: String,
    table: &'a Table,
    seen: RefCell<BTreeSet<String>>,
}

impl<'a> Section<'a> {
    pub fn root(table: &'a Table) -> Self {
        Section {
            prefix: String::new(),
            table,
            seen: RefCell::new(BTreeSet::new()),
        }
    }

    pub fn path(&self, key: &str) -> String {
        if self.prefix.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.prefix)
        }
    }

    pub fn raw(&self, key: &str) -> Option<&'a Value> {
        self.seen.borrow_mut().insert(key.to_string());
        self.table.get(key)
    }

    fn wrong_type(&self, key: &str, want: &str) -> ConfigError {
        ConfigError::schema(self.path(key), format!("expected {want}"))
    }

    pub fn section(&self, key: &str) -> Result<Option<Section<'a>>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Table(t)) => Ok(Some(Section {
                prefix: self.path(key),
                table: t,
                seen: RefCell::new(BTreeSet::new()),
            })),
            Some(_) => Err(self.wrong_type(key, "a table")),
        }
    }

    pub fn str(&self, key: &str) -> Result<Option<&'a str>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(self.wrong_type(key, "a string")),
        }
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Float(x)) if x.is_finite() => Ok(Some(*x)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(_) => Err(self.wrong_type(key, "a finite number")),
        }
    }

    pub fn non_negative(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.f64(key)? {
            Some(x) if x < 0.0 => Err(ConfigError::schema(self.path(key), "must not be negative")),
            other => Ok(other),
        }
    }

    pub fn positive(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.f64(key)? {
            Some(x) if x <= 0.0 => Err(ConfigError::schema(self.path(key), "must be positive")),
            other => Ok(other),
        }
    }

    pub fn u64(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(_) => Err(self.wrong_type(key, "a non-negative integer")),
        }
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        Ok(self.u64(key)?.map(|v| v as usize))
    }

    pub fn count(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        match self.usize(key)? {
            Some(0) => Err(ConfigError::schema(self.path(key), "must be at least 1")),
            other => Ok(other),
        }
    }

    pub fn bool(&self, key: &str) -> Result<Option<bool>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(_) => Err(self.wrong_type(key, "a boolean")),
        }
    }

    pub fn counts(&self, key: &str) -> Result<Option<Vec<usize>>, ConfigError> {
        let Some(value) = self.raw(key) else {
            return Ok(None);
        };
        let Value::Array(items) = value else {
            return Err(self.wrong_type(key, "an array of integers"));
        };
        items
            .iter()
            .enumerate()
            .map(|(i, v)| match v {
                Value::Integer(n) if *n > 0 => Ok(*n as usize),
                _ => Err(ConfigError::schema(
                    format!("{}[{i}]", self.path(key)),
                    "expected a positive integer",
                )),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    pub fn strings(&self, key: &str) -> Result<Option<Vec<String>>, ConfigError> {
        let Some(value) = self.raw(key) else {
            return Ok(None);
        };
        let Value::Array(items) = value else {
            return Err(self.wrong_type(key, "an array of strings"));
        };
        items
            .iter()
            .enumerate()
            .map(|(i, v)| match v {
                Value::String(s) => Ok(s.clone()),
                _ => Err(ConfigError::schema(format!("{}[{i}]", self.path(key)), "expected a string")),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    /// A string that must be one of a closed set of names.
    pub fn choice<T>(&self, key: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Option<T>, ConfigError> {
        match self.str(key)? {
            None => Ok(None),
            Some(s) => parse(s).map(Some).ok_or_else(|| ConfigError::UnknownKey {
                path: format!("{} = {s:?}", self.path(key)),
            }),
        }
    }

    pub fn finish(self) -> Result<(), ConfigError> {
        let seen = self.seen.borrow();
        match self.table.keys().find(|k| !seen.contains(*k)) {
            Some(k) => Err(ConfigError::UnknownKey { path: self.path(k) }),
            None => Ok(()),
        }
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads a resource file: a `[resource]` table with `cores_per_node` and
/// either `nodes` (names, in placement order) or `node_count`.
pub fn load_resource(path: &Path) -> Result<PilotDescription, ConfigError> {
    let table = read_table(path)?;
    let root = Section::root(&table);
    let res = root
        .section("resource")?
        .ok_or_else(|| ConfigError::schema("resource", "missing table"))?;
    let mut pilot = PilotDescription::new(0, 0);
    read_pilot_fields(&res, &mut pilot)?;
    res.finish()?;
    root.finish()?;
    check_geometry(&pilot, "resource")?;
    Ok(pilot)
}

fn read_pilot_fields(s: &Section, pilot: &mut PilotDescription) -> Result<(), ConfigError> {
    if let Some(name) = s.str("name")? {
        pilot.resource = name.to_string();
    }
    if let Some(cpn) = s.count("cores_per_node")? {
        pilot.cores_per_node = cpn;
    }
    let names = s.strings("nodes")?;
    let count = s.count("node_count")?;
    match (names, count) {
        (Some(_), Some(_)) => {
            return Err(ConfigError::schema(s.path("nodes"), "give either nodes or node_count, not both"))
        }
        (Some(names), None) => {
            pilot.node_count = names.len();
            pilot.node_names = names;
        }
        (None, Some(n)) => {
            pilot.node_count = n;
            pilot.node_names.clear();
        }
        (None, None) => {}
    }
    if let Some(w) = s.positive("walltime")? {
        pilot.walltime = w;
    }
    if let Some(b) = s.choice("backend", |v| v.parse::<Backend>().ok())? {
        pilot.backend = b;
    }
    Ok(())
}

fn check_geometry(pilot: &PilotDescription, path: &str) -> Result<(), ConfigError> {
    if pilot.cores_per_node == 0 {
        return Err(ConfigError::schema(format!("{path}.cores_per_node"), "required"));
    }
    if pilot.node_count == 0 {
        return Err(ConfigError::schema(format!("{path}.nodes"), "no nodes declared"));
    }
    Ok(())
}

/// Reads a `[latency]` table: a preset, an optional compression factor and
/// per-field overrides.
pub fn read_latency(s: &Section) -> Result<LatencyModel, ConfigError> {
    let mut model = match s.str("preset")?.unwrap_or("zero") {
        "zero" => LatencyModel::zero(),
        "titan" => LatencyModel::titan(),
        other => {
            return Err(ConfigError::UnknownKey {
                path: format!("{} = {other:?}", s.path("preset")),
            })
        }
    };
    if let Some(m) = s.non_negative("prepare_median")? {
        model.prepare.median = m;
    }
    if let Some(sig) = s.non_negative("prepare_sigma")? {
        model.prepare.sigma = sig;
    }
    if let (Some(mean), Some(std)) = (s.positive("prepare_mean")?, s.non_negative("prepare_std")?) {
        model.prepare = LogNormalLatency::from_mean_std(mean, std);
    }
    if let Some(a) = s.non_negative("ack_median")? {
        model.ack_median.coefficient = a;
    }
    if let Some(b) = s.f64("ack_median_exponent")? {
        model.ack_median.exponent = b;
    }
    if let Some(a) = s.non_negative("ack_sigma")? {
        model.ack_sigma.coefficient = a;
    }
    if let Some(b) = s.f64("ack_sigma_exponent")? {
        model.ack_sigma.exponent = b;
    }
    if let Some(c) = s.positive("reference_cores")? {
        model.reference_cores = c;
    }
    if let Some(f) = s.positive("time_scale")? {
        model = model.compressed(f);
    }
    model
        .validate()
        .map_err(|msg| ConfigError::schema(s.path("preset"), msg))?;
    Ok(model)
}

/// Scheduler name plus cost model. `[scheduler]` may also be given as a
/// bare string naming the algorithm.
pub fn read_scheduler(root: &Section, key: &str) -> Result<(SchedulerKind, SchedulerCost), ConfigError> {
    if let Some(Value::String(_)) = root.raw(key) {
        let kind = root.choice(key, SchedulerKind::parse)?.expect("present");
        return Ok((kind, SchedulerCost::Zero));
    }
    let Some(s) = root.section(key)? else {
        return Ok((SchedulerKind::ContinuousSearch, SchedulerCost::Zero));
    };
    let kind = s.choice("kind", SchedulerKind::parse)?.unwrap_or(SchedulerKind::ContinuousSearch);
    let scale = s.positive("time_scale")?.unwrap_or(1.0);
    let cost = match s.str("cost")?.unwrap_or("zero") {
        "zero" => SchedulerCost::Zero,
        "titan" => SchedulerCost::Modeled(CostParams::titan(kind).compressed(scale)),
        "measured" => SchedulerCost::Measured,
        other => {
            return Err(ConfigError::UnknownKey {
                path: format!("{} = {other:?}", s.path("cost")),
            })
        }
    };
    s.finish()?;
    Ok((kind, cost))
}

pub fn read_payload(s: &Section, duration: Seconds, jitter: Seconds) -> Result<TaskPayload, ConfigError> {
    let duration = s.positive("duration")?.unwrap_or(duration);
    let jitter = s.non_negative("jitter")?.unwrap_or(jitter);
    let payload = match s.str("kind")?.unwrap_or("sleep") {
        "sleep" => TaskPayload::sleep(duration, jitter),
        "flop_burn" => {
            let mut p = TaskPayload::flop_burn(duration, jitter);
            p.kind = PayloadKind::FlopBurn { flops: s.u64("flops")? };
            p
        }
        "command" => {
            let command = s
                .strings("command")?
                .ok_or_else(|| ConfigError::schema(s.path("command"), "required for kind = \"command\""))?;
            let mut p = TaskPayload::external(command, duration);
            p.jitter_sigma = jitter;
            p
        }
        other => {
            return Err(ConfigError::UnknownKey {
                path: format!("{} = {other:?}", s.path("kind")),
            })
        }
    };
    payload
        .validate()
        .map_err(|e| ConfigError::schema(s.path("kind"), e.to_string()))?;
    Ok(payload)
}

/// Reads the `[agent]` table into the matching session options.
pub fn read_agent(s: &Section, options: &mut SessionOptions) -> Result<(), ConfigError> {
    if let Some(n) = s.count("executors")? {
        options.executors = n;
    }
    if let Some(n) = s.count("pull_batch")? {
        options.pull_batch = NonZeroUsize::new(n);
    }
    if let Some(m) = s.choice("launch", LaunchMethod::parse)? {
        options.launch = m;
    }
    if let Some(t) = s.non_negative("executor_service")? {
        options.executor_service = t;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub count: usize,
    pub cores: usize,
    pub payload: TaskPayload,
}

impl Workload {
    pub fn units(&self) -> Vec<UnitDescription> {
        (0..self.count)
            .map(|i| UnitDescription::new(UnitId::indexed(i), self.cores, self.payload.clone()))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub id: String,
    pub pilot: PilotDescription,
    pub workload: Workload,
    pub options: SessionOptions,
    /// Parent directory of the session directory.
    pub output: PathBuf,
}

impl SessionConfig {
    pub fn session(&self) -> Session {
        Session {
            id: self.id.clone(),
            pilot: self.pilot.clone(),
            units: self.workload.units(),
            options: self.options.clone(),
            dir: self.output.join(&self.id),
        }
    }
}

pub fn load_session(path: &Path) -> Result<SessionConfig, ConfigError> {
    let table = read_table(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    session_from_table(&table, base)
}

/// Builds a session from a parsed table. Relative paths resolve against
/// `base`.
pub fn session_from_table(table: &Table, base: &Path) -> Result<SessionConfig, ConfigError> {
    let root = Section::root(table);
    let id = root.str("session")?.unwrap_or("session").to_string();
    if id.is_empty() || id.contains(['/', '\\']) {
        return Err(ConfigError::schema("session", "must be a plain, non-empty name"));
    }

    let ps = root
        .section("pilot")?
        .ok_or_else(|| ConfigError::schema("pilot", "missing table"))?;
    let mut pilot = match ps.str("resource_file")? {
        Some(f) => load_resource(&resolve(base, f))?,
        None => PilotDescription::new(0, 0),
    };
    read_pilot_fields(&ps, &mut pilot)?;
    if let Some(cores) = ps.count("cores")? {
        if pilot.cores_per_node == 0 || cores % pilot.cores_per_node != 0 {
            return Err(ConfigError::schema(ps.path("cores"), "must be a multiple of cores_per_node"));
        }
        pilot.node_count = cores / pilot.cores_per_node;
        pilot.node_names.clear();
    }
    ps.finish()?;
    check_geometry(&pilot, "pilot")?;

    if let Some(ls) = root.section("latency")? {
        pilot.latency = read_latency(&ls)?;
        ls.finish()?;
    }

    let ws = root
        .section("workload")?
        .ok_or_else(|| ConfigError::schema("workload", "missing table"))?;
    let count = ws
        .count("count")?
        .ok_or_else(|| ConfigError::schema(ws.path("count"), "required"))?;
    let cores = ws.count("cores")?.unwrap_or(1);
    let payload = read_payload(&ws, 3.0, 0.0)?;
    ws.finish()?;

    let mut options = SessionOptions::default();
    let (kind, cost) = read_scheduler(&root, "scheduler")?;
    options.scheduler = kind;
    options.cost = cost;
    if let Some(a) = root.section("agent")? {
        read_agent(&a, &mut options)?;
        a.finish()?;
    }
    if let Some(seed) = root.u64("seed")? {
        options.seed = seed;
    }
    if let Some(p) = root.bool("profile")? {
        options.profile = p;
    }
    let output = resolve(base, root.str("output")?.unwrap_or("runs"));
    root.finish()?;

    Ok(SessionConfig {
        id,
        pilot,
        workload: Workload { count, cores, payload },
        options,
        output,
    })
}
