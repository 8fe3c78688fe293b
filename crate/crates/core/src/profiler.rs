//! Lifecycle event recording and post-mortem trace assembly.
//!
//! Every component worker owns a [`Recorder`] that buffers events and
//! writes them to `<dir>/<component>.<worker>.prof`. After a session the
//! per-worker profiles are rebased onto the reference clock with
//! [`synchronize`] and merged into `unified.prof`. The file format is
//! described in `docs/trace-format.md`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::model::{UnitId, UnitState};
use crate::Seconds;

pub const FORMAT_LINE: &str = "# pilot-profile 1";
pub const COLUMNS: &str = "time,event,component,worker,unit,pilot";
pub const UNIFIED_FILE: &str = "unified.prof";

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {msg}")]
    Format {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("unknown event {0:?}")]
    UnknownEvent(String),
    #[error("profile of {component} has no start sync point")]
    MissingSyncPoint { component: String },
    #[error("inconsistent trace: {0}")]
    InconsistentTrace(Violation),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ProfileError + '_ {
    move |source| ProfileError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventName {
    DbPull,
    SchedStart,
    SchedDone,
    ExecQueued,
    ExecStart,
    PayloadStart,
    PayloadStop,
    SpawnReturn,
    UnschedDone,
    State(UnitState),
}

impl EventName {
    /// Per-unit pipeline events in the order they must occur.
    pub const PIPELINE: [EventName; 8] = [
        EventName::DbPull,
        EventName::SchedStart,
        EventName::SchedDone,
        EventName::ExecQueued,
        EventName::ExecStart,
        EventName::PayloadStart,
        EventName::PayloadStop,
        EventName::SpawnReturn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventName::DbPull => "db_pull",
            EventName::SchedStart => "sched_start",
            EventName::SchedDone => "sched_done",
            EventName::ExecQueued => "exec_queued",
            EventName::ExecStart => "exec_start",
            EventName::PayloadStart => "payload_start",
            EventName::PayloadStop => "payload_stop",
            EventName::SpawnReturn => "spawn_return",
            EventName::UnschedDone => "unsched_done",
            EventName::State(UnitState::New) => "state_new",
            EventName::State(UnitState::PendingSchedule) => "state_pending_schedule",
            EventName::State(UnitState::Scheduled) => "state_scheduled",
            EventName::State(UnitState::PendingExecution) => "state_pending_execution",
            EventName::State(UnitState::Executing) => "state_executing",
            EventName::State(UnitState::Done) => "state_done",
            EventName::State(UnitState::Failed) => "state_failed",
            EventName::State(UnitState::Canceled) => "state_canceled",
        }
    }

    pub fn parse(s: &str) -> Result<EventName, ProfileError> {
        if let Some(state) = s.strip_prefix("state_").and_then(UnitState::parse) {
            return Ok(EventName::State(state));
        }
        Self::PIPELINE
            .into_iter()
            .chain([EventName::UnschedDone])
            .find(|e| e.as_str() == s)
            .ok_or_else(|| ProfileError::UnknownEvent(s.to_string()))
    }
}

impl fmt::Display for EventName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileEvent {
    pub time: Seconds,
    pub name: EventName,
    pub component: String,
    pub worker: u32,
    pub unit: Option<UnitId>,
    pub pilot: Option<String>,
}

impl ProfileEvent {
    fn write_row(&self, out: &mut impl Write) -> io::Result<()> {
        write_row(
            out,
            self.time,
            self.name,
            &self.component,
            self.worker,
            self.unit.as_ref(),
            self.pilot.as_deref(),
        )
    }
}

fn write_row(
    out: &mut impl Write,
    time: Seconds,
    name: EventName,
    component: &str,
    worker: u32,
    unit: Option<&UnitId>,
    pilot: Option<&str>,
) -> io::Result<()> {
    writeln!(
        out,
        "{:.9},{},{},{},{},{}",
        time,
        name,
        component,
        worker,
        unit.map(UnitId::as_str).unwrap_or(""),
        pilot.unwrap_or("")
    )
}

/// A `(local clock, reference clock)` reading taken at the same instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncPoint {
    pub local: Seconds,
    pub reference: Seconds,
}

impl SyncPoint {
    pub fn identity(t: Seconds) -> Self {
        SyncPoint {
            local: t,
            reference: t,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FlushPolicy {
    pub max_events: usize,
    pub max_interval: Duration,
}

impl Default for FlushPolicy {
    fn default() -> Self {
        FlushPolicy {
            max_events: 4096,
            max_interval: Duration::from_secs(1),
        }
    }
}

#[derive(Debug)]
struct Buffered {
    time: Seconds,
    name: EventName,
    unit: Option<UnitId>,
}

#[derive(Debug)]
enum Sink {
    Memory(Vec<Buffered>),
    File {
        path: PathBuf,
        writer: BufWriter<File>,
    },
}

#[derive(Debug)]
struct Active {
    component: String,
    worker: u32,
    pilot: Option<String>,
    buffer: Vec<Buffered>,
    sink: Sink,
    policy: FlushPolicy,
    last_flush: Instant,
    rows: u64,
}

/// Per-worker event buffer. A disabled recorder drops every event.
#[derive(Debug)]
pub struct Recorder {
    active: Option<Active>,
}

/// What a closed recorder left behind.
#[derive(Debug, Clone, PartialEq)]
pub struct RecorderSummary {
    pub path: Option<PathBuf>,
    pub rows: u64,
}

impl Recorder {
    pub fn disabled() -> Self {
        Recorder { active: None }
    }

    /// Recorder that keeps events in memory; see [`Recorder::events`].
    pub fn in_memory(component: &str, worker: u32) -> Self {
        Recorder {
            active: Some(Active {
                component: component.to_string(),
                worker,
                pilot: None,
                buffer: Vec::new(),
                sink: Sink::Memory(Vec::new()),
                policy: FlushPolicy::default(),
                last_flush: Instant::now(),
                rows: 0,
            }),
        }
    }

    /// Creates `<dir>/<component>.<worker>.prof` and writes its header.
    pub fn to_file(
        dir: &Path,
        component: &str,
        worker: u32,
        pilot: Option<&str>,
        start: SyncPoint,
        policy: FlushPolicy,
    ) -> Result<Self, ProfileError> {
        let path = dir.join(format!("{component}.{worker}.prof"));
        let file = File::create(&path).map_err(io_err(&path))?;
        let mut writer = BufWriter::new(file);
        (|| -> io::Result<()> {
            writeln!(writer, "{FORMAT_LINE}")?;
            writeln!(writer, "# component={component}")?;
            writeln!(writer, "# worker={worker}")?;
            writeln!(writer, "# sync_start={:.9}:{:.9}", start.local, start.reference)?;
            writeln!(writer, "{COLUMNS}")
        })()
        .map_err(io_err(&path))?;
        Ok(Recorder {
            active: Some(Active {
                component: component.to_string(),
                worker,
                pilot: pilot.map(str::to_string),
                buffer: Vec::with_capacity(policy.max_events),
                sink: Sink::File { path, writer },
                policy,
                last_flush: Instant::now(),
                rows: 0,
            }),
        })
    }

    pub fn is_enabled(&self) -> bool {
        self.active.is_some()
    }

    pub fn record(&mut self, name: EventName, time: Seconds, unit: Option<&UnitId>) {
        let Some(active) = self.active.as_mut() else {
            return;
        };
        active.buffer.push(Buffered {
            time,
            name,
            unit: unit.cloned(),
        });
        if active.buffer.len() >= active.policy.max_events
            || active.last_flush.elapsed() >= active.policy.max_interval
        {
            // A failed flush surfaces again on close.
            let _ = active.flush();
        }
    }

    /// Events recorded so far by an in-memory recorder (empty otherwise).
    pub fn events(&self) -> Vec<ProfileEvent> {
        let Some(active) = &self.active else {
            return Vec::new();
        };
        let stored: &[Buffered] = match &active.sink {
            Sink::Memory(v) => v,
            Sink::File { .. } => &[],
        };
        stored
            .iter()
            .chain(active.buffer.iter())
            .map(|b| active.materialize(b))
            .collect()
    }

    /// Flushes everything and appends the end sync point.
    pub fn close(self, end: SyncPoint) -> Result<RecorderSummary, ProfileError> {
        let Some(mut active) = self.active else {
            return Ok(RecorderSummary { path: None, rows: 0 });
        };
        active.flush()?;
        match active.sink {
            Sink::Memory(v) => Ok(RecorderSummary {
                path: None,
                rows: v.len() as u64,
            }),
            Sink::File { path, mut writer } => {
                writeln!(writer, "# sync_end={:.9}:{:.9}", end.local, end.reference)
                    .and_then(|_| writer.flush())
                    .map_err(io_err(&path))?;
                Ok(RecorderSummary {
                    path: Some(path),
                    rows: active.rows,
                })
            }
        }
    }
}

impl Active {
    fn materialize(&self, b: &Buffered) -> ProfileEvent {
        ProfileEvent {
            time: b.time,
            name: b.name,
            component: self.component.clone(),
            worker: self.worker,
            unit: b.unit.clone(),
            pilot: self.pilot.clone(),
        }
    }

    fn flush(&mut self) -> Result<(), ProfileError> {
        self.last_flush = Instant::now();
        self.rows += self.buffer.len() as u64;
        match &mut self.sink {
            Sink::Memory(v) => {
                v.append(&mut self.buffer);
                Ok(())
            }
            Sink::File { path, writer } => {
                for b in self.buffer.drain(..) {
                    write_row(
                        writer,
                        b.time,
                        b.name,
                        &self.component,
                        self.worker,
                        b.unit.as_ref(),
                        self.pilot.as_deref(),
                    )
                    .map_err(io_err(path))?;
                }
                Ok(())
            }
        }
    }
}

/// A parsed profile or unified trace file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProfileFile {
    /// `# key=value` lines in file order; keys may repeat.
    pub meta: Vec<(String, String)>,
    pub events: Vec<ProfileEvent>,
}

impl ProfileFile {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn meta_values<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.meta
            .iter()
            .filter(move |(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn sync_point(&self, key: &str) -> Option<SyncPoint> {
        let (l, r) = self.meta_value(key)?.split_once(':')?;
        Some(SyncPoint {
            local: l.parse().ok()?,
            reference: r.parse().ok()?,
        })
    }

    pub fn component(&self) -> &str {
        self.meta_value("component").unwrap_or("?")
    }
}

pub fn read_profile(path: &Path) -> Result<ProfileFile, ProfileError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = ProfileFile::default();
    let fmt_err = |line: usize, msg: String| ProfileError::Format {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut seen_columns = false;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let lineno = i + 1;
        if i == 0 {
            if line != FORMAT_LINE {
                return Err(fmt_err(lineno, format!("expected {FORMAT_LINE:?}")));
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("# ") {
            let (k, v) = rest
                .split_once('=')
                .ok_or_else(|| fmt_err(lineno, "metadata line without '='".into()))?;
            out.meta.push((k.to_string(), v.to_string()));
            continue;
        }
        if !seen_columns {
            if line != COLUMNS {
                return Err(fmt_err(lineno, format!("expected column header {COLUMNS:?}")));
            }
            seen_columns = true;
            continue;
        }
        out.events.push(parse_row(&line).map_err(|msg| fmt_err(lineno, msg))?);
    }
    Ok(out)
}

fn parse_row(line: &str) -> Result<ProfileEvent, String> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 6 {
        return Err(format!("expected 6 fields, found {}", fields.len()));
    }
    let time: f64 = fields[0]
        .parse()
        .map_err(|_| format!("bad timestamp {:?}", fields[0]))?;
    let name = EventName::parse(fields[1]).map_err(|e| e.to_string())?;
    let worker: u32 = fields[3]
        .parse()
        .map_err(|_| format!("bad worker {:?}", fields[3]))?;
    let unit = match fields[4] {
        "" => None,
        u => Some(UnitId::new(u).map_err(|e| e.to_string())?),
    };
    Ok(ProfileEvent {
        time,
        name,
        component: fields[2].to_string(),
        worker,
        unit,
        pilot: (!fields[5].is_empty()).then(|| fields[5].to_string()),
    })
}

/// Rebases every profile onto the reference clock and merges them.
///
/// Local time `t` maps to `r0 + (t - l0) * (r1 - r0) / (l1 - l0)` using the
/// start and end sync points, or to `t + (r0 - l0)` when only the start is
/// known. The merged trace is ordered by time, ties broken by component,
/// worker and original row order, and must pass [`check_consistency`].
pub fn synchronize(profiles: &[ProfileFile]) -> Result<Vec<ProfileEvent>, ProfileError> {
    let mut order: Vec<(&str, u32, usize)> = profiles
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let worker = p.meta_value("worker").and_then(|w| w.parse().ok()).unwrap_or(0);
            (p.component(), worker, i)
        })
        .collect();
    order.sort();

    let mut merged: Vec<(f64, usize, usize, ProfileEvent)> = Vec::new();
    for (rank, &(component, _, idx)) in order.iter().enumerate() {
        let profile = &profiles[idx];
        let start = profile
            .sync_point("sync_start")
            .ok_or_else(|| ProfileError::MissingSyncPoint {
                component: component.to_string(),
            })?;
        let slope = match profile.sync_point("sync_end") {
            Some(end) if end.local > start.local => {
                (end.reference - start.reference) / (end.local - start.local)
            }
            _ => 1.0,
        };
        for (row, ev) in profile.events.iter().enumerate() {
            let mut ev = ev.clone();
            ev.time = start.reference + (ev.time - start.local) * slope;
            merged.push((ev.time, rank, row, ev));
        }
    }
    merged.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let events: Vec<ProfileEvent> = merged.into_iter().map(|(_, _, _, e)| e).collect();
    check_consistency(&events)?;
    Ok(events)
}

/// An event that happened before one it must follow.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub unit: UnitId,
    pub earlier: EventName,
    pub earlier_time: Seconds,
    pub later: EventName,
    pub later_time: Seconds,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "unit {}: {} at {:.9} precedes {} at {:.9}",
            self.unit, self.later, self.later_time, self.earlier, self.earlier_time
        )
    }
}

/// Every ordering violation in a trace: pipeline events out of order,
/// `unsched_done` before `spawn_return`, or state events out of lifecycle
/// order.
pub fn violations(events: &[ProfileEvent]) -> Vec<Violation> {
    let mut per_unit: BTreeMap<&UnitId, Vec<(EventName, Seconds)>> = BTreeMap::new();
    for ev in events {
        if let Some(u) = &ev.unit {
            per_unit.entry(u).or_default().push((ev.name, ev.time));
        }
    }
    let mut found = Vec::new();
    for (unit, evs) in per_unit {
        let first = |name: EventName| evs.iter().find(|(n, _)| *n == name).map(|&(_, t)| t);
        let mut chain: Vec<(EventName, Seconds)> = EventName::PIPELINE
            .into_iter()
            .filter_map(|n| first(n).map(|t| (n, t)))
            .collect();
        if let (Some(ret), Some(un)) = (first(EventName::SpawnReturn), first(EventName::UnschedDone)) {
            if un < ret {
                found.push(Violation {
                    unit: unit.clone(),
                    earlier: EventName::SpawnReturn,
                    earlier_time: ret,
                    later: EventName::UnschedDone,
                    later_time: un,
                });
            }
        }
        let mut states: Vec<(EventName, Seconds)> = evs
            .iter()
            .filter(|(n, _)| matches!(n, EventName::State(_)))
            .copied()
            .collect();
        states.sort_by_key(|(n, _)| *n);
        for seq in [&mut chain, &mut states] {
            for w in seq.windows(2) {
                if w[1].1 < w[0].1 {
                    found.push(Violation {
                        unit: unit.clone(),
                        earlier: w[0].0,
                        earlier_time: w[0].1,
                        later: w[1].0,
                        later_time: w[1].1,
                    });
                }
            }
        }
    }
    found
}

pub fn check_consistency(events: &[ProfileEvent]) -> Result<(), ProfileError> {
    match violations(events).into_iter().next() {
        Some(v) => Err(ProfileError::InconsistentTrace(v)),
        None => Ok(()),
    }
}

pub fn write_unified(
    path: &Path,
    meta: &[(String, String)],
    events: &[ProfileEvent],
) -> Result<(), ProfileError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    (|| -> io::Result<()> {
        writeln!(w, "{FORMAT_LINE}")?;
        writeln!(w, "# component=unified")?;
        for (k, v) in meta {
            writeln!(w, "# {k}={v}")?;
        }
        writeln!(w, "{COLUMNS}")?;
        for ev in events {
            ev.write_row(&mut w)?;
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

/// Reads every `*.prof` file in `dir` except an existing unified trace.
pub fn read_component_profiles(dir: &Path) -> Result<Vec<ProfileFile>, ProfileError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "prof")
                && p.file_name().is_some_and(|n| n != UNIFIED_FILE)
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| read_profile(p)).collect()
}
