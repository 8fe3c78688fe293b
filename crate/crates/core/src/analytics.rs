//! Metrics over unified traces: time to execution, core-time utilization,
//! concurrency, per-unit event durations and scheduler throughput.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::{UnitId, UnitState};
use crate::profiler::{read_profile, EventName, ProfileError, ProfileEvent};
use crate::Seconds;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("trace metadata lacks {0}")]
    MissingMeta(&'static str),
    #[error("incomplete trace: {0}")]
    IncompleteTrace(String),
    #[error("negative idle core-time {idle:.6} (accounting error)")]
    NegativeIdle { idle: f64 },
    #[error("unknown event or state {0:?}")]
    UnknownEvent(String),
    #[error("no unit has both {from} and {to}")]
    MissingEvents { from: EventName, to: EventName },
    #[error("throughput needs at least two scheduled units, found {0}")]
    TooFewEvents(usize),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// First time of every event seen for one unit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UnitTimes {
    pub cores: usize,
    pub events: BTreeMap<EventName, Seconds>,
    pub terminal: Option<(UnitState, Seconds)>,
}

impl UnitTimes {
    pub fn get(&self, e: EventName) -> Option<Seconds> {
        self.events.get(&e).copied()
    }

    /// When the unit gave its slots back, or its terminal time when it
    /// never got as far as a spawn return.
    pub fn release_time(&self) -> Option<Seconds> {
        self.get(EventName::SpawnReturn)
            .or(self.terminal.map(|(_, t)| t))
    }
}

/// A loaded unified trace.
#[derive(Debug, Clone)]
pub struct Trace {
    pub meta: Vec<(String, String)>,
    pub events: Vec<ProfileEvent>,
    pub pilot_cores: usize,
    pub units: BTreeMap<UnitId, UnitTimes>,
}

impl Trace {
    pub fn load(path: &Path) -> Result<Trace, AnalyticsError> {
        let file = read_profile(path)?;
        Trace::from_events(file.meta, file.events)
    }

    pub fn from_events(meta: Vec<(String, String)>, events: Vec<ProfileEvent>) -> Result<Trace, AnalyticsError> {
        let value = |k: &str| meta.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
        let pilot_cores: usize = value("pilot_cores")
            .and_then(|v| v.parse().ok())
            .ok_or(AnalyticsError::MissingMeta("pilot_cores"))?;
        let default_cores: usize = value("default_unit_cores")
            .and_then(|v| v.parse().ok())
            .ok_or(AnalyticsError::MissingMeta("default_unit_cores"))?;
        let overrides: HashMap<&str, usize> = meta
            .iter()
            .filter(|(k, _)| k == "unit_cores")
            .filter_map(|(_, v)| {
                let (id, c) = v.split_once(':')?;
                Some((id, c.parse().ok()?))
            })
            .collect();
        let mut units: BTreeMap<UnitId, UnitTimes> = BTreeMap::new();
        for ev in &events {
            let Some(id) = &ev.unit else { continue };
            let u = units.entry(id.clone()).or_insert_with(|| UnitTimes {
                cores: overrides.get(id.as_str()).copied().unwrap_or(default_cores),
                ..UnitTimes::default()
            });
            u.events.entry(ev.name).or_insert(ev.time);
            if let EventName::State(s) = ev.name {
                if s.is_terminal() {
                    u.terminal = Some((s, ev.time));
                }
            }
        }
        Ok(Trace {
            meta,
            events,
            pilot_cores,
            units,
        })
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn require_terminal(&self) -> Result<(), AnalyticsError> {
        if self.units.is_empty() {
            return Err(AnalyticsError::IncompleteTrace("trace has no units".into()));
        }
        match self.units.iter().find(|(_, u)| u.terminal.is_none()) {
            Some((id, _)) => Err(AnalyticsError::IncompleteTrace(format!("unit {id} never reached a terminal state"))),
            None => Ok(()),
        }
    }

    /// `[first db_pull, last release]`.
    pub fn window(&self) -> Result<(Seconds, Seconds), AnalyticsError> {
        self.require_terminal()?;
        let start = self
            .units
            .values()
            .filter_map(|u| u.get(EventName::DbPull))
            .fold(f64::INFINITY, f64::min);
        let end = self
            .units
            .values()
            .filter_map(UnitTimes::release_time)
            .fold(f64::NEG_INFINITY, f64::max);
        if !start.is_finite() {
            return Err(AnalyticsError::IncompleteTrace("no db_pull events".into()));
        }
        Ok((start, end))
    }

    /// Cores requested by every unit when they all agree.
    pub fn common_unit_cores(&self) -> Option<usize> {
        let mut it = self.units.values().map(|u| u.cores);
        let first = it.next()?;
        it.all(|c| c == first).then_some(first)
    }
}

/// Waves of execution read off the trace: a unit belongs to the wave after
/// the latest wave among units that had returned their slots by the time
/// it was scheduled.
pub fn observed_generations(trace: &Trace) -> usize {
    // (time, releases first, unit)
    let mut sweep: Vec<(Seconds, u8, &UnitId)> = Vec::new();
    for (id, u) in &trace.units {
        if let Some(t) = u.get(EventName::SchedDone) {
            sweep.push((t, 1, id));
            if let Some(r) = u.get(EventName::SpawnReturn) {
                sweep.push((r, 0, id));
            }
        }
    }
    sweep.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(b.2)));
    let mut generation: HashMap<&UnitId, usize> = HashMap::new();
    let mut released = 0;
    let mut max = 0;
    for (_, kind, id) in sweep {
        if kind == 0 {
            released = released.max(generation[id]);
        } else {
            let g = released + 1;
            generation.insert(id, g);
            max = max.max(g);
        }
    }
    max
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TtxReport {
    pub ttx: Seconds,
    pub ideal: Seconds,
    /// Generations the workload needs on this pilot, from its geometry
    /// when all units are equal, otherwise as observed.
    pub generations: usize,
    pub observed_generations: usize,
    pub mean_payload: Seconds,
}

impl TtxReport {
    /// `(ttx - ideal) / ideal` in percent.
    pub fn overhead_pct(&self) -> f64 {
        100.0 * (self.ttx - self.ideal) / self.ideal
    }
}

pub fn compute_ttx(trace: &Trace) -> Result<TtxReport, AnalyticsError> {
    let (start, end) = trace.window()?;
    let payloads: Vec<f64> = trace
        .units
        .values()
        .filter_map(|u| Some(u.get(EventName::PayloadStop)? - u.get(EventName::PayloadStart)?))
        .collect();
    let mean_payload = if payloads.is_empty() {
        0.0
    } else {
        payloads.iter().sum::<f64>() / payloads.len() as f64
    };
    let observed = observed_generations(trace);
    let generations = trace
        .common_unit_cores()
        .and_then(|c| crate::scheduler::generation_count(trace.units.len(), trace.pilot_cores, c))
        .unwrap_or(observed);
    Ok(TtxReport {
        ttx: end - start,
        ideal: generations as f64 * mean_payload,
        generations,
        observed_generations: observed,
        mean_payload,
    })
}

/// Pilot core-time over the TTX window split into payload execution,
/// runtime overhead (slots held while no payload runs) and idle cores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Utilization {
    pub total: f64,
    pub workload: f64,
    pub overhead: f64,
    pub idle: f64,
}

impl Utilization {
    pub fn workload_pct(&self) -> f64 {
        100.0 * self.workload / self.total
    }

    pub fn overhead_pct(&self) -> f64 {
        100.0 * self.overhead / self.total
    }

    pub fn idle_pct(&self) -> f64 {
        100.0 * self.idle / self.total
    }
}

fn clipped(a: Seconds, b: Seconds, lo: Seconds, hi: Seconds) -> Seconds {
    (b.min(hi) - a.max(lo)).max(0.0)
}

/// Slots count as held from `sched_done` until the spawn return (or the
/// terminal transition of a unit that never returned); the payload share
/// of that is workload, the rest overhead.
pub fn compute_utilization(trace: &Trace) -> Result<Utilization, AnalyticsError> {
    let (lo, hi) = trace.window()?;
    let total = trace.pilot_cores as f64 * (hi - lo);
    let mut workload = 0.0;
    let mut overhead = 0.0;
    for u in trace.units.values() {
        let Some(held_from) = u.get(EventName::SchedDone) else {
            continue;
        };
        let held_to = u.release_time().expect("terminal units have a release time");
        let held = clipped(held_from, held_to, lo, hi);
        let exec = match u.get(EventName::PayloadStart) {
            Some(s) => {
                let e = u.get(EventName::PayloadStop).unwrap_or(held_to);
                clipped(s, e.min(held_to), lo, hi)
            }
            None => 0.0,
        };
        let cores = u.cores as f64;
        workload += cores * exec;
        overhead += cores * (held - exec);
    }
    let idle = total - workload - overhead;
    if idle < -1e-9 * total.max(1.0) {
        return Err(AnalyticsError::NegativeIdle { idle });
    }
    Ok(Utilization {
        total,
        workload,
        overhead,
        idle: idle.max(0.0),
    })
}

/// Named spans for concurrency series.
pub const STATE_INTERVALS: [(&str, EventName, EventName); 5] = [
    ("scheduling", EventName::DbPull, EventName::SchedDone),
    ("executor_queue", EventName::ExecQueued, EventName::ExecStart),
    ("launching", EventName::ExecStart, EventName::PayloadStart),
    ("executing", EventName::PayloadStart, EventName::PayloadStop),
    ("acknowledging", EventName::PayloadStop, EventName::SpawnReturn),
];

/// Resolves a state name from [`STATE_INTERVALS`] or a `from:to` pair of
/// event names.
pub fn parse_interval(spec: &str) -> Result<(EventName, EventName), AnalyticsError> {
    if let Some(&(_, a, b)) = STATE_INTERVALS.iter().find(|(n, _, _)| *n == spec) {
        return Ok((a, b));
    }
    let (a, b) = spec
        .split_once(':')
        .ok_or_else(|| AnalyticsError::UnknownEvent(spec.to_string()))?;
    let parse = |s: &str| EventName::parse(s).map_err(|_| AnalyticsError::UnknownEvent(s.to_string()));
    Ok((parse(a)?, parse(b)?))
}

/// Step function of the number of units between `from` and `to`: each
/// point `(t, n)` holds from `t` until the next point. A unit that never
/// reaches `to` leaves at its terminal time.
pub fn concurrency_series(trace: &Trace, from: EventName, to: EventName) -> Result<Vec<(Seconds, usize)>, AnalyticsError> {
    let mut deltas: Vec<(Seconds, i64)> = Vec::new();
    for u in trace.units.values() {
        let Some(s) = u.get(from) else { continue };
        let e = u
            .get(to)
            .or(u.terminal.map(|(_, t)| t))
            .unwrap_or(f64::INFINITY);
        deltas.push((s, 1));
        if e.is_finite() {
            deltas.push((e.max(s), -1));
        }
    }
    if deltas.is_empty() {
        return Err(AnalyticsError::MissingEvents { from, to });
    }
    deltas.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut series: Vec<(Seconds, usize)> = Vec::new();
    let mut level: i64 = 0;
    for (t, d) in deltas {
        level += d;
        match series.last_mut() {
            Some(last) if last.0 == t => last.1 = level as usize,
            _ => series.push((t, level as usize)),
        }
    }
    Ok(series)
}

/// Integral of a step series from its first to its last point.
pub fn series_integral(series: &[(Seconds, usize)]) -> f64 {
    series.windows(2).map(|w| (w[1].0 - w[0].0) * w[0].1 as f64).sum()
}

pub fn series_peak(series: &[(Seconds, usize)]) -> usize {
    series.iter().map(|p| p.1).max().unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventStats {
    pub count: usize,
    pub mean: Seconds,
    /// Sample standard deviation; zero for a single unit.
    pub std: Seconds,
    pub median: Seconds,
    pub p95: Seconds,
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn describe(mut xs: Vec<f64>) -> Option<EventStats> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some(EventStats {
        count: xs.len(),
        mean,
        std,
        median: percentile(&xs, 0.5),
        p95: percentile(&xs, 0.95),
    })
}

/// Statistics of `to - from` over units that have both events.
pub fn per_event_stats(trace: &Trace, from: EventName, to: EventName) -> Result<EventStats, AnalyticsError> {
    let xs: Vec<f64> = trace
        .units
        .values()
        .filter_map(|u| Some(u.get(to)? - u.get(from)?))
        .collect();
    describe(xs).ok_or(AnalyticsError::MissingEvents { from, to })
}

/// Event pairs reported by the `events` report.
pub const EVENT_PAIRS: [(EventName, EventName); 7] = [
    (EventName::DbPull, EventName::SchedDone),
    (EventName::SchedStart, EventName::SchedDone),
    (EventName::ExecQueued, EventName::ExecStart),
    (EventName::ExecQueued, EventName::PayloadStart),
    (EventName::PayloadStart, EventName::PayloadStop),
    (EventName::PayloadStop, EventName::SpawnReturn),
    (EventName::SpawnReturn, EventName::UnschedDone),
];

/// Placed units per second between the first and last `sched_done`.
pub fn scheduler_throughput(trace: &Trace) -> Result<f64, AnalyticsError> {
    let times: Vec<f64> = trace
        .units
        .values()
        .filter_map(|u| u.get(EventName::SchedDone))
        .collect();
    if times.len() < 2 {
        return Err(AnalyticsError::TooFewEvents(times.len()));
    }
    let first = times.iter().copied().fold(f64::INFINITY, f64::min);
    let last = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if last <= first {
        return Ok(f64::INFINITY);
    }
    Ok(times.len() as f64 / (last - first))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    Ttx,
    Ru,
    Concurrency,
    Events,
    Throughput,
}

impl ReportKind {
    pub const ALL: [ReportKind; 5] = [
        ReportKind::Ttx,
        ReportKind::Ru,
        ReportKind::Concurrency,
        ReportKind::Events,
        ReportKind::Throughput,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReportKind::Ttx => "ttx",
            ReportKind::Ru => "ru",
            ReportKind::Concurrency => "concurrency",
            ReportKind::Events => "events",
            ReportKind::Throughput => "throughput",
        }
    }

    pub fn parse(s: &str) -> Option<ReportKind> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

fn write_file(path: PathBuf, body: &str) -> Result<PathBuf, AnalyticsError> {
    fs::write(&path, body).map_err(|source| AnalyticsError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Writes the CSV table and SVG plot of one report into `out` and returns
/// the files written.
pub fn write_report(trace: &Trace, kind: ReportKind, out: &Path) -> Result<Vec<PathBuf>, AnalyticsError> {
    fs::create_dir_all(out).map_err(|source| AnalyticsError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let mut files = Vec::new();
    match kind {
        ReportKind::Ttx => {
            let r = compute_ttx(trace)?;
            let csv = format!(
                "ttx,ideal_ttx,overhead_pct,generations,observed_generations,mean_payload\n{:.6},{:.6},{:.3},{},{},{:.6}\n",
                r.ttx,
                r.ideal,
                r.overhead_pct(),
                r.generations,
                r.observed_generations,
                r.mean_payload
            );
            files.push(write_file(out.join("ttx.csv"), &csv)?);
        }
        ReportKind::Ru => {
            let u = compute_utilization(trace)?;
            let csv = format!(
                "workload_pct,overhead_pct,idle_pct,workload_core_s,overhead_core_s,idle_core_s\n{:.4},{:.4},{:.4},{:.6},{:.6},{:.6}\n",
                u.workload_pct(),
                u.overhead_pct(),
                u.idle_pct(),
                u.workload,
                u.overhead,
                u.idle
            );
            files.push(write_file(out.join("ru.csv"), &csv)?);
            let bars = [("session".to_string(), [u.workload_pct(), u.overhead_pct(), u.idle_pct()])];
            files.push(write_file(out.join("fig4_ru.svg"), &svg::stacked_bars("Core-time utilization", &bars))?);
        }
        ReportKind::Concurrency => {
            let mut csv = String::from("state,time,count\n");
            let mut lines = Vec::new();
            for (name, from, to) in STATE_INTERVALS {
                let Ok(series) = concurrency_series(trace, from, to) else { continue };
                for (t, c) in &series {
                    let _ = writeln!(csv, "{name},{t:.6},{c}");
                }
                lines.push(svg::Series {
                    name: name.to_string(),
                    points: svg::steps(&series),
                    scatter: false,
                });
            }
            files.push(write_file(out.join("concurrency.csv"), &csv)?);
            files.push(write_file(
                out.join("fig5_concurrency.svg"),
                &svg::plot("Concurrency", "time (s)", "units", &lines),
            )?);
        }
        ReportKind::Events => {
            let mut csv = String::from("from,to,count,mean,std,median,p95\n");
            for (a, b) in EVENT_PAIRS {
                if let Ok(s) = per_event_stats(trace, a, b) {
                    let _ = writeln!(
                        csv,
                        "{a},{b},{},{:.6},{:.6},{:.6},{:.6}",
                        s.count, s.mean, s.std, s.median, s.p95
                    );
                }
            }
            files.push(write_file(out.join("events.csv"), &csv)?);
            let mut series = Vec::new();
            for name in EventName::PIPELINE {
                let points: Vec<(f64, f64)> = trace
                    .units
                    .values()
                    .enumerate()
                    .filter_map(|(i, u)| Some((u.get(name)?, i as f64)))
                    .collect();
                if !points.is_empty() {
                    series.push(svg::Series {
                        name: name.to_string(),
                        points,
                        scatter: true,
                    });
                }
            }
            files.push(write_file(
                out.join("fig6_events.svg"),
                &svg::plot("Unit events", "time (s)", "unit", &series),
            )?);
        }
        ReportKind::Throughput => {
            let tput = scheduler_throughput(trace)?;
            let service = per_event_stats(trace, EventName::SchedStart, EventName::SchedDone)?;
            let csv = format!(
                "throughput_tasks_per_s,service_median_s,service_mean_s,service_p95_s\n{tput:.6},{:.9},{:.9},{:.9}\n",
                service.median, service.mean, service.p95
            );
            files.push(write_file(out.join("throughput.csv"), &csv)?);
            let mut per_task: Vec<(f64, f64)> = trace
                .units
                .values()
                .filter_map(|u| Some((u.get(EventName::SchedDone)?, u.get(EventName::SchedDone)? - u.get(EventName::SchedStart)?)))
                .collect();
            per_task.sort_by(|a, b| a.0.total_cmp(&b.0));
            let points = per_task.iter().enumerate().map(|(i, p)| (i as f64, p.1)).collect();
            let series = [svg::Series {
                name: "service time".into(),
                points,
                scatter: true,
            }];
            files.push(write_file(
                out.join("fig8_scheduling.svg"),
                &svg::plot("Scheduling service time", "task", "seconds", &series),
            )?);
        }
    }
    Ok(files)
}

/// Minimal SVG charts.
pub mod svg {
    use std::fmt::Write as _;

    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 60.0;
    const COLORS: [&str; 8] = [
        "#d62728", "#2ca02c", "#1f77b4", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
    ];

    pub struct Series {
        pub name: String,
        pub points: Vec<(f64, f64)>,
        pub scatter: bool,
    }

    /// Corner points of a step function.
    pub fn steps(series: &[(f64, usize)]) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(series.len() * 2);
        for (i, &(t, c)) in series.iter().enumerate() {
            if i > 0 {
                out.push((t, series[i - 1].1 as f64));
            }
            out.push((t, c as f64));
        }
        out
    }

    fn header(title: &str) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
             <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
            W / 2.0,
            escape(title)
        )
    }

    fn escape(s: &str) -> String {
        s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
    }

    pub fn plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
        let all = series.iter().flat_map(|s| s.points.iter());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
        for &(x, y) in all {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y1) = (0.0, 1.0, 1.0);
        }
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        if y1 <= y0 {
            y1 = y0 + 1.0;
        }
        let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
        let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
        let mut out = header(title);
        let _ = writeln!(
            out,
            "<line x1=\"{M}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/><line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{b}\" stroke=\"black\"/>",
            b = H - M,
            r = W - M
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text><text x=\"15\" y=\"{}\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\">{}</text>",
            W / 2.0,
            H - 15.0,
            escape(xlabel),
            H / 2.0,
            H / 2.0,
            escape(ylabel)
        );
        for (v, anchor, x, y) in [
            (x0, "start", sx(x0), H - M + 15.0),
            (x1, "end", sx(x1), H - M + 15.0),
            (y0, "end", M - 5.0, sy(y0)),
            (y1, "end", M - 5.0, sy(y1) + 4.0),
        ] {
            let _ = writeln!(out, "<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"{anchor}\">{v:.3}</text>");
        }
        for (i, s) in series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            if s.scatter {
                for &(x, y) in &s.points {
                    let _ = writeln!(out, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"1.5\" fill=\"{color}\"/>", sx(x), sy(y));
                }
            } else {
                let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
                let _ = writeln!(out, "<polyline fill=\"none\" stroke=\"{color}\" points=\"{}\"/>", pts.join(" "));
            }
            let _ = writeln!(
                out,
                "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/><text x=\"{}\" y=\"{}\">{}</text>",
                W - M + 5.0,
                M + 15.0 * i as f64,
                W - M + 18.0,
                M + 9.0 + 15.0 * i as f64,
                escape(&s.name)
            );
        }
        out.push_str("</svg>\n");
        out
    }

    /// Bars of `[workload, overhead, idle]` percentages.
    pub fn stacked_bars(title: &str, bars: &[(String, [f64; 3])]) -> String {
        let mut out = header(title);
        let n = bars.len().max(1) as f64;
        let width = (W - 2.0 * M) / n;
        let scale = (H - 2.0 * M) / 100.0;
        for (i, (label, parts)) in bars.iter().enumerate() {
            let x = M + width * i as f64 + width * 0.1;
            let mut y = H - M;
            for (k, p) in parts.iter().enumerate() {
                let h = p.max(0.0) * scale;
                y -= h;
                let _ = writeln!(
                    out,
                    "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{h:.1}\" fill=\"{}\"/>",
                    width * 0.8,
                    ["#d62728", "#2ca02c", "#1f77b4"][k]
                );
            }
            let _ = writeln!(
                out,
                "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
                x + width * 0.4,
                H - M + 15.0,
                escape(label)
            );
        }
        for (k, name) in ["workload", "overhead", "idle"].iter().enumerate() {
            let _ = writeln!(
                out,
                "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{}\" y=\"{}\">{name}</text>",
                W - M + 5.0,
                M + 15.0 * k as f64,
                ["#d62728", "#2ca02c", "#1f77b4"][k],
                W - M + 18.0,
                M + 9.0 + 15.0 * k as f64
            );
        }
        out.push_str("</svg>\n");
        out
    }
}
