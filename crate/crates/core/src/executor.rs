//! Launch methods, launch-layer latency models and child-process handling.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emulator::PayloadKind;
use crate::model::{Allocation, Backend, ComputeUnit, ResourceModel};
use crate::Seconds;

pub const ENV_UNIT_ID: &str = "PILOT_UNIT_ID";
pub const ENV_SLOTS: &str = "PILOT_SLOTS";
pub const ENV_CORES: &str = "PILOT_CORES";

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("launch method {method:?} cannot be used on the {backend} backend")]
    IncompatibleMethod { method: LaunchMethod, backend: Backend },
    #[error("unit {unit} has no allocation")]
    NotAllocated { unit: String },
    #[error("flop_burn payloads need an emulator executable")]
    NoEmulator,
    #[error("flop_burn payloads need a calibrated flop rate")]
    Uncalibrated,
    #[error("spawn of {unit} failed: {source}")]
    SpawnFailure {
        unit: String,
        source: std::io::Error,
    },
    #[error("lost child of {unit}: {source}")]
    LostChild {
        unit: String,
        source: std::io::Error,
    },
    #[error("an executor pool needs at least one worker")]
    NoExecutors,
}

/// Log-normal latency given by its median and log-space sigma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalLatency {
    pub median: Seconds,
    pub sigma: f64,
}

impl LogNormalLatency {
    pub const ZERO: LogNormalLatency = LogNormalLatency {
        median: 0.0,
        sigma: 0.0,
    };

    /// Moment-matched distribution with the given mean and standard deviation.
    pub fn from_mean_std(mean: Seconds, std: Seconds) -> Self {
        if mean <= 0.0 {
            return Self::ZERO;
        }
        let sigma = (1.0 + (std / mean).powi(2)).ln().sqrt();
        LogNormalLatency {
            median: mean / (sigma * sigma / 2.0).exp(),
            sigma,
        }
    }

    pub fn mean(&self) -> Seconds {
        self.median * (self.sigma * self.sigma / 2.0).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Seconds {
        if self.median <= 0.0 {
            return 0.0;
        }
        if self.sigma == 0.0 {
            return self.median;
        }
        LogNormal::new(self.median.ln(), self.sigma)
            .expect("validated latency parameters")
            .sample(rng)
    }
}

/// `coefficient * x^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub coefficient: f64,
    pub exponent: f64,
}

impl PowerLaw {
    pub fn constant(value: f64) -> Self {
        PowerLaw {
            coefficient: value,
            exponent: 0.0,
        }
    }

    pub fn at(&self, x: f64) -> f64 {
        self.coefficient * x.powf(self.exponent)
    }

    /// Ordinary least squares of `ln y` on `ln x`. Needs at least two
    /// distinct positive `x` and positive `y`.
    pub fn fit(points: &[(f64, f64)]) -> Option<PowerLaw> {
        if points.len() < 2 || points.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
            return None;
        }
        let n = points.len() as f64;
        let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
        let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
        let mx = lx.iter().sum::<f64>() / n;
        let my = ly.iter().sum::<f64>() / n;
        let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
        if sxx == 0.0 {
            return None;
        }
        let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
        let exponent = sxy / sxx;
        Some(PowerLaw {
            coefficient: (my - exponent * mx).exp(),
            exponent,
        })
    }
}

/// A reported latency statistic at one pilot size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyObservation {
    pub pilot_cores: f64,
    pub mean: Seconds,
    pub std: Seconds,
}

/// Completion-acknowledgement means and deviations measured with ORTE at
/// 512/1024/2048/4096 tasks on 16k/32k/64k/128k cores.
pub const TITAN_ACK: [LatencyObservation; 4] = [
    LatencyObservation { pilot_cores: 16_384.0, mean: 29.0, std: 16.0 },
    LatencyObservation { pilot_cores: 32_768.0, mean: 34.0, std: 28.0 },
    LatencyObservation { pilot_cores: 65_536.0, mean: 59.0, std: 46.0 },
    LatencyObservation { pilot_cores: 131_072.0, mean: 135.0, std: 107.0 },
];

/// Launch preparation at 512 tasks on 16k cores; treated as scale invariant.
pub const TITAN_PREPARE: LatencyObservation = LatencyObservation {
    pilot_cores: 16_384.0,
    mean: 37.0,
    std: 9.0,
};

/// Launch-layer latencies.
///
/// Preparation (hand-off to payload start) is one log-normal for every pilot
/// size. The completion acknowledgement is log-normal with median and
/// sigma following `a * (cores / reference_cores)^b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub prepare: LogNormalLatency,
    pub ack_median: PowerLaw,
    pub ack_sigma: PowerLaw,
    pub reference_cores: f64,
}

impl LatencyModel {
    pub fn zero() -> Self {
        LatencyModel {
            prepare: LogNormalLatency::ZERO,
            ack_median: PowerLaw::constant(0.0),
            ack_sigma: PowerLaw::constant(0.0),
            reference_cores: 1.0,
        }
    }

    /// Fits the acknowledgement power laws to per-size observations: each
    /// observation is moment-matched to a log-normal, then `ln median` and
    /// `ln sigma` are regressed on `ln(cores / reference)`.
    pub fn fit(
        prepare: LatencyObservation,
        ack: &[LatencyObservation],
        reference_cores: f64,
    ) -> Option<Self> {
        let matched: Vec<(f64, LogNormalLatency)> = ack
            .iter()
            .map(|o| (o.pilot_cores / reference_cores, LogNormalLatency::from_mean_std(o.mean, o.std)))
            .collect();
        let ack_median = PowerLaw::fit(&matched.iter().map(|(x, l)| (*x, l.median)).collect::<Vec<_>>())?;
        let ack_sigma = PowerLaw::fit(&matched.iter().map(|(x, l)| (*x, l.sigma)).collect::<Vec<_>>())?;
        Some(LatencyModel {
            prepare: LogNormalLatency::from_mean_std(prepare.mean, prepare.std),
            ack_median,
            ack_sigma,
            reference_cores,
        })
    }

    /// Model fitted to the ORTE measurements on Titan, in seconds.
    pub fn titan() -> Self {
        Self::fit(TITAN_PREPARE, &TITAN_ACK, 16_384.0).expect("constant observations are valid")
    }

    /// Same model with every latency divided by `factor`.
    pub fn compressed(&self, factor: f64) -> Self {
        let mut m = *self;
        m.prepare.median /= factor;
        m.ack_median.coefficient /= factor;
        m
    }

    pub fn validate(&self) -> Result<(), String> {
        let finite = [
            self.prepare.median,
            self.prepare.sigma,
            self.ack_median.coefficient,
            self.ack_median.exponent,
            self.ack_sigma.coefficient,
            self.ack_sigma.exponent,
            self.reference_cores,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err("latency parameters must be finite".into());
        }
        if self.prepare.median < 0.0 || self.prepare.sigma < 0.0 {
            return Err("prepare latency median and sigma must be non-negative".into());
        }
        if self.ack_median.coefficient < 0.0 || self.ack_sigma.coefficient < 0.0 {
            return Err("ack latency median and sigma must be non-negative".into());
        }
        if self.ack_median.exponent < 0.0 {
            return Err("ack latency exponent must be non-negative".into());
        }
        if self.reference_cores <= 0.0 {
            return Err("reference core count must be positive".into());
        }
        Ok(())
    }

    pub fn ack_at(&self, pilot_cores: usize) -> LogNormalLatency {
        let x = pilot_cores as f64 / self.reference_cores;
        LogNormalLatency {
            median: self.ack_median.at(x),
            sigma: self.ack_sigma.at(x),
        }
    }

    pub fn sample_prepare<R: Rng + ?Sized>(&self, rng: &mut R) -> Seconds {
        self.prepare.sample(rng)
    }

    pub fn sample_ack<R: Rng + ?Sized>(&self, rng: &mut R, pilot_cores: usize) -> Seconds {
        self.ack_at(pilot_cores).sample(rng)
    }

    pub fn is_zero(&self) -> bool {
        self.prepare.median == 0.0 && self.ack_median.coefficient == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LaunchMethod {
    /// Direct invocation of the payload command.
    #[serde(rename = "fork")]
    ForkLocal,
    /// `/bin/sh` wrapper script per unit in the sandbox.
    #[serde(rename = "shell")]
    ShellWrapper,
    /// Modeled launch on the virtual clock.
    #[serde(rename = "virtual")]
    VirtualLaunch,
}

impl LaunchMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            LaunchMethod::ForkLocal => "fork",
            LaunchMethod::ShellWrapper => "shell",
            LaunchMethod::VirtualLaunch => "virtual",
        }
    }

    pub fn parse(s: &str) -> Option<LaunchMethod> {
        match s {
            "fork" => Some(LaunchMethod::ForkLocal),
            "shell" => Some(LaunchMethod::ShellWrapper),
            "virtual" => Some(LaunchMethod::VirtualLaunch),
            _ => None,
        }
    }

    pub fn supports(self, backend: Backend) -> bool {
        matches!(
            (self, backend),
            (LaunchMethod::ForkLocal | LaunchMethod::ShellWrapper, Backend::Real)
                | (LaunchMethod::VirtualLaunch, Backend::Virtual)
        )
    }
}

/// Everything needed to start one unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandSpec {
    pub argv: Vec<String>,
    pub env: BTreeMap<String, String>,
    /// Wrapper script to write before spawning: `(path, contents)`.
    pub script: Option<(PathBuf, String)>,
    pub stdout: Option<PathBuf>,
    pub stderr: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct LaunchContext {
    pub backend: Backend,
    pub sandbox: PathBuf,
    /// Executable providing the `emulate` subcommand.
    pub emulator: Option<PathBuf>,
    pub flops_per_second: Option<f64>,
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

fn payload_argv(unit: &ComputeUnit, ctx: &LaunchContext) -> Result<Vec<String>, ExecError> {
    let duration = format!("{:.6}", unit.duration);
    let emulate = |emu: &Path, kind: &str| {
        vec![
            emu.display().to_string(),
            "emulate".to_string(),
            "--kind".to_string(),
            kind.to_string(),
            "--duration".to_string(),
            duration.clone(),
        ]
    };
    Ok(match &unit.desc.payload.kind {
        PayloadKind::Sleep => match &ctx.emulator {
            Some(emu) => emulate(emu, "sleep"),
            None => vec!["sleep".to_string(), duration.clone()],
        },
        PayloadKind::FlopBurn { flops } => {
            let emu = ctx.emulator.as_ref().ok_or(ExecError::NoEmulator)?;
            let flops = match (flops, ctx.flops_per_second) {
                (Some(n), _) => *n,
                (None, Some(rate)) => (rate * unit.duration) as u64,
                (None, None) => return Err(ExecError::Uncalibrated),
            };
            let mut argv = emulate(emu, "flop-burn");
            argv.extend(["--flops".to_string(), flops.to_string()]);
            argv
        }
        PayloadKind::ExternalCommand { command } => command.clone(),
    })
}

/// Builds the launch command for an allocated unit. The result depends only
/// on its inputs; the slot list is exported as `PILOT_SLOTS`
/// (`node:core,...`) so the payload can check its placement.
pub fn build_launch_command(
    unit: &ComputeUnit,
    model: &ResourceModel,
    method: LaunchMethod,
    ctx: &LaunchContext,
) -> Result<CommandSpec, ExecError> {
    if !method.supports(ctx.backend) {
        return Err(ExecError::IncompatibleMethod {
            method,
            backend: ctx.backend,
        });
    }
    let alloc: &Allocation = unit.allocation.as_ref().ok_or_else(|| ExecError::NotAllocated {
        unit: unit.id().to_string(),
    })?;
    let id = unit.id().as_str();
    let slots = model.render_slots(&alloc.slots);
    let env = BTreeMap::from([
        (ENV_UNIT_ID.to_string(), id.to_string()),
        (ENV_SLOTS.to_string(), slots.clone()),
        (ENV_CORES.to_string(), alloc.slots.len().to_string()),
    ]);
    match method {
        LaunchMethod::VirtualLaunch => Ok(CommandSpec {
            argv: vec![
                "virtual-launch".to_string(),
                id.to_string(),
                format!("{:.6}", unit.duration),
            ],
            env,
            script: None,
            stdout: None,
            stderr: None,
        }),
        LaunchMethod::ForkLocal => Ok(CommandSpec {
            argv: payload_argv(unit, ctx)?,
            env,
            script: None,
            stdout: None,
            stderr: None,
        }),
        LaunchMethod::ShellWrapper => {
            let script_path = ctx.sandbox.join(format!("{id}.sh"));
            let payload = payload_argv(unit, ctx)?;
            let mut body = String::from("#!/bin/sh\n");
            for (k, v) in &env {
                body.push_str(&format!("export {k}={}\n", shell_quote(v)));
            }
            body.push_str("exec");
            for arg in &payload {
                body.push(' ');
                body.push_str(&shell_quote(arg));
            }
            body.push('\n');
            Ok(CommandSpec {
                argv: vec![
                    "/bin/sh".to_string(),
                    script_path.display().to_string(),
                    slots,
                ],
                env,
                script: Some((script_path, body)),
                stdout: Some(ctx.sandbox.join(format!("{id}.out"))),
                stderr: Some(ctx.sandbox.join(format!("{id}.err"))),
            })
        }
    }
}

/// Starts the command as a child process, writing its wrapper script first.
pub fn spawn(unit: &str, spec: &CommandSpec, cwd: &Path) -> Result<Child, ExecError> {
    let fail = |source| ExecError::SpawnFailure {
        unit: unit.to_string(),
        source,
    };
    if let Some((path, body)) = &spec.script {
        fs::write(path, body).map_err(fail)?;
    }
    let stdio = |p: &Option<PathBuf>| -> Result<Stdio, ExecError> {
        Ok(match p {
            Some(p) => Stdio::from(File::create(p).map_err(fail)?),
            None => Stdio::null(),
        })
    };
    Command::new(&spec.argv[0])
        .args(&spec.argv[1..])
        .envs(&spec.env)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(stdio(&spec.stdout)?)
        .stderr(stdio(&spec.stderr)?)
        .spawn()
        .map_err(fail)
}

/// Non-blocking completion check. `Some(code)` once the child has exited;
/// a child killed by a signal reports `128 + signal` like a shell does.
pub fn collect_completion(unit: &str, child: &mut Child) -> Result<Option<i32>, ExecError> {
    match child.try_wait() {
        Ok(Some(status)) => Ok(Some(exit_code(status))),
        Ok(None) => Ok(None),
        Err(source) => Err(ExecError::LostChild {
            unit: unit.to_string(),
            source,
        }),
    }
}

fn exit_code(status: std::process::ExitStatus) -> i32 {
    if let Some(code) = status.code() {
        return code;
    }
    #[cfg(unix)]
    {
        use std::os::unix::process::ExitStatusExt;
        if let Some(sig) = status.signal() {
            return 128 + sig;
        }
    }
    -1
}

/// Validated executor pool size.
pub fn executor_pool(n_executors: usize) -> Result<NonZeroUsize, ExecError> {
    NonZeroUsize::new(n_executors).ok_or(ExecError::NoExecutors)
}

/// Per-unit timestamps of one modeled launch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaunchTimes {
    pub exec_start: Seconds,
    pub payload_start: Seconds,
    pub payload_stop: Seconds,
    pub spawn_return: Seconds,
}

impl LaunchTimes {
    pub fn plan(exec_start: Seconds, prepare: Seconds, duration: Seconds, ack: Seconds) -> Self {
        let payload_start = exec_start + prepare;
        let payload_stop = payload_start + duration;
        LaunchTimes {
            exec_start,
            payload_start,
            payload_stop,
            spawn_return: payload_stop + ack,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emulator::TaskPayload;
    use crate::model::{Slot, UnitDescription, UnitId};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn allocated(cores: usize, payload: TaskPayload) -> (ComputeUnit, ResourceModel) {
        let model = ResourceModel::uniform(2, 4);
        let mut u = ComputeUnit::new(UnitDescription::new(UnitId::indexed(3), cores, payload), 2.5, 0.0);
        u.allocation = Some(Allocation {
            unit: u.id().clone(),
            slots: (0..cores).map(|c| Slot { node: c / 4, core: c % 4 }).collect(),
            block: None,
        });
        (u, model)
    }

    fn real_ctx() -> LaunchContext {
        LaunchContext {
            backend: Backend::Real,
            sandbox: PathBuf::from("/tmp/sbx"),
            emulator: None,
            flops_per_second: None,
        }
    }

    #[test]
    fn fork_local_single_core() {
        let (u, m) = allocated(1, TaskPayload::sleep(2.5, 0.0));
        let spec = build_launch_command(&u, &m, LaunchMethod::ForkLocal, &real_ctx()).unwrap();
        assert_eq!(spec.argv, vec!["sleep", "2.500000"]);
        assert_eq!(spec.env[ENV_SLOTS], "node0000:0");
        assert!(spec.script.is_none());
    }

    #[test]
    fn shell_wrapper_four_cores() {
        let (u, m) = allocated(4, TaskPayload::sleep(2.5, 0.0));
        let spec = build_launch_command(&u, &m, LaunchMethod::ShellWrapper, &real_ctx()).unwrap();
        assert_eq!(
            spec.argv,
            vec!["/bin/sh", "/tmp/sbx/unit.000003.sh", "node0000:0,node0000:1,node0000:2,node0000:3"]
        );
        let (path, body) = spec.script.as_ref().unwrap();
        assert_eq!(path, Path::new("/tmp/sbx/unit.000003.sh"));
        assert!(body.contains("export PILOT_SLOTS='node0000:0,node0000:1,node0000:2,node0000:3'\n"));
        assert!(body.ends_with("exec 'sleep' '2.500000'\n"));
        assert_eq!(spec.stdout.as_deref(), Some(Path::new("/tmp/sbx/unit.000003.out")));
    }

    #[test]
    fn command_is_deterministic() {
        let (u, m) = allocated(4, TaskPayload::external(vec!["echo".into(), "it's".into()], 1.0));
        let a = build_launch_command(&u, &m, LaunchMethod::ShellWrapper, &real_ctx()).unwrap();
        let b = build_launch_command(&u, &m, LaunchMethod::ShellWrapper, &real_ctx()).unwrap();
        assert_eq!(a, b);
        assert!(a.script.unwrap().1.contains(r"'it'\''s'"));
    }

    #[test]
    fn incompatible_method() {
        let (u, m) = allocated(1, TaskPayload::sleep(1.0, 0.0));
        assert!(matches!(
            build_launch_command(&u, &m, LaunchMethod::VirtualLaunch, &real_ctx()),
            Err(ExecError::IncompatibleMethod { .. })
        ));
        let mut ctx = real_ctx();
        ctx.backend = Backend::Virtual;
        assert!(matches!(
            build_launch_command(&u, &m, LaunchMethod::ForkLocal, &ctx),
            Err(ExecError::IncompatibleMethod { .. })
        ));
        assert!(build_launch_command(&u, &m, LaunchMethod::VirtualLaunch, &ctx).is_ok());
    }

    #[test]
    fn flop_burn_needs_emulator_and_rate() {
        let (u, m) = allocated(1, TaskPayload::flop_burn(2.0, 0.0));
        let mut ctx = real_ctx();
        assert!(matches!(
            build_launch_command(&u, &m, LaunchMethod::ForkLocal, &ctx),
            Err(ExecError::NoEmulator)
        ));
        ctx.emulator = Some(PathBuf::from("/bin/pilot"));
        ctx.flops_per_second = Some(1.0e9);
        let spec = build_launch_command(&u, &m, LaunchMethod::ForkLocal, &ctx).unwrap();
        assert_eq!(
            spec.argv,
            vec!["/bin/pilot", "emulate", "--kind", "flop-burn", "--duration", "2.500000", "--flops", "2500000000"]
        );
    }

    #[test]
    fn pool_size() {
        assert!(matches!(executor_pool(0), Err(ExecError::NoExecutors)));
        assert_eq!(executor_pool(4).unwrap().get(), 4);
    }

    #[test]
    fn zero_latencies_sample_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = LatencyModel::zero();
        assert_eq!(m.sample_prepare(&mut rng), 0.0);
        assert_eq!(m.sample_ack(&mut rng, 1 << 17), 0.0);
        let t = LaunchTimes::plan(10.0, 0.0, 3.0, 0.0);
        assert_eq!(t.spawn_return, t.payload_stop);
    }

    #[test]
    fn virtual_launch_times() {
        let t = LaunchTimes::plan(100.0, 37.0, 828.0, 29.0);
        assert_eq!(t.payload_start, 137.0);
        assert_eq!(t.payload_stop, 965.0);
        assert_eq!(t.spawn_return, 994.0);
    }

    #[test]
    fn moment_matching() {
        let l = LogNormalLatency::from_mean_std(37.0, 9.0);
        assert!((l.mean() - 37.0).abs() < 1e-9);
        // frozen from an independent numpy evaluation
        assert!((l.median - 35.951_701_316_992).abs() < 1e-9);
        assert!((l.sigma - 0.239_756_147_212).abs() < 1e-9);
    }

    #[test]
    fn titan_fit_matches_reference_regression() {
        // expected values from numpy.polyfit on the same log-space data
        let m = LatencyModel::titan();
        assert!((m.ack_median.coefficient - 20.548_702_467_444).abs() < 1e-9);
        assert!((m.ack_median.exponent - 0.700_272_350_758).abs() < 1e-9);
        assert!((m.ack_sigma.coefficient - 0.570_710_802_833).abs() < 1e-9);
        assert!((m.ack_sigma.exponent - 0.125_069_484_765).abs() < 1e-9);
        assert!(m.validate().is_ok());
    }

    #[test]
    fn titan_fit_tracks_reported_means() {
        let m = LatencyModel::titan();
        // fitted means at 1x and 8x the reference pilot
        let at1 = m.ack_at(16_384).mean();
        let at8 = m.ack_at(131_072).mean();
        assert!((at1 - 24.183).abs() < 1e-3, "{at1}");
        assert!((at8 - 115.925).abs() < 1e-3, "{at8}");
        // within 20% of every reported mean
        for o in TITAN_ACK {
            let fitted = m.ack_at(o.pilot_cores as usize).mean();
            assert!((fitted / o.mean - 1.0).abs() < 0.2, "{} vs {}", fitted, o.mean);
        }
    }

    #[test]
    fn power_law_fit_is_least_squares() {
        let m = LatencyModel::titan();
        let data: Vec<(f64, f64)> = TITAN_ACK
            .iter()
            .map(|o| (o.pilot_cores / 16_384.0, LogNormalLatency::from_mean_std(o.mean, o.std).median))
            .collect();
        let sse = |a: f64, b: f64| -> f64 {
            data.iter().map(|(x, y)| (y.ln() - a.ln() - b * x.ln()).powi(2)).sum()
        };
        let best = sse(m.ack_median.coefficient, m.ack_median.exponent);
        for (da, db) in [(1.01, 0.0), (0.99, 0.0), (1.0, 0.01), (1.0, -0.01)] {
            assert!(sse(m.ack_median.coefficient * da, m.ack_median.exponent + db) > best);
        }
    }

    #[test]
    fn empirical_ack_median_at_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut m = LatencyModel::zero();
        m.ack_median = PowerLaw { coefficient: 29.0, exponent: 0.7 };
        m.ack_sigma = PowerLaw::constant(0.5);
        m.reference_cores = 16_384.0;
        let mut xs: Vec<f64> = (0..20_001).map(|_| m.sample_ack(&mut rng, 16_384)).collect();
        xs.sort_by(f64::total_cmp);
        let median = xs[10_000];
        assert!((median - 29.0).abs() < 1.0, "{median}");
        assert!(xs.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn compression_scales_medians_only() {
        let m = LatencyModel::titan().compressed(100.0);
        assert!((m.prepare.median - 0.359_517_013_17).abs() < 1e-9);
        assert_eq!(m.ack_sigma, LatencyModel::titan().ack_sigma);
    }

    #[test]
    fn validation_rejects_negative_exponent() {
        let mut m = LatencyModel::zero();
        m.ack_median.exponent = -0.5;
        assert!(m.validate().is_err());
    }
}
