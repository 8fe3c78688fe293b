use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use pilot_core::analytics::{compute_ttx, compute_utilization, write_report, ReportKind, Trace};
use pilot_core::config::load_session;
use pilot_core::emulator::burn_flops;
use pilot_core::harness::{run_matrix_with, validate_config, ExperimentMatrix};
use pilot_core::model::{Backend, UnitState};
use pilot_core::runtime::{run_session, SessionOptions};

#[derive(Parser)]
#[command(name = "pilot", version, about = "Run pilot sessions, scaling matrices and trace analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Real,
    Virtual,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Backend {
        match b {
            BackendArg::Real => Backend::Real,
            BackendArg::Virtual => Backend::Virtual,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmulateKind {
    Sleep,
    FlopBurn,
}

#[derive(Subcommand)]
enum Command {
    /// Run one session described by a config file.
    Run {
        config: PathBuf,
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        profile: Option<Toggle>,
        /// Parent directory for the session directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run every configuration and repetition of a scaling matrix.
    Matrix {
        config: PathBuf,
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
        /// Base seed; sessions use consecutive seeds from here.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check a matrix file and print it with defaults filled in.
    Validate { config: PathBuf },
    /// Write reports for a unified trace.
    Analyze {
        trace: PathBuf,
        /// Comma-separated: ttx, ru, concurrency, events, throughput, all.
        #[arg(long, default_value = "all")]
        report: String,
        #[arg(long, default_value = "analysis")]
        out: PathBuf,
    },
    /// Payload body started by the real backend.
    #[command(hide = true)]
    Emulate {
        #[arg(long, value_enum)]
        kind: EmulateKind,
        #[arg(long)]
        duration: f64,
        #[arg(long)]
        flops: Option<u64>,
    },
}

fn emulator_options(options: &mut SessionOptions) {
    if options.emulator.is_none() {
        options.emulator = std::env::current_exe().ok();
    }
}

fn run(
    config: &Path,
    backend: Option<BackendArg>,
    seed: Option<u64>,
    profile: Option<Toggle>,
    output: Option<PathBuf>,
) -> Result<bool> {
    let mut cfg = load_session(config).with_context(|| format!("loading {}", config.display()))?;
    if let Some(b) = backend {
        cfg.pilot.backend = b.into();
    }
    if let Some(s) = seed {
        cfg.options.seed = s;
    }
    if let Some(p) = profile {
        cfg.options.profile = matches!(p, Toggle::On);
    }
    if let Some(o) = output {
        cfg.output = o;
    }
    emulator_options(&mut cfg.options);
    let out = run_session(&cfg.session())?;
    println!("session     {}", out.session);
    println!("directory   {}", out.dir.display());
    println!("status      {}", out.status.as_str());
    println!("generations {}", out.generations);
    for state in [UnitState::Done, UnitState::Failed, UnitState::Canceled] {
        println!("{:<11} {}", state.as_str().to_lowercase(), out.count(state));
    }
    println!("wall        {:.3}s", out.wall.as_secs_f64());
    if let Some(trace) = &out.trace {
        let t = Trace::load(trace)?;
        let ttx = compute_ttx(&t)?;
        let ru = compute_utilization(&t)?;
        println!("trace       {}", trace.display());
        println!("ttx         {:.3}s (ideal {:.3}s, overhead {:.1}%)", ttx.ttx, ttx.ideal, ttx.overhead_pct());
        println!(
            "utilization workload {:.1}% overhead {:.1}% idle {:.1}%",
            ru.workload_pct(),
            ru.overhead_pct(),
            ru.idle_pct()
        );
    }
    Ok(out.all_done())
}

fn matrix(config: &Path, backend: Option<BackendArg>, seed: Option<u64>, output: Option<PathBuf>) -> Result<bool> {
    let mut m: ExperimentMatrix = validate_config(config).with_context(|| format!("loading {}", config.display()))?;
    if let Some(b) = backend {
        m.backend = b.into();
    }
    if let Some(s) = seed {
        m.seed = s;
    }
    if let Some(o) = output {
        m.output = o;
    }
    emulator_options(&mut m.agent);
    print!("{}", m.echo());
    println!();
    let report = run_matrix_with(&m, |r| match &r.result {
        Ok(x) => println!(
            "{:<28} gen {:>3}  ttx {:>10.3}s  overhead {:>6.1}%  {}",
            r.session,
            x.generations,
            x.ttx,
            x.overhead_pct,
            x.status.as_str()
        ),
        Err(e) => eprintln!("{:<28} failed: {e}", r.session),
    })?;
    println!("sessions    {}", report.sessions_csv.display());
    println!("summary     {}", report.summary_csv.display());
    Ok(report.all_clean())
}

fn analyze(trace: &Path, report: &str, out: &Path) -> Result<()> {
    let kinds: Vec<ReportKind> = if report == "all" {
        ReportKind::ALL.to_vec()
    } else {
        report
            .split(',')
            .map(|s| ReportKind::parse(s.trim()).with_context(|| format!("unknown report {s:?}")))
            .collect::<Result<_>>()?
    };
    let t = Trace::load(trace).with_context(|| format!("loading {}", trace.display()))?;
    for kind in kinds {
        for path in write_report(&t, kind, out)? {
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn emulate(kind: EmulateKind, duration: f64, flops: Option<u64>) -> Result<i32> {
    if duration.is_nan() || duration < 0.0 {
        bail!("duration must be non-negative");
    }
    match (kind, flops) {
        (EmulateKind::FlopBurn, Some(n)) => {
            std::hint::black_box(burn_flops(n));
            Ok(0)
        }
        (EmulateKind::FlopBurn, None) => bail!("flop-burn needs --flops"),
        (EmulateKind::Sleep, _) => {
            std::thread::sleep(std::time::Duration::from_secs_f64(duration));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            backend,
            seed,
            profile,
            output,
        } => run(&config, backend, seed, profile, output).map(|ok| if ok { 0 } else { 1 }),
        Command::Matrix {
            config,
            backend,
            seed,
            output,
        } => matrix(&config, backend, seed, output).map(|ok| if ok { 0 } else { 1 }),
        Command::Validate { config } => validate_config(&config)
            .map(|m| {
                print!("{}", m.echo());
                0
            })
            .map_err(Into::into),
        Command::Analyze { trace, report, out } => analyze(&trace, &report, &out).map(|_| 0),
        Command::Emulate { kind, duration, flops } => emulate(kind, duration, flops),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
