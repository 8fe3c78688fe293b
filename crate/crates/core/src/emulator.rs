//! Synthetic task payloads with controlled duration and jitter.

use std::hint::black_box;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Seconds;

#[derive(Debug, Error)]
pub enum EmulatorError {
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("flop_burn needs a calibrated rate or an explicit flop count")]
    Uncalibrated,
    #[error("failed to run {command:?}: {source}")]
    Command {
        command: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PayloadKind {
    Sleep,
    FlopBurn {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        flops: Option<u64>,
    },
    ExternalCommand { command: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPayload {
    #[serde(flatten)]
    pub kind: PayloadKind,
    pub target_duration: Seconds,
    pub jitter_sigma: Seconds,
}

impl TaskPayload {
    pub fn sleep(target: Seconds, jitter: Seconds) -> Self {
        TaskPayload {
            kind: PayloadKind::Sleep,
            target_duration: target,
            jitter_sigma: jitter,
        }
    }

    pub fn flop_burn(target: Seconds, jitter: Seconds) -> Self {
        TaskPayload {
            kind: PayloadKind::FlopBurn { flops: None },
            target_duration: target,
            jitter_sigma: jitter,
        }
    }

    /// `target` is the duration assumed by the virtual backend.
    pub fn external(command: Vec<String>, target: Seconds) -> Self {
        TaskPayload {
            kind: PayloadKind::ExternalCommand { command },
            target_duration: target,
            jitter_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), EmulatorError> {
        if !(self.target_duration.is_finite() && self.target_duration > 0.0) {
            return Err(EmulatorError::InvalidPayload(format!(
                "target duration must be positive, got {}",
                self.target_duration
            )));
        }
        if !(self.jitter_sigma.is_finite() && self.jitter_sigma >= 0.0) {
            return Err(EmulatorError::InvalidPayload(format!(
                "jitter sigma must be non-negative, got {}",
                self.jitter_sigma
            )));
        }
        if let PayloadKind::ExternalCommand { command } = &self.kind {
            if command.is_empty() {
                return Err(EmulatorError::InvalidPayload("empty command".into()));
            }
        }
        Ok(())
    }

    /// Same payload with every duration divided by `factor`.
    pub fn compressed(&self, factor: f64) -> Self {
        TaskPayload {
            kind: self.kind.clone(),
            target_duration: self.target_duration / factor,
            jitter_sigma: self.jitter_sigma / factor,
        }
    }
}

/// Draws a run time from `Normal(target, jitter)`, clamped at zero.
pub fn sample_duration<R: Rng + ?Sized>(payload: &TaskPayload, rng: &mut R) -> Seconds {
    if payload.jitter_sigma == 0.0 {
        return payload.target_duration;
    }
    let normal = Normal::new(payload.target_duration, payload.jitter_sigma)
        .expect("validated payload parameters");
    normal.sample(rng).max(0.0)
}

const FLOPS_PER_STEP: u64 = 2;

/// Runs roughly `flops` floating-point operations.
pub fn burn_flops(flops: u64) -> f64 {
    let mut x = black_box(1.0f64);
    let steps = flops / FLOPS_PER_STEP;
    let mut done = 0;
    while done < steps {
        let chunk = (steps - done).min(1 << 16);
        for _ in 0..chunk {
            x = x * 0.999_999_9 + 1.0e-7;
        }
        x = black_box(x);
        done += chunk;
    }
    x
}

/// Measures this host's rate for [`burn_flops`] over at least `probe`.
pub fn calibrate(probe: Duration) -> f64 {
    let mut flops = 1u64 << 20;
    loop {
        let start = Instant::now();
        black_box(burn_flops(flops));
        let elapsed = start.elapsed();
        if elapsed >= probe {
            return flops as f64 / elapsed.as_secs_f64();
        }
        flops *= 2;
    }
}

/// Executes a payload in the calling process and returns its exit code.
///
/// `flops_per_second` sizes a `flop_burn` payload without an explicit flop
/// count. Emulated payloads do no file I/O.
pub fn run_payload(
    payload: &TaskPayload,
    duration: Seconds,
    flops_per_second: Option<f64>,
) -> Result<i32, EmulatorError> {
    match &payload.kind {
        PayloadKind::Sleep => {
            std::thread::sleep(Duration::from_secs_f64(duration.max(0.0)));
            Ok(0)
        }
        PayloadKind::FlopBurn { flops } => {
            let flops = match (flops, flops_per_second) {
                (Some(n), _) => *n,
                (None, Some(rate)) => (rate * duration.max(0.0)) as u64,
                (None, None) => return Err(EmulatorError::Uncalibrated),
            };
            black_box(burn_flops(flops));
            Ok(0)
        }
        PayloadKind::ExternalCommand { command } => {
            let status = Command::new(&command[0])
                .args(&command[1..])
                .status()
                .map_err(|source| EmulatorError::Command {
                    command: command.join(" "),
                    source,
                })?;
            Ok(status.code().unwrap_or(1))
        }
    }
}
