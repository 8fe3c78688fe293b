//! Pilot-job runtime: late-binding execution of many-task workloads on a
//! placeholder allocation, with a real-process and a virtual-clock backend.

pub mod analytics;
pub mod config;
pub mod emulator;
pub mod executor;
pub mod harness;
pub mod model;
pub mod profiler;
pub mod runtime;
pub mod scheduler;

/// Durations and timestamps, in seconds.
pub type Seconds = f64;
