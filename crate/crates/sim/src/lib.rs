//! Closed-loop simulation of the fail-safe quadcopter: a deterministic
//! multi-rate scheduler, scenario files, CSV logs and the stability-limit
//! sweeps built on top of it.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod controller;
pub mod error;
pub mod log;
pub mod runner;
pub mod scenario;
pub mod sweep;

pub use error::{SimError, SimResult};
pub use log::SimLog;
pub use runner::{run, SimOutcome};
pub use scenario::ScenarioSpec;
