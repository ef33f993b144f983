//! Deterministic simulator for communication-efficient federated learning
//! with adaptive per-device quantization levels and lazy (skipped) uploads.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod fl_core;
pub mod numerics;
pub mod policy;
pub mod problems;
pub mod quantizer;
pub mod telemetry;
pub mod theory_monitor;

pub use config::RunConfig;
pub use error::{AquilaError, Result};
pub use experiment::{Experiment, RunOutcome};
pub use numerics::Vector;
