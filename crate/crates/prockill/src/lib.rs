//! Run-time malicious process detection and automated killing.
//!
//! The pipeline: sample per-process machine activity at 1 Hz
//! ([`telemetry`]), train a windowed GRU classifier with a kill-aware loss
//! ([`model`]), calibrate its decision threshold against online killing
//! ([`decision`]), distill it into a snapshot-only random forest for fast
//! inference ([`forest`]), and evaluate everything in a deterministic
//! process-tree simulator with time-weighted damage metrics ([`sim`],
//! [`metrics`]). A live monitor mode scores real host processes and kills
//! flagged process trees, dry-run by default ([`cli`]).
//!
//! Each major capability has a runnable example under `examples/`; the
//! `prockill` binary wires the same library calls into subcommands.

pub mod cli;
pub mod decision;
pub mod error;
pub mod forest;
pub mod metrics;
pub mod model;
pub mod sim;
pub mod telemetry;

pub use error::{Error, Result};
