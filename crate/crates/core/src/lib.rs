//! Planning and validation for networked LLM quorums.
//!
//! A task processor admits one binary query at a time, fans it out to `m`
//! agents of the matching cluster and returns the MAP aggregate of their
//! answers. This crate provides:
//!
//! * [`ensemble`]: closed-form accuracy, response and system times, and the
//!   accuracy/timeliness objective;
//! * [`optimizer`]: exhaustive and multi-start relaxed search over `m`;
//! * [`simulator`]: a discrete-event Monte Carlo of the whole system;
//! * [`analysis`]: ensemble curves and bounds from recorded responses.

pub mod analysis;
pub mod ensemble;
pub mod error;
pub mod optimizer;
pub mod simulator;
pub mod stats;
pub mod system;

pub use error::{ModelError, Result};
pub use system::{ConfigFile, SystemSpec, UserClusterSpec};

/// Version string embedded in every JSON report.
pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
