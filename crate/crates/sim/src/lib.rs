//! Scenario runner for the design attestation simulator: configuration
//! loading, end-to-end runs, report files, Monte-Carlo sweeps and trace
//! verification.

pub mod config;
pub mod exact;
pub mod report;
pub mod runner;
pub mod sweep;
pub mod trace;
pub mod verify;

pub use config::{load_config, parse_config, ConfigError, ScenarioConfig};
pub use report::write_outputs;
pub use runner::{run, RunError, RunReport};
pub use verify::{verify_lines, verify_trace, Verification};
