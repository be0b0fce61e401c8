//! Experiment driver around the flow engine: JSON configs, canned presets
//! for the four convergence regimes, and deterministic CSV/JSON outputs.

pub mod config;
pub mod output;
pub mod presets;
pub mod run;

pub use config::{parse_config, ConfigError, RunConfig};
pub use run::{execute, run_command, sweep_command, verify_command, ExperimentOutcome};
