//! Configuration, seeded Monte Carlo drivers and report emission.

pub mod config;
pub mod output;
pub mod run;

pub use config::{load_config, load_config_with, parse_config, ConfigError, ExperimentConfig, LoadOptions, MethodKind, ThresholdMode};
pub use run::{calibrate, learn, run_far_sweep, run_roc, simulate, validate_convergence, ExperimentError};
