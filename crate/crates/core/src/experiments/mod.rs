//! Reproducible experiment drivers: TOML configs in, CSV tables and a JSON
//! manifest with named verdicts out.

pub mod config;
pub mod drivers;
pub mod report;

pub use config::{load_config, load_config_with, parse_config, parse_override, ExperimentConfig, Kind};
pub use drivers::run_experiment;
pub use report::{write_report, ExperimentReport, Table, Verdict};
