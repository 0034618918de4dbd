//! Config parsing, experiment dispatch and artifact writing for the
//! `polymerlab` binary.

pub mod artifacts;
pub mod config;
pub mod run;
pub mod svg;

pub use config::{parse_config, parse_config_as, Command, ConfigError, ConfigErrors, ExperimentConfig};
pub use run::{run, Outcome};
