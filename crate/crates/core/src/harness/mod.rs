//! Configuration, model registry, batch commands and reports behind the CLI.

pub mod commands;
pub mod config;
pub mod registry;
pub mod report;
pub mod selftest;

pub use commands::{cmd_cones, cmd_degree, cmd_parametrize, cmd_solve_germ, run, CommandName};
pub use config::{Config, ConfigError, ModelSpec, SplicingChoice};
pub use report::{write_reports, Invariant, Provenance, Report, Value};
pub use selftest::{cmd_selftest, run_criteria};
