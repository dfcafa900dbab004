//! Pipeline driver for counterfactual recommendation explanations:
//! configuration, on-disk artifacts and the subcommands of `counter`.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

pub use commands::{
    cmd_evaluate, cmd_explain, cmd_ingest, cmd_recommend, cmd_run, cmd_sweep, cmd_synth,
    cmd_train, ReportFile,
};
pub use config::RunConfig;
pub use error::CliError;
