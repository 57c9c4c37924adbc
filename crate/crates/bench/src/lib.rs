//! Experiment runner: run configs, training and comparison runs, parameter
//! sweeps, CSV/JSON outputs and SVG heatmaps.

pub mod commands;
pub mod config;
pub mod heatmap;
pub mod output;

use xwan_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    /// 2 for a divergence abort, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Core(Error::Aborted { .. } | Error::Divergence { .. }) => 2,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }
}
