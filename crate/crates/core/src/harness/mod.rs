//! Experiment configuration, execution and reporting.

pub mod agent;
pub mod config;
pub mod metrics;
pub mod output;
pub mod runner;
pub mod stats;
pub mod verify;

use thiserror::Error;

use crate::learn::LearnError;
use crate::mdp::MdpError;
use crate::model::ModelError;
use crate::nn::NnError;

pub use agent::{expand_cells, run_cell, Cell, RunRecord};
pub use config::{Algorithm, ExperimentConfig, Exploration, LearnerSpec, Metric, Selection};
pub use output::{read_tables, write_results, ResultsTable, Summary};
pub use runner::{run_experiment, sweep, worker_count, WORKERS_ENV};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error("statistics: {0}")]
    Stats(String),
    #[error("run: {0}")]
    Run(String),
}

macro_rules! run_error_from {
    ($($t:ty),*) => {$(
        impl From<$t> for HarnessError {
            fn from(e: $t) -> Self {
                HarnessError::Run(e.to_string())
            }
        }
    )*};
}

run_error_from!(MdpError, LearnError, ModelError, NnError);

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}
