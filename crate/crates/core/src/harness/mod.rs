//! Experiment runner: builds a problem from a JSON config, runs one
//! optimizer on it and records convergence against samples read.

mod compare;
mod config;
mod problem;
mod record;
mod run;

use thiserror::Error;

use crate::active::SolverError;
use crate::precond::PrecondError;
use crate::problems::ProblemError;

pub use compare::{compare, compare_on, suboptimality, Comparison, RunSummary};
pub use config::{ExperimentConfig, Optimizer, ProblemKind, ProblemSpec, SolverSettings};
pub use problem::{BuiltProblem, ProblemInstance, TestMetrics};
pub use record::{write_records, RunRecord, CSV_HEADER};
pub use run::{
    build_preconditioner, run, run_baseline, run_on, run_precond_sgd, run_sgd, RunOutcome,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Precond(#[from] PrecondError),
    #[error("{0}")]
    Unsupported(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl HarnessError {
    /// Whether the error stems from the user's configuration rather than
    /// the numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            HarnessError::Config(_) | HarnessError::Unsupported(_) | HarnessError::Io(_)
        ) || matches!(
            self,
            HarnessError::Problem(
                ProblemError::InvalidParameter(_)
                    | ProblemError::InvalidData(_)
                    | ProblemError::Io(_)
                    | ProblemError::DimensionMismatch { .. }
            )
        )
    }
}
