//! Algorithm driver: alternates gradient phases with LLM restarts and logs
//! every evaluation.

mod ablation;
mod config;
mod run;
mod trajectory;

use thiserror::Error;

pub use ablation::{
    run_ablation, AblationAxes, AblationCell, AblationError, AblationReport, AblationResult,
    ContextFlags,
};
pub use config::{ClockMode, InitMode, RunConfig};
pub use run::{run, run_gradient_only, run_noise_restart, RoundSummary, RunResult};
pub use trajectory::{
    read_events, write_events, EventKind, TrajectoryError, TrajectoryEvent, TrajectoryLog,
};

use crate::gdopt::GdError;
use crate::llmopt::{LlmError, LlmOptError};
use crate::objective::ObjectiveError;
use crate::vocab::VocabError;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Gd(#[from] GdError),
    #[error("llm query failed: {0}")]
    Llm(#[from] LlmError),
    #[error(transparent)]
    LlmOpt(#[from] LlmOptError),
}
