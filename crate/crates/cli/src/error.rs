use std::io;

use prompt_catalyst::llmopt::{LlmError, LlmOptError};
use prompt_catalyst::objective::ObjectiveError;
use prompt_catalyst::orchestrator::{AblationError, RunError, TrajectoryError};
use prompt_catalyst::vocab::VocabError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("objective error: {0}")]
    Objective(String),
    #[error("{0}")]
    Llm(String),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error("{path}: {source}")]
    Trajectory { path: String, source: TrajectoryError },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Objective(_) => 3,
            CliError::Llm(_) => 4,
            CliError::Io { .. } | CliError::Trajectory { .. } => 1,
        }
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}

impl From<VocabError> for CliError {
    fn from(e: VocabError) -> Self {
        match e {
            VocabError::Io(source) => CliError::Io { context: "vocabulary".into(), source },
            VocabError::EmptyPrompt | VocabError::AllTokensUnknown(_) => CliError::Config(e.to_string()),
            VocabError::ZeroVectorUnderCosine(_) => CliError::Objective(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<ObjectiveError> for CliError {
    fn from(e: ObjectiveError) -> Self {
        match e {
            ObjectiveError::InvalidSpec(_) | ObjectiveError::InvalidDataset(_) | ObjectiveError::Format { .. } => {
                CliError::Config(e.to_string())
            }
            ObjectiveError::Io(source) => CliError::Io { context: "dataset".into(), source },
            other => CliError::Objective(other.to_string()),
        }
    }
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Llm(other.to_string()),
        }
    }
}

impl From<&RunError> for CliError {
    fn from(e: &RunError) -> Self {
        match e {
            RunError::Config(m) => CliError::Config(m.clone()),
            RunError::Vocab(VocabError::EmptyPrompt | VocabError::AllTokensUnknown(_)) => {
                CliError::Config(e.to_string())
            }
            RunError::Llm(LlmError::Config(_)) | RunError::LlmOpt(LlmOptError::InvalidSpec(_)) => {
                CliError::Config(e.to_string())
            }
            RunError::Llm(_) => CliError::Llm(e.to_string()),
            RunError::Vocab(_) | RunError::Objective(_) | RunError::Gd(_) | RunError::LlmOpt(_) => {
                CliError::Objective(e.to_string())
            }
        }
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        CliError::from(&e)
    }
}

impl From<AblationError> for CliError {
    fn from(e: AblationError) -> Self {
        match e {
            AblationError::EmptyGrid => CliError::Config(e.to_string()),
            AblationError::Cell { source, .. } => source.into(),
            AblationError::Csv(c) => CliError::Io { context: "ablation table".into(), source: c.into() },
        }
    }
}
