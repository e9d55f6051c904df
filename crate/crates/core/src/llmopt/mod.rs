//! The LLM-side optimizer: candidate pool, top-k selection, instruction
//! rendering, reply parsing and the client contract with its built-in clients.

mod candidate;
mod client;
mod http;
mod instruction;
mod parse;

use thiserror::Error;

pub use candidate::{select_topk, Candidate, CandidatePool, Origin};
pub use client::{
    llm_complete, ClientContext, Completion, LlmClient, LlmError, LlmKind, LlmSettings,
    NeighborhoodClient, OracleClient, RetryPolicy, ScriptedClient,
};
pub use http::{ChatMessage, ChatRequest, HttpChatClient};
pub use instruction::{build_instruction, split_system, InstructionSpec, InstructionStyle};
pub use parse::{parse_response, word_count};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmOptError {
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("trajectory requested but no candidates were given")]
    MissingTrajectory,
    #[error("no usable templates in the LLM response")]
    NoTemplatesParsed,
    #[error("invalid instruction spec: {0}")]
    InvalidSpec(String),
}
