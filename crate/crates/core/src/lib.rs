//! Prompt tuning that alternates plain gradient descent on soft prompt
//! embeddings with an LLM that proposes discrete restart prompts.
//!
//! The pieces, bottom-up:
//!
//! * [`vocab`]: token table, embedding and nearest-token projection.
//! * [`objective`]: the loss contract plus a planted synthetic task and a
//!   quadratic oracle.
//! * [`gdopt`]: the inner gradient loop.
//! * [`llmopt`]: candidate pool, instruction rendering, reply parsing, clients.
//! * [`orchestrator`]: the alternating loop, baselines, logging and ablations.

pub mod gdopt;
pub mod llmopt;
pub mod objective;
pub mod orchestrator;
pub mod vocab;
