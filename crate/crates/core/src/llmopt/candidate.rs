use std::fmt;

use serde::{Deserialize, Serialize};

use super::LlmOptError;
use crate::vocab::PromptEmbedding;

/// Where a candidate prompt came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Gradient,
    Llm,
    Manual,
    Noise,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Gradient => "gradient",
            Origin::Llm => "llm",
            Origin::Manual => "manual",
            Origin::Noise => "noise",
        })
    }
}

/// One scored prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Soft prompt the text was projected from (or embedded into).
    pub theta: Option<PromptEmbedding>,
    pub text: String,
    pub loss: f64,
    pub accuracy: f64,
    pub origin: Origin,
    pub round: usize,
    pub iteration: usize,
}

/// Candidates of the current round, deduplicated by text.
#[derive(Debug, Clone, Default)]
pub struct CandidatePool {
    entries: Vec<Candidate>,
}

impl CandidatePool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `candidate`; an existing entry with the same text is replaced
    /// only if the new loss is strictly lower.
    pub fn add(&mut self, candidate: Candidate) {
        match self.entries.iter_mut().find(|c| c.text == candidate.text) {
            Some(existing) if candidate.loss < existing.loss => *existing = candidate,
            Some(_) => {}
            None => self.entries.push(candidate),
        }
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Candidate] {
        &self.entries
    }

    /// Lowest-loss entry, earliest on ties.
    pub fn best(&self) -> Option<&Candidate> {
        self.entries.iter().min_by(|a, b| rank(a, b))
    }
}

fn rank(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    a.loss
        .total_cmp(&b.loss)
        .then(a.round.cmp(&b.round))
        .then(a.iteration.cmp(&b.iteration))
}

/// The `k` lowest-loss candidates ordered worst-first, so the best is last.
pub fn select_topk(pool: &CandidatePool, k: usize) -> Result<Vec<Candidate>, LlmOptError> {
    if pool.is_empty() {
        return Err(LlmOptError::EmptyPool);
    }
    let mut ranked: Vec<&Candidate> = pool.entries().iter().collect();
    ranked.sort_by(|a, b| rank(a, b));
    ranked.truncate(k);
    Ok(ranked.into_iter().rev().cloned().collect())
}
