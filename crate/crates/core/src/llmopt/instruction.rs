use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Candidate, LlmOptError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstructionStyle {
    /// Single user message with role framing first and requirements last.
    #[default]
    Gpt,
    /// System sentence on the first line, then a user block with the
    /// requirements ahead of the trajectory.
    Llama,
}

fn default_task_description() -> String {
    "image classification with CLIP model".into()
}

fn default_task_name() -> String {
    "image classification".into()
}

fn yes() -> bool {
    true
}

fn default_n_generate() -> usize {
    3
}

fn default_max_words() -> usize {
    10
}

/// What goes into a query to the LLM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionSpec {
    #[serde(default)]
    pub style: InstructionStyle,
    /// Completes "They are used for ...".
    #[serde(default = "default_task_description")]
    pub task_description: String,
    /// Completes "better ... performance".
    #[serde(default = "default_task_name")]
    pub task_name: String,
    #[serde(default)]
    pub manual_prompt: Option<String>,
    /// TD: role and task framing.
    #[serde(default = "yes")]
    pub include_task_description: bool,
    /// MP: the manual prompt as a scored block.
    #[serde(default)]
    pub include_manual_prompt: bool,
    /// OT: scored candidates from the gradient trajectory.
    #[serde(default = "yes")]
    pub include_trajectory: bool,
    #[serde(default = "default_n_generate")]
    pub n_generate: usize,
    #[serde(default = "default_max_words")]
    pub max_words: usize,
}

impl Default for InstructionSpec {
    fn default() -> Self {
        Self {
            style: InstructionStyle::Gpt,
            task_description: default_task_description(),
            task_name: default_task_name(),
            manual_prompt: None,
            include_task_description: true,
            include_manual_prompt: false,
            include_trajectory: true,
            n_generate: default_n_generate(),
            max_words: default_max_words(),
        }
    }
}

impl InstructionSpec {
    pub fn validate(&self) -> Result<(), LlmOptError> {
        if self.n_generate == 0 {
            return Err(LlmOptError::InvalidSpec("n_generate must be at least 1".into()));
        }
        if self.max_words == 0 {
            return Err(LlmOptError::InvalidSpec("max_words must be at least 1".into()));
        }
        if self.include_manual_prompt
            && self.manual_prompt.as_deref().map_or(true, |p| p.trim().is_empty())
        {
            return Err(LlmOptError::InvalidSpec(
                "include_manual_prompt is set but manual_prompt is empty".into(),
            ));
        }
        Ok(())
    }

    /// True when none of TD, MP and OT is enabled.
    pub fn is_bare(&self) -> bool {
        !(self.include_task_description || self.include_manual_prompt || self.include_trajectory)
    }
}

const GPT_ROLE: &str = "Hi GPT, assume you are a prompt pattern learner.";
const LLAMA_SYSTEM: &str =
    "You are a helpful, respectful and honest assistant capable of proposing new prompts for users.";
const LATENT_PATTERNS: &str = "There are latent patterns that make the template good.\n\
Based on these patterns, write your new template that is different from the old ones and has a loss as low as possible.";

fn task_framing(spec: &InstructionSpec) -> String {
    format!(
        "I have a list of text templates with their corresponding loss values and accuracy. \
They are used for {}. The templates are arranged in descending order based on their loss value \
on training samples, where lower loss indicates better quality.",
        spec.task_description
    )
}

/// Candidate blocks in display order, with the manual prompt merged in at
/// its loss rank.
fn blocks<'a>(
    candidates: &'a [Candidate],
    manual: Option<&'a Candidate>,
    spec: &InstructionSpec,
) -> Vec<&'a Candidate> {
    let mut out: Vec<&Candidate> =
        if spec.include_trajectory { candidates.iter().collect() } else { Vec::new() };
    if spec.include_manual_prompt {
        if let Some(m) = manual {
            if !out.iter().any(|c| c.text == m.text) {
                let at = out.iter().position(|c| c.loss < m.loss).unwrap_or(out.len());
                out.insert(at, m);
            }
        }
    }
    out
}

fn write_blocks(out: &mut String, blocks: &[&Candidate]) {
    for c in blocks {
        let _ = write!(
            out,
            "Templates: {}\nLoss: {:.2}\nAccuracy: {:.1}\n\n",
            c.text, c.loss, c.accuracy
        );
    }
}

/// Renders the query text. `candidates` must already be in
/// [`select_topk`](super::select_topk) order.
pub fn build_instruction(
    candidates: &[Candidate],
    manual: Option<&Candidate>,
    spec: &InstructionSpec,
) -> Result<String, LlmOptError> {
    if spec.include_trajectory && candidates.is_empty() {
        return Err(LlmOptError::MissingTrajectory);
    }
    let blocks = blocks(candidates, manual, spec);
    let mut out = String::new();
    match spec.style {
        InstructionStyle::Gpt => {
            if spec.include_task_description {
                let _ = write!(out, "{GPT_ROLE}\n{}\n\n", task_framing(spec));
            }
            write_blocks(&mut out, &blocks);
            if spec.include_task_description {
                let _ = write!(out, "{LATENT_PATTERNS}\n\n");
            }
            let _ = write!(
                out,
                "Here are some requirements\n\
- Please reply with only the template\n\
- Keep every template under {} words\n\
- Generate {} templates that potentially have better {} performance\n",
                spec.max_words, spec.n_generate, spec.task_name
            );
        }
        InstructionStyle::Llama => {
            let _ = write!(
                out,
                "{LLAMA_SYSTEM}\n\nPropose new prompts for user. Reply with only the proposed short \
template, do not reply the loss and accuracy. Keep every template under {} words. Generate {} \
templates that potentially have better {} performance.",
                spec.max_words, spec.n_generate, spec.task_name
            );
            if spec.include_task_description {
                let _ = write!(out, " {}", task_framing(spec));
            }
            out.push_str("\n\n");
            write_blocks(&mut out, &blocks);
            while out.ends_with("\n\n") {
                out.pop();
            }
        }
    }
    Ok(out)
}

/// Splits a llama-style instruction into its system and user parts.
pub fn split_system(instruction: &str) -> (&str, &str) {
    match instruction.split_once("\n\n") {
        Some((system, user)) => (system, user),
        None => ("", instruction),
    }
}
