use serde::{Deserialize, Serialize};

use super::RunError;
use crate::gdopt::GdConfig;
use crate::llmopt::{InstructionSpec, LlmSettings};
use crate::vocab::Metric;

/// How the first soft prompt is chosen.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitMode {
    /// Random unit-norm rows, the same distribution as synthetic vocabularies.
    #[default]
    Random,
    /// Embedding of a tokenized hand-written prompt.
    Manual { text: String },
    /// The highest-loss of `draws` random inits.
    Adversarial { draws: usize },
}

/// Source of the `wall_time` field in trajectory events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    /// Objective evaluations so far; keeps trajectories reproducible.
    #[default]
    Logical,
    /// Seconds since the run started.
    Wall,
}

fn default_rounds() -> usize {
    3
}

fn default_inner() -> usize {
    10
}

fn default_final() -> usize {
    200
}

fn default_topk() -> usize {
    10
}

fn default_prompt_length() -> usize {
    4
}

fn default_noise_sigma() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Alternating rounds `N`.
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    /// Gradient steps per round `m`.
    #[serde(default = "default_inner")]
    pub inner_iterations: usize,
    /// Gradient steps after the last restart `M`.
    #[serde(default = "default_final")]
    pub final_iterations: usize,
    #[serde(default = "default_topk")]
    pub topk: usize,
    #[serde(default)]
    pub gd: GdConfig,
    #[serde(default = "default_prompt_length")]
    pub prompt_length: usize,
    #[serde(default)]
    pub init: InitMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default)]
    pub instruction: InstructionSpec,
    #[serde(default)]
    pub llm: LlmSettings,
    /// Perturbation scale of the noise-restart baseline.
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub clock: ClockMode,
    /// Fail the run when an LLM query exhausts its retries instead of
    /// continuing gradient-only for that round.
    #[serde(default)]
    pub abort_on_llm_failure: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            rounds: default_rounds(),
            inner_iterations: default_inner(),
            final_iterations: default_final(),
            topk: default_topk(),
            gd: GdConfig::default(),
            prompt_length: default_prompt_length(),
            init: InitMode::default(),
            seed: 0,
            metric: Metric::default(),
            instruction: InstructionSpec::default(),
            llm: LlmSettings::default(),
            noise_sigma: default_noise_sigma(),
            clock: ClockMode::default(),
            abort_on_llm_failure: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: &str| Err(RunError::Config(m.to_string()));
        if self.inner_iterations == 0 {
            return bad("inner_iterations must be at least 1");
        }
        if self.prompt_length == 0 {
            return bad("prompt_length must be at least 1");
        }
        if self.topk == 0 {
            return bad("topk must be at least 1");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative");
        }
        if let InitMode::Adversarial { draws: 0 } = self.init {
            return bad("adversarial init needs at least one draw");
        }
        if let InitMode::Manual { text } = &self.init {
            if text.trim().is_empty() {
                return bad("manual init text is empty");
            }
        }
        self.gd.validate().map_err(|e| RunError::Config(e.to_string()))?;
        self.instruction.validate().map_err(|e| RunError::Config(e.to_string()))?;
        self.llm.validate().map_err(|e| RunError::Config(e.to_string()))?;
        Ok(())
    }

    /// Gradient steps a combined run performs: `N * m + M`.
    pub fn gradient_budget(&self) -> usize {
        self.rounds * self.inner_iterations + self.final_iterations
    }
}
