use std::time::Instant;

use log::{debug, info, warn};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::{ClockMode, InitMode, RunConfig};
use super::trajectory::{EventKind, TrajectoryEvent, TrajectoryLog};
use super::RunError;
use crate::gdopt::{run_inner, GdConfig, GdState, Snapshots};
use crate::llmopt::{
    build_instruction, llm_complete, parse_response, select_topk, Candidate, CandidatePool,
    LlmClient, Origin,
};
use crate::objective::Objective;
use crate::vocab::{random_unit_rows, DiscretePrompt, PromptEmbedding, Vocabulary};

/// Per-round digest of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    /// Loss of theta at the start of the round.
    pub start_loss: f64,
    pub best_snapshot_text: String,
    pub best_snapshot_loss: f64,
    pub best_llm_text: Option<String>,
    pub best_llm_loss: Option<f64>,
    pub restart_text: Option<String>,
    pub restart_loss: Option<f64>,
    pub llm_failed: bool,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    /// Embedding of the lowest-loss evaluated prompt.
    pub best_theta: PromptEmbedding,
    pub best_text: String,
    pub best_loss: f64,
    pub best_accuracy: f64,
    pub best_origin: Origin,
    /// Soft prompt after the last gradient step.
    pub final_theta: PromptEmbedding,
    /// Projection of `final_theta` and its scores.
    pub final_text: String,
    pub final_loss: f64,
    pub final_accuracy: f64,
    /// Loss of `final_theta` itself, before projection.
    pub final_soft_loss: f64,
    pub grad_steps: usize,
    pub rounds: Vec<RoundSummary>,
    pub events: Vec<TrajectoryEvent>,
}

enum Restarter<'c> {
    Llm(&'c mut dyn LlmClient),
    Noise(ChaCha8Rng),
}

struct Best {
    theta: PromptEmbedding,
    text: String,
    loss: f64,
    accuracy: f64,
    origin: Origin,
}

struct Engine<'a> {
    config: &'a RunConfig,
    objective: &'a dyn Objective,
    vocab: &'a Vocabulary,
    log: TrajectoryLog,
    evaluations: usize,
    started: Instant,
    best: Option<Best>,
    gd: GdState,
}

struct Scored {
    embedding: PromptEmbedding,
    loss: f64,
    accuracy: f64,
}

impl<'a> Engine<'a> {
    fn new(config: &'a RunConfig, objective: &'a dyn Objective, vocab: &'a Vocabulary) -> Self {
        Self {
            config,
            objective,
            vocab,
            log: TrajectoryLog::new(),
            evaluations: 0,
            started: Instant::now(),
            best: None,
            gd: GdState::new(),
        }
    }

    fn clock(&self) -> f64 {
        match self.config.clock {
            ClockMode::Logical => self.evaluations as f64,
            ClockMode::Wall => self.started.elapsed().as_secs_f64(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn emit(
        &mut self,
        round: usize,
        iteration: usize,
        kind: EventKind,
        origin: Option<Origin>,
        prompt: &str,
        score: Option<(f64, f64)>,
        note: Option<String>,
    ) {
        let event = TrajectoryEvent {
            seq: 0,
            round,
            iteration,
            kind,
            origin,
            prompt: prompt.to_string(),
            loss: score.map(|s| s.0),
            accuracy: score.map(|s| s.1),
            wall_time: self.clock(),
            note,
        };
        self.log.append(event);
    }

    fn score(&mut self, prompt: &DiscretePrompt) -> Result<Scored, RunError> {
        let embedding = self.vocab.embed(prompt);
        let loss = self.objective.loss(&embedding)?;
        let accuracy = self.objective.accuracy(&embedding)?;
        self.evaluations += 1;
        Ok(Scored { embedding, loss, accuracy })
    }

    fn consider(&mut self, candidate: &Candidate, embedding: &PromptEmbedding) {
        let better = self.best.as_ref().map_or(true, |b| candidate.loss < b.loss);
        if better {
            self.best = Some(Best {
                theta: embedding.clone(),
                text: candidate.text.clone(),
                loss: candidate.loss,
                accuracy: candidate.accuracy,
                origin: candidate.origin,
            });
        }
    }

    fn init_theta(&self) -> Result<PromptEmbedding, RunError> {
        let (len, dim) = (self.config.prompt_length, self.vocab.dim());
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        match &self.config.init {
            InitMode::Random => Ok(PromptEmbedding::new(random_unit_rows(&mut rng, len, dim))?),
            InitMode::Manual { text } => {
                let tokens = self.vocab.tokenize(text)?;
                Ok(self.vocab.embed(&tokens.prompt))
            }
            InitMode::Adversarial { draws } => {
                let mut worst: Option<(f64, PromptEmbedding)> = None;
                for _ in 0..*draws {
                    let theta = PromptEmbedding::new(random_unit_rows(&mut rng, len, dim))?;
                    let loss = self.objective.loss(&theta)?;
                    if worst.as_ref().map_or(true, |w| loss > w.0) {
                        worst = Some((loss, theta));
                    }
                }
                Ok(worst.expect("draws >= 1").1)
            }
        }
    }

    /// Runs `iterations` gradient steps, evaluating the projection of every
    /// snapshot. Returns the final theta and the best snapshot candidate.
    fn gradient_phase(
        &mut self,
        theta: &PromptEmbedding,
        iterations: usize,
        round: usize,
        mut pool: Option<&mut CandidatePool>,
    ) -> Result<(PromptEmbedding, Option<Candidate>), RunError> {
        let gd = GdConfig { iterations, ..self.config.gd };
        let mut snapshots = Snapshots::default();
        let theta_m = run_inner(theta, self.objective, &gd, &mut self.gd, &mut snapshots)?;
        let mut best: Option<Candidate> = None;
        for (iteration, snap) in snapshots.0 {
            let discrete = self.vocab.project(&snap, self.config.metric)?;
            let s = self.score(&discrete)?;
            let candidate = Candidate {
                theta: Some(snap),
                text: discrete.text().to_string(),
                loss: s.loss,
                accuracy: s.accuracy,
                origin: Origin::Gradient,
                round,
                iteration,
            };
            self.emit(
                round,
                iteration,
                EventKind::Snapshot,
                Some(Origin::Gradient),
                &candidate.text,
                Some((s.loss, s.accuracy)),
                None,
            );
            self.consider(&candidate, &s.embedding);
            if best.as_ref().map_or(true, |b| candidate.loss < b.loss) {
                best = Some(candidate.clone());
            }
            if let Some(pool) = pool.as_deref_mut() {
                pool.add(candidate);
            }
        }
        Ok((theta_m, best))
    }

    fn fits(&self, prompt: &DiscretePrompt) -> bool {
        self.objective.prompt_len().map_or(true, |l| l == prompt.len())
    }

    /// Tokenizes and scores `text` as a candidate, or explains why it was skipped.
    fn score_text(
        &mut self,
        text: &str,
        display: Option<&str>,
        origin: Origin,
        round: usize,
        iteration: usize,
    ) -> Result<Result<Candidate, String>, RunError> {
        let tokens = match self.vocab.tokenize(text) {
            Ok(t) => t,
            Err(e) => return Ok(Err(format!("{text:?}: {e}"))),
        };
        let mut ids = tokens.prompt.token_ids().to_vec();
        ids.truncate(self.config.instruction.max_words.max(1));
        let prompt = self.vocab.prompt_from_ids(&ids)?;
        if !self.fits(&prompt) {
            return Ok(Err(format!("{text:?}: length {} does not fit the objective", prompt.len())));
        }
        let s = self.score(&prompt)?;
        let candidate = Candidate {
            theta: Some(s.embedding.clone()),
            text: display.unwrap_or(prompt.text()).to_string(),
            loss: s.loss,
            accuracy: s.accuracy,
            origin,
            round,
            iteration,
        };
        let note = (!tokens.dropped.is_empty()).then(|| {
            format!("dropped unknown words: {}", tokens.dropped.join(" "))
        });
        self.emit(
            round,
            iteration,
            EventKind::Candidate,
            Some(origin),
            &candidate.text,
            Some((s.loss, s.accuracy)),
            note,
        );
        self.consider(&candidate, &s.embedding);
        Ok(Ok(candidate))
    }

    /// Restart point for `candidate`: the embedding of its tokenized text.
    fn restart_theta(&self, candidate: &Candidate) -> Result<PromptEmbedding, RunError> {
        let tokens = self.vocab.tokenize(&candidate.text)?;
        let mut ids = tokens.prompt.token_ids().to_vec();
        ids.truncate(self.config.instruction.max_words.max(1));
        Ok(self.vocab.embed(&self.vocab.prompt_from_ids(&ids)?))
    }

    fn run(mut self, mut restarter: Option<Restarter<'_>>) -> Result<RunResult, RunError> {
        let cfg = self.config;
        cfg.validate()?;
        if self.objective.dim() != self.vocab.dim() {
            return Err(RunError::Config(format!(
                "objective dimension {} does not match vocabulary dimension {}",
                self.objective.dim(),
                self.vocab.dim()
            )));
        }
        let mut theta = self.init_theta()?;
        let mut pool = CandidatePool::new();
        let mut summaries = Vec::with_capacity(cfg.rounds);
        let rounds = if restarter.is_some() { cfg.rounds } else { 0 };

        for round in 1..=rounds {
            pool.clear();
            self.emit(round, 0, EventKind::PoolReset, None, "", None, None);
            let start_loss = self.objective.loss(&theta)?;
            let (theta_m, best_snap) =
                self.gradient_phase(&theta, cfg.inner_iterations, round, Some(&mut pool))?;
            let best_snap = best_snap.expect("inner_iterations >= 1");
            let mut summary = RoundSummary {
                round,
                start_loss,
                best_snapshot_text: best_snap.text.clone(),
                best_snapshot_loss: best_snap.loss,
                best_llm_text: None,
                best_llm_loss: None,
                restart_text: None,
                restart_loss: None,
                llm_failed: false,
            };

            theta = match restarter.as_mut().expect("rounds > 0 only with a restarter") {
                Restarter::Noise(rng) => {
                    let noise: Array2<f64> = Array2::from_shape_simple_fn(theta_m.rows().raw_dim(), || {
                        StandardNormal.sample(rng)
                    });
                    let perturbed = PromptEmbedding::new(theta_m.rows() + &(noise * cfg.noise_sigma))?;
                    let text = self
                        .vocab
                        .project(&perturbed, cfg.metric)
                        .map(|p| p.text().to_string())
                        .unwrap_or_default();
                    self.emit(round, 0, EventKind::Restart, Some(Origin::Noise), &text, None, None);
                    perturbed
                }
                Restarter::Llm(client) => {
                    match self.llm_round(*client, &mut pool, round, &mut summary)? {
                        Some(next) => next,
                        None => theta_m,
                    }
                }
            };
            summaries.push(summary);
        }

        let final_round = rounds + 1;
        let (theta_final, _) =
            self.gradient_phase(&theta, cfg.final_iterations, final_round, None)?;

        let final_prompt = self.vocab.project(&theta_final, cfg.metric)?;
        let final_embedded = self.vocab.embed(&final_prompt);
        let final_loss = self.objective.loss(&final_embedded)?;
        let final_accuracy = self.objective.accuracy(&final_embedded)?;
        let final_soft_loss = self.objective.loss(&theta_final)?;
        let best = self.best.take().unwrap_or(Best {
            theta: final_embedded,
            text: final_prompt.text().to_string(),
            loss: final_loss,
            accuracy: final_accuracy,
            origin: Origin::Gradient,
        });
        info!(
            "run done: best {:.4} ({:?}), final {:.4}, {} gradient steps",
            best.loss,
            best.text,
            final_loss,
            self.gd.step_count()
        );
        Ok(RunResult {
            best_theta: best.theta,
            best_text: best.text,
            best_loss: best.loss,
            best_accuracy: best.accuracy,
            best_origin: best.origin,
            final_theta: theta_final,
            final_text: final_prompt.text().to_string(),
            final_loss,
            final_accuracy,
            final_soft_loss,
            grad_steps: self.gd.step_count(),
            rounds: summaries,
            events: self.log.into_events(),
        })
    }

    /// Manual prompt, instruction, query, parse, evaluate, restart. Returns
    /// `None` when the round continues gradient-only.
    fn llm_round(
        &mut self,
        client: &mut dyn LlmClient,
        pool: &mut CandidatePool,
        round: usize,
        summary: &mut RoundSummary,
    ) -> Result<Option<PromptEmbedding>, RunError> {
        let cfg = self.config;
        let spec = &cfg.instruction;
        let manual = match (&spec.manual_prompt, spec.include_manual_prompt) {
            (Some(text), true) => match self.score_text(text, Some(text), Origin::Manual, round, 0)? {
                Ok(c) => {
                    pool.add(c.clone());
                    Some(c)
                }
                Err(why) => {
                    warn!("manual prompt skipped: {why}");
                    None
                }
            },
            _ => None,
        };
        let top = select_topk(pool, cfg.topk)?;
        let instruction = build_instruction(&top, manual.as_ref(), spec)?;
        debug!("round {round} instruction:\n{instruction}");

        let mut llm_best: Option<Candidate> = None;
        let mut skipped = Vec::new();
        match llm_complete(client, &instruction, &cfg.llm.retry_policy()) {
            Ok(completion) => {
                self.emit(
                    round,
                    0,
                    EventKind::LlmQuery,
                    Some(Origin::Llm),
                    "",
                    None,
                    Some(format!("attempts={}", completion.attempts)),
                );
                match parse_response(&completion.text, spec.n_generate, spec.max_words) {
                    Ok(templates) => {
                        for (j, template) in templates.iter().enumerate() {
                            match self.score_text(template, None, Origin::Llm, round, j + 1)? {
                                Ok(c) => {
                                    if llm_best.as_ref().map_or(true, |b| c.loss < b.loss) {
                                        llm_best = Some(c.clone());
                                    }
                                    pool.add(c);
                                }
                                Err(why) => skipped.push(why),
                            }
                        }
                    }
                    Err(e) => skipped.push(e.to_string()),
                }
            }
            Err(e) => {
                if cfg.abort_on_llm_failure {
                    return Err(RunError::Llm(e));
                }
                warn!("round {round}: {e}; continuing gradient-only");
                self.emit(
                    round,
                    0,
                    EventKind::LlmFailure,
                    Some(Origin::Llm),
                    "",
                    None,
                    Some(e.to_string()),
                );
                summary.llm_failed = true;
                return Ok(None);
            }
        }

        summary.best_llm_text = llm_best.as_ref().map(|c| c.text.clone());
        summary.best_llm_loss = llm_best.as_ref().map(|c| c.loss);
        let fallback = llm_best.is_none();
        let chosen = match llm_best {
            Some(c) => c,
            None => pool.best().cloned().ok_or(crate::llmopt::LlmOptError::EmptyPool)?,
        };
        let theta = self.restart_theta(&chosen)?;
        let mut note = Vec::new();
        if fallback {
            note.push("fallback to pool minimum".to_string());
        }
        if !skipped.is_empty() {
            note.push(format!("skipped: {}", skipped.join("; ")));
        }
        self.emit(
            round,
            0,
            EventKind::Restart,
            Some(chosen.origin),
            &chosen.text,
            Some((chosen.loss, chosen.accuracy)),
            (!note.is_empty()).then(|| note.join(" | ")),
        );
        self.gd.reset_velocity();
        summary.restart_text = Some(chosen.text.clone());
        summary.restart_loss = Some(chosen.loss);
        Ok(Some(theta))
    }
}

/// The combined optimizer: `N` rounds of `m` gradient steps followed by an LLM
/// restart, then `M` final gradient steps.
pub fn run(
    config: &RunConfig,
    objective: &dyn Objective,
    vocab: &Vocabulary,
    client: &mut dyn LlmClient,
) -> Result<RunResult, RunError> {
    Engine::new(config, objective, vocab).run(Some(Restarter::Llm(client)))
}

/// Uninterrupted gradient descent with the combined arm's budget `N * m + M`.
pub fn run_gradient_only(
    config: &RunConfig,
    objective: &dyn Objective,
    vocab: &Vocabulary,
) -> Result<RunResult, RunError> {
    let matched = RunConfig { final_iterations: config.gradient_budget(), ..config.clone() };
    Engine::new(&matched, objective, vocab).run(None)
}

/// Same loop shape as [`run`], but each restart adds seeded gaussian noise of
/// scale `noise_sigma` to theta instead of querying an LLM.
pub fn run_noise_restart(
    config: &RunConfig,
    objective: &dyn Objective,
    vocab: &Vocabulary,
) -> Result<RunResult, RunError> {
    let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0153_a11c_e0de_cafe);
    Engine::new(config, objective, vocab).run(Some(Restarter::Noise(rng)))
}
