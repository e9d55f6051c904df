use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Duration;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::http::HttpChatClient;
use super::instruction::InstructionStyle;
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("LLM transport error: {0}")]
    Transport(String),
    #[error("LLM request timed out after {0:?}")]
    Timeout(Duration),
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error("LLM client configuration: {0}")]
    Config(String),
}

impl LlmError {
    fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Transport(_) | LlmError::Timeout(_))
    }
}

/// Anything that turns an instruction into a completion.
pub trait LlmClient {
    fn complete(&mut self, instruction: &str) -> Result<String, LlmError>;
}

impl<C: LlmClient + ?Sized> LlmClient for Box<C> {
    fn complete(&mut self, instruction: &str) -> Result<String, LlmError> {
        (**self).complete(instruction)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay: Duration::from_secs(1), max_delay: Duration::from_secs(30) }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): `base * 2^(retry-1)`, capped.
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry.saturating_sub(1));
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
}

/// Calls `client` with exponential backoff on transport failures and timeouts.
pub fn llm_complete(
    client: &mut dyn LlmClient,
    instruction: &str,
    policy: &RetryPolicy,
) -> Result<Completion, LlmError> {
    if instruction.trim().is_empty() {
        return Err(LlmError::EmptyInstruction);
    }
    let mut attempts = 0;
    loop {
        attempts += 1;
        match client.complete(instruction) {
            Ok(text) => {
                debug!("LLM completion after {attempts} attempt(s)");
                return Ok(Completion { text, attempts });
            }
            Err(e) if e.is_retryable() && attempts <= policy.max_retries => {
                let delay = policy.delay(attempts);
                warn!("LLM attempt {attempts} failed: {e}; retrying in {delay:?}");
                std::thread::sleep(delay);
            }
            Err(e) => {
                warn!("LLM attempt {attempts} failed: {e}; giving up");
                return Err(e);
            }
        }
    }
}

/// Replays queued replies in order.
#[derive(Debug, Clone, Default)]
pub struct ScriptedClient {
    queue: VecDeque<Result<String, LlmError>>,
    script: Vec<Result<String, LlmError>>,
    cycle: bool,
    calls: usize,
    instructions: Vec<String>,
}

impl ScriptedClient {
    pub fn new(replies: impl IntoIterator<Item = Result<String, LlmError>>) -> Self {
        let script: Vec<_> = replies.into_iter().collect();
        Self { queue: script.iter().cloned().collect(), script, ..Default::default() }
    }

    pub fn from_texts<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self::new(replies.into_iter().map(|s| Ok(s.into())))
    }

    /// Fails `failures` times with a transport error, then returns `reply`.
    pub fn failing_then(failures: usize, reply: &str) -> Self {
        let fails = (0..failures).map(|i| Err(LlmError::Transport(format!("scripted failure {i}"))));
        Self::new(fails.chain(std::iter::once(Ok(reply.to_string()))))
    }

    /// Restart from the top of the script once it is exhausted.
    pub fn cycling(mut self) -> Self {
        self.cycle = true;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls
    }

    /// Every instruction received, in order.
    pub fn instructions(&self) -> &[String] {
        &self.instructions
    }
}

impl LlmClient for ScriptedClient {
    fn complete(&mut self, instruction: &str) -> Result<String, LlmError> {
        self.calls += 1;
        self.instructions.push(instruction.to_string());
        if self.queue.is_empty() && self.cycle {
            self.queue = self.script.iter().cloned().collect();
        }
        self.queue
            .pop_front()
            .unwrap_or_else(|| Err(LlmError::Transport("scripted client exhausted".into())))
    }
}

/// Always answers with a fixed template, e.g. a task's known optimum.
#[derive(Debug, Clone)]
pub struct OracleClient {
    template: String,
}

impl OracleClient {
    pub fn new(template: impl Into<String>) -> Self {
        Self { template: template.into() }
    }
}

impl LlmClient for OracleClient {
    fn complete(&mut self, _instruction: &str) -> Result<String, LlmError> {
        Ok(self.template.clone())
    }
}

/// Offline stand-in for semantic exploration: perturbs the best template in
/// the instruction by swapping one or two words for embedding-space neighbors.
#[derive(Debug, Clone)]
pub struct NeighborhoodClient {
    vocab: Arc<Vocabulary>,
    rng: ChaCha8Rng,
    neighbors: usize,
    fallback_len: usize,
}

impl NeighborhoodClient {
    pub fn new(vocab: Arc<Vocabulary>, seed: u64) -> Self {
        Self { vocab, rng: ChaCha8Rng::seed_from_u64(seed), neighbors: 5, fallback_len: 4 }
    }

    /// Size of the neighbor list each replacement is drawn from.
    pub fn with_neighbors(mut self, neighbors: usize) -> Self {
        self.neighbors = neighbors.max(1);
        self
    }

    fn random_ids(&mut self, len: usize) -> Vec<usize> {
        let pool: Vec<usize> = self.vocab.projectable_ids().collect();
        (0..len).map(|_| pool[self.rng.random_range(0..pool.len())]).collect()
    }

    fn variant(&mut self, base: &[usize]) -> Vec<usize> {
        let mut ids = base.to_vec();
        let swaps = if ids.len() > 1 && self.rng.random_bool(0.5) { 2 } else { 1 };
        let mut positions: Vec<usize> = (0..ids.len()).collect();
        for _ in 0..swaps {
            let pick = self.rng.random_range(0..positions.len());
            let pos = positions.swap_remove(pick);
            let near = self.vocab.neighbors(ids[pos], self.neighbors);
            if !near.is_empty() {
                ids[pos] = near[self.rng.random_range(0..near.len())];
            }
        }
        ids
    }
}

/// Number following `key` in the instruction, e.g. "Generate 3".
fn number_after(instruction: &str, key: &str) -> Option<usize> {
    let rest = &instruction[instruction.find(key)? + key.len()..];
    rest.split_whitespace().next()?.parse().ok()
}

impl LlmClient for NeighborhoodClient {
    fn complete(&mut self, instruction: &str) -> Result<String, LlmError> {
        let n = number_after(instruction, "Generate ").unwrap_or(3).max(1);
        let max_words = number_after(instruction, "template under ").unwrap_or(10).max(1);
        // blocks are listed worst-first, so the last one is the best
        let best = instruction.lines().filter_map(|l| l.strip_prefix("Templates: ")).last();
        let base = match best.map(|t| self.vocab.tokenize(t)) {
            Some(Ok(t)) => t.prompt.token_ids().to_vec(),
            _ => self.random_ids(self.fallback_len),
        };
        let base: Vec<usize> = base.into_iter().take(max_words).collect();
        let mut lines: Vec<String> = Vec::with_capacity(n);
        for _ in 0..n * 4 {
            if lines.len() == n {
                break;
            }
            let ids = self.variant(&base);
            let text = ids
                .iter()
                .map(|&i| self.vocab.token(i).unwrap_or_default())
                .collect::<Vec<_>>()
                .join(" ");
            if !lines.contains(&text) {
                lines.push(text);
            }
        }
        Ok(lines
            .iter()
            .enumerate()
            .map(|(i, l)| format!("{}. {l}", i + 1))
            .collect::<Vec<_>>()
            .join("\n"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmKind {
    Http,
    Scripted,
    Oracle,
    #[default]
    Neighborhood,
}

impl std::str::FromStr for LlmKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" => Ok(LlmKind::Http),
            "scripted" => Ok(LlmKind::Scripted),
            "oracle" => Ok(LlmKind::Oracle),
            "neighborhood" => Ok(LlmKind::Neighborhood),
            other => Err(format!(
                "unknown llm {other:?} (expected http, scripted, oracle or neighborhood)"
            )),
        }
    }
}

fn default_model() -> String {
    "gpt-3.5-turbo".into()
}

fn default_temperature() -> f64 {
    0.7
}

fn default_timeout() -> f64 {
    60.0
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    1000
}

/// Client selection and transport settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSettings {
    #[serde(default)]
    pub kind: LlmKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    /// Replies for the scripted client, replayed cyclically.
    #[serde(default)]
    pub scripted_responses: Vec<String>,
    /// Neighbor list size for the neighborhood client.
    #[serde(default)]
    pub neighbors: Option<usize>,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            kind: LlmKind::default(),
            endpoint: None,
            model: default_model(),
            temperature: default_temperature(),
            timeout_secs: default_timeout(),
            api_key_env: default_key_env(),
            max_retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            scripted_responses: Vec::new(),
            neighbors: None,
        }
    }
}

/// What the mock clients may need from the task.
#[derive(Debug, Clone, Copy)]
pub struct ClientContext<'a> {
    pub vocab: &'a Arc<Vocabulary>,
    /// Known optimum, required by the oracle client.
    pub planted_text: Option<&'a str>,
    pub seed: u64,
    pub style: InstructionStyle,
}

impl LlmSettings {
    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            base_delay: Duration::from_millis(self.backoff_ms),
            max_delay: Duration::from_millis(self.backoff_ms.saturating_mul(32)),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(LlmError::Config("timeout_secs must be positive".into()));
        }
        match self.kind {
            LlmKind::Http if self.endpoint.as_deref().map_or(true, str::is_empty) => {
                Err(LlmError::Config("http client needs an endpoint".into()))
            }
            LlmKind::Scripted if self.scripted_responses.is_empty() => {
                Err(LlmError::Config("scripted client needs scripted_responses".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self, ctx: ClientContext<'_>) -> Result<Box<dyn LlmClient>, LlmError> {
        self.validate()?;
        Ok(match self.kind {
            LlmKind::Http => {
                let api_key = std::env::var(&self.api_key_env).ok().filter(|k| !k.is_empty());
                Box::new(HttpChatClient::new(
                    self.endpoint.clone().unwrap_or_default(),
                    self.model.clone(),
                    self.temperature,
                    Duration::from_secs_f64(self.timeout_secs),
                    api_key,
                    ctx.style,
                ))
            }
            LlmKind::Scripted => {
                Box::new(ScriptedClient::from_texts(self.scripted_responses.clone()).cycling())
            }
            LlmKind::Oracle => {
                let text = ctx.planted_text.ok_or_else(|| {
                    LlmError::Config("oracle client needs a task with a known optimum".into())
                })?;
                Box::new(OracleClient::new(text))
            }
            LlmKind::Neighborhood => {
                let mut c = NeighborhoodClient::new(ctx.vocab.clone(), ctx.seed);
                if let Some(n) = self.neighbors {
                    c = c.with_neighbors(n);
                }
                Box::new(c)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instant() -> RetryPolicy {
        RetryPolicy { max_retries: 3, base_delay: Duration::ZERO, max_delay: Duration::ZERO }
    }

    #[test]
    fn scripted_reply_verbatim() {
        let mut c = ScriptedClient::from_texts(["1. a photo\n2. a view"]);
        let out = llm_complete(&mut c, "hi", &instant()).unwrap();
        assert_eq!(out.text, "1. a photo\n2. a view");
        assert_eq!(out.attempts, 1);
    }

    #[test]
    fn retries_then_succeeds() {
        let mut c = ScriptedClient::failing_then(2, "ok");
        let out = llm_complete(&mut c, "hi", &instant()).unwrap();
        assert_eq!(out.text, "ok");
        assert_eq!(out.attempts, 3);
        assert_eq!(c.calls(), 3);
    }

    #[test]
    fn exhausts_retries() {
        let mut c = ScriptedClient::failing_then(4, "never");
        let err = llm_complete(&mut c, "hi", &instant()).unwrap_err();
        assert!(matches!(err, LlmError::Transport(_)));
        assert_eq!(c.calls(), 4);
    }

    #[test]
    fn timeout_is_retried_and_surfaced() {
        let t = || Err(LlmError::Timeout(Duration::from_secs(1)));
        let mut c = ScriptedClient::new([t(), t(), t(), t()]);
        assert!(matches!(llm_complete(&mut c, "hi", &instant()), Err(LlmError::Timeout(_))));
        assert_eq!(c.calls(), 4);
    }

    #[test]
    fn empty_instruction_rejected() {
        let mut c = ScriptedClient::from_texts(["x"]);
        assert_eq!(llm_complete(&mut c, "  ", &instant()), Err(LlmError::EmptyInstruction));
        assert_eq!(c.calls(), 0);
    }

    #[test]
    fn backoff_is_exponential_and_capped() {
        let p = RetryPolicy {
            max_retries: 5,
            base_delay: Duration::from_secs(1),
            max_delay: Duration::from_secs(5),
        };
        let d: Vec<u64> = (1..=5).map(|r| p.delay(r).as_secs()).collect();
        assert_eq!(d, vec![1, 2, 4, 5, 5]);
    }

    #[test]
    fn cycling_script() {
        let mut c = ScriptedClient::from_texts(["a", "b"]).cycling();
        let got: Vec<String> = (0..5).map(|_| c.complete("x").unwrap()).collect();
        assert_eq!(got, vec!["a", "b", "a", "b", "a"]);
    }

    #[test]
    fn neighborhood_is_seeded_and_local() {
        let vocab = Arc::new(Vocabulary::random(4, 120, 8).unwrap());
        let instr = "Templates: photo of the view\nLoss: 1.00\nAccuracy: 10.0\n\n\
                     - Keep every template under 10 words\n- Generate 3 templates that";
        let mut a = NeighborhoodClient::new(vocab.clone(), 9);
        let mut b = NeighborhoodClient::new(vocab.clone(), 9);
        let ra = a.complete(instr).unwrap();
        assert_eq!(ra, b.complete(instr).unwrap());
        let parsed = super::super::parse_response(&ra, 3, 10).unwrap();
        assert_eq!(parsed.len(), 3);
        let base = vocab.tokenize("photo of the view").unwrap().prompt;
        for t in parsed {
            let ids = vocab.tokenize(&t).unwrap().prompt;
            let changed = ids
                .token_ids()
                .iter()
                .zip(base.token_ids())
                .filter(|(x, y)| x != y)
                .count();
            assert!((1..=2).contains(&changed), "{t}");
        }
    }

    #[test]
    fn settings_validation() {
        let s = LlmSettings { kind: LlmKind::Http, ..Default::default() };
        assert!(s.validate().is_err());
        let s = LlmSettings { kind: LlmKind::Scripted, ..Default::default() };
        assert!(s.validate().is_err());
        assert!(LlmSettings::default().validate().is_ok());
    }
}
