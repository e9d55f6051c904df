//! Plain gradient descent on soft prompts with optional heavy-ball momentum.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objective::{Objective, ObjectiveError};
use crate::vocab::PromptEmbedding;

#[derive(Debug, Error)]
pub enum GdError {
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("gradient shape {got:?} does not match prompt shape {expected:?}")]
    ShapeMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },
    #[error("objective failed at iteration {iteration}: {source}")]
    Objective { iteration: usize, source: ObjectiveError },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GdConfig {
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    /// Overridden per phase by the orchestrator.
    #[serde(default)]
    pub iterations: usize,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self { lr: 0.1, momentum: 0.0, iterations: 10 }
    }
}

impl GdConfig {
    pub fn validate(&self) -> Result<(), GdError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(GdError::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(GdError::InvalidConfig(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Velocity buffer and step counter carried across [`step`] calls.
#[derive(Debug, Clone, Default)]
pub struct GdState {
    velocity: Option<Array2<f64>>,
    step_count: usize,
}

impl GdState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    /// Drops the velocity; the step counter keeps running.
    pub fn reset_velocity(&mut self) {
        self.velocity = None;
    }
}

/// `v <- momentum * v + grad; theta' = theta - lr * v`.
pub fn step(
    theta: &PromptEmbedding,
    grad: &Array2<f64>,
    config: &GdConfig,
    state: &mut GdState,
) -> Result<PromptEmbedding, GdError> {
    let shape = (theta.len(), theta.dim());
    if grad.dim() != shape {
        return Err(GdError::ShapeMismatch { expected: shape, got: grad.dim() });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(GdError::NonFiniteGradient { iteration: state.step_count });
    }
    let velocity = match state.velocity.take() {
        Some(v) if v.dim() == shape && config.momentum != 0.0 => v * config.momentum + grad,
        _ => grad.clone(),
    };
    let next = theta.rows() - &(&velocity * config.lr);
    state.velocity = Some(velocity);
    state.step_count += 1;
    PromptEmbedding::new(next)
        .map_err(|_| GdError::NonFiniteGradient { iteration: state.step_count - 1 })
}

/// Receives a copy of theta after every inner step.
pub trait Recorder {
    fn record(&mut self, iteration: usize, theta: &PromptEmbedding);
}

/// Collects `(iteration, theta)` snapshots in step order.
#[derive(Debug, Clone, Default)]
pub struct Snapshots(pub Vec<(usize, PromptEmbedding)>);

impl Recorder for Snapshots {
    fn record(&mut self, iteration: usize, theta: &PromptEmbedding) {
        self.0.push((iteration, theta.clone()));
    }
}

impl Recorder for Vec<PromptEmbedding> {
    fn record(&mut self, _iteration: usize, theta: &PromptEmbedding) {
        self.push(theta.clone());
    }
}

/// Runs exactly `config.iterations` steps from `theta0`, recording after each
/// update. Iterations are numbered from 1.
pub fn run_inner(
    theta0: &PromptEmbedding,
    objective: &dyn Objective,
    config: &GdConfig,
    state: &mut GdState,
    recorder: &mut dyn Recorder,
) -> Result<PromptEmbedding, GdError> {
    config.validate()?;
    let mut theta = theta0.clone();
    for iteration in 1..=config.iterations {
        let grad = objective
            .grad(&theta)
            .map_err(|source| GdError::Objective { iteration, source })?;
        theta = step(&theta, &grad, config, state).map_err(|e| match e {
            GdError::NonFiniteGradient { .. } => GdError::NonFiniteGradient { iteration },
            other => other,
        })?;
        recorder.record(iteration, &theta);
    }
    Ok(theta)
}
