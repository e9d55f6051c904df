//! Grid sweeps over instruction flags, round counts, inner iterations,
//! projection metric and prompt length.

use std::fmt;
use std::io::Write;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::RunConfig;
use super::run::{run, run_noise_restart, RunResult};
use super::RunError;
use crate::llmopt::LlmClient;
use crate::objective::Objective;
use crate::vocab::{Metric, Vocabulary};

/// Which blocks the instruction carries. All three off selects the
/// noise-restart arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextFlags {
    pub td: bool,
    pub mp: bool,
    pub ot: bool,
}

impl ContextFlags {
    /// The four instruction designs compared in the flag sweep.
    pub const TABLE: [ContextFlags; 4] = [
        ContextFlags { td: false, mp: false, ot: false },
        ContextFlags { td: true, mp: true, ot: false },
        ContextFlags { td: true, mp: false, ot: true },
        ContextFlags { td: true, mp: true, ot: true },
    ];

    pub fn is_bare(&self) -> bool {
        !(self.td || self.mp || self.ot)
    }
}

impl fmt::Display for ContextFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = |v: bool| if v { 'T' } else { 'F' };
        write!(f, "{}{}{}", b(self.td), b(self.mp), b(self.ot))
    }
}

/// Values to sweep. An empty axis keeps the base config's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationAxes {
    #[serde(default)]
    pub flags: Vec<ContextFlags>,
    #[serde(default)]
    pub rounds: Vec<usize>,
    #[serde(default)]
    pub inner_iterations: Vec<usize>,
    #[serde(default)]
    pub metric: Vec<Metric>,
    #[serde(default)]
    pub prompt_length: Vec<usize>,
    /// Run seeds per cell; empty means the base seed only.
    #[serde(default)]
    pub seeds: Vec<u64>,
}

impl AblationAxes {
    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
            && self.rounds.is_empty()
            && self.inner_iterations.is_empty()
            && self.metric.is_empty()
            && self.prompt_length.is_empty()
    }

    /// Cartesian product in axis order flags, rounds, inner, metric, length,
    /// with the last axis varying fastest.
    pub fn cells(&self, base: &RunConfig) -> Vec<AblationCell> {
        let base_flags = ContextFlags {
            td: base.instruction.include_task_description,
            mp: base.instruction.include_manual_prompt,
            ot: base.instruction.include_trajectory,
        };
        fn or<T: Clone>(axis: &[T], fallback: T) -> Vec<T> {
            if axis.is_empty() {
                vec![fallback]
            } else {
                axis.to_vec()
            }
        }
        let mut out = Vec::new();
        for flags in or(&self.flags, base_flags) {
            for rounds in or(&self.rounds, base.rounds) {
                for inner in or(&self.inner_iterations, base.inner_iterations) {
                    for metric in or(&self.metric, base.metric) {
                        for len in or(&self.prompt_length, base.prompt_length) {
                            out.push(AblationCell {
                                index: out.len(),
                                flags,
                                rounds,
                                inner_iterations: inner,
                                metric,
                                prompt_length: len,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationCell {
    pub index: usize,
    pub flags: ContextFlags,
    pub rounds: usize,
    pub inner_iterations: usize,
    pub metric: Metric,
    pub prompt_length: usize,
}

impl AblationCell {
    pub fn arm(&self) -> &'static str {
        if self.flags.is_bare() {
            "noise"
        } else {
            "combined"
        }
    }

    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        cfg.instruction.include_task_description = self.flags.td;
        cfg.instruction.include_manual_prompt = self.flags.mp;
        cfg.instruction.include_trajectory = self.flags.ot;
        cfg.rounds = self.rounds;
        cfg.inner_iterations = self.inner_iterations;
        cfg.metric = self.metric;
        cfg.prompt_length = self.prompt_length;
        cfg
    }
}

impl fmt::Display for AblationCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "cell {} [flags={} N={} m={} metric={} L={}]",
            self.index, self.flags, self.rounds, self.inner_iterations, self.metric, self.prompt_length
        )
    }
}

#[derive(Debug, Error)]
pub enum AblationError {
    #[error("ablation grid has no axes")]
    EmptyGrid,
    #[error("{cell}, seed {seed}: {source}")]
    Cell { cell: AblationCell, seed: u64, source: RunError },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Aggregated outcome of one cell.
#[derive(Debug)]
pub struct AblationResult {
    pub cell: AblationCell,
    /// Successful runs keyed by seed.
    pub runs: Vec<(u64, RunResult)>,
    pub failures: Vec<AblationError>,
}

fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

impl AblationResult {
    /// Mean and sample standard deviation of the best loss over seeds.
    pub fn loss(&self) -> (f64, f64) {
        mean_std(self.runs.iter().map(|(_, r)| r.best_loss))
    }

    pub fn accuracy(&self) -> (f64, f64) {
        mean_std(self.runs.iter().map(|(_, r)| r.best_accuracy))
    }
}

#[derive(Debug, Serialize)]
struct Row<'a> {
    cell: usize,
    arm: &'a str,
    td: bool,
    mp: bool,
    ot: bool,
    rounds: usize,
    inner_iterations: usize,
    metric: String,
    prompt_length: usize,
    runs: usize,
    failed: usize,
    mean_loss: f64,
    std_loss: f64,
    mean_accuracy: f64,
    std_accuracy: f64,
    error: String,
}

#[derive(Debug)]
pub struct AblationReport {
    pub cells: Vec<AblationResult>,
}

impl AblationReport {
    pub fn failures(&self) -> impl Iterator<Item = &AblationError> {
        self.cells.iter().flat_map(|c| c.failures.iter())
    }

    /// One CSV row per cell, in cell order.
    pub fn write_csv(&self, sink: impl Write) -> Result<(), AblationError> {
        let mut w = csv::Writer::from_writer(sink);
        for c in &self.cells {
            let (mean_loss, std_loss) = c.loss();
            let (mean_accuracy, std_accuracy) = c.accuracy();
            w.serialize(Row {
                cell: c.cell.index,
                arm: c.cell.arm(),
                td: c.cell.flags.td,
                mp: c.cell.flags.mp,
                ot: c.cell.flags.ot,
                rounds: c.cell.rounds,
                inner_iterations: c.cell.inner_iterations,
                metric: c.cell.metric.to_string(),
                prompt_length: c.cell.prompt_length,
                runs: c.runs.len(),
                failed: c.failures.len(),
                mean_loss,
                std_loss,
                mean_accuracy,
                std_accuracy,
                error: c.failures.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "),
            })?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Runs every cell over every seed. `client` builds a fresh LLM client for
/// each combined run. A failing run is recorded on its cell and the sweep
/// continues.
pub fn run_ablation<F>(
    axes: &AblationAxes,
    base: &RunConfig,
    objective: &dyn Objective,
    vocab: &Vocabulary,
    mut client: F,
) -> Result<AblationReport, AblationError>
where
    F: FnMut(&RunConfig) -> Result<Box<dyn LlmClient>, RunError>,
{
    if axes.is_empty() {
        return Err(AblationError::EmptyGrid);
    }
    let seeds = if axes.seeds.is_empty() { vec![base.seed] } else { axes.seeds.clone() };
    let cells = axes.cells(base);
    let mut out = Vec::with_capacity(cells.len());
    for cell in cells {
        info!("ablation {cell}");
        let mut result = AblationResult { cell, runs: Vec::new(), failures: Vec::new() };
        for &seed in &seeds {
            let cfg = RunConfig { seed, ..cell.apply(base) };
            let outcome = if cell.flags.is_bare() {
                run_noise_restart(&cfg, objective, vocab)
            } else {
                client(&cfg).and_then(|mut c| run(&cfg, objective, vocab, &mut *c))
            };
            match outcome {
                Ok(r) => result.runs.push((seed, r)),
                Err(source) => {
                    let e = AblationError::Cell { cell, seed, source };
                    warn!("{e}");
                    result.failures.push(e);
                }
            }
        }
        out.push(result);
    }
    Ok(AblationReport { cells: out })
}
