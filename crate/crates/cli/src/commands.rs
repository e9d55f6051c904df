use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use log::info;
use prompt_catalyst::llmopt::{ClientContext, LlmClient, Origin};
use prompt_catalyst::orchestrator::{
    run, run_ablation, run_gradient_only, run_noise_restart, write_events, AblationError,
    RoundSummary, RunConfig, RunError, RunResult,
};
use serde::Serialize;

use crate::config::CliConfig;
use crate::error::CliError;
use crate::task::{load_task, LoadedTask};

pub const TRAJECTORY_FILE: &str = "trajectory.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CURVE_FILE: &str = "curve.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BaselineKind {
    GradientOnly,
    NoiseRestart,
}

impl BaselineKind {
    fn name(self) -> &'static str {
        match self {
            BaselineKind::GradientOnly => "gradient_only",
            BaselineKind::NoiseRestart => "noise_restart",
        }
    }
}

#[derive(Serialize)]
struct Scored<'a> {
    text: &'a str,
    loss: f64,
    accuracy: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    arm: &'a str,
    config: &'a CliConfig,
    seed: u64,
    planted_text: Option<&'a str>,
    planted_loss: Option<f64>,
    best: Scored<'a>,
    best_origin: Origin,
    final_prompt: Scored<'a>,
    final_soft_loss: f64,
    grad_steps: usize,
    evaluations: usize,
    rounds: &'a [RoundSummary],
}

#[derive(Serialize)]
struct CurveRow<'a> {
    step: usize,
    seq: usize,
    round: usize,
    iteration: usize,
    origin: &'a str,
    loss: f64,
    accuracy: f64,
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(CliError::io(format!("creating {}", path.display())))
}

pub fn write_trajectory(path: &Path, result: &RunResult) -> Result<(), CliError> {
    let mut w = create(path)?;
    write_events(&result.events, &mut w).map_err(CliError::io(format!("writing {}", path.display())))
}

/// Trajectory, curve and summary files for one run.
fn write_artifacts(
    dir: &Path,
    arm: &str,
    config: &CliConfig,
    run_config: &RunConfig,
    task: &LoadedTask,
    result: &RunResult,
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))?;
    write_trajectory(&dir.join(TRAJECTORY_FILE), result)?;

    let curve_path = dir.join(CURVE_FILE);
    let mut curve = csv::Writer::from_writer(create(&curve_path)?);
    let mut evaluations = 0;
    for e in result.events.iter().filter(|e| e.is_evaluation()) {
        evaluations += 1;
        curve
            .serialize(CurveRow {
                step: evaluations,
                seq: e.seq,
                round: e.round,
                iteration: e.iteration,
                origin: &e.origin.map(|o| o.to_string()).unwrap_or_default(),
                loss: e.loss.unwrap_or(f64::NAN),
                accuracy: e.accuracy.unwrap_or(f64::NAN),
            })
            .map_err(|e| CliError::io(format!("writing {}", curve_path.display()))(e.into()))?;
    }
    curve.flush().map_err(CliError::io(format!("writing {}", curve_path.display())))?;

    let summary = Summary {
        arm,
        config,
        seed: run_config.seed,
        planted_text: task.planted.as_deref(),
        planted_loss: task.planted_loss()?,
        best: Scored { text: &result.best_text, loss: result.best_loss, accuracy: result.best_accuracy },
        best_origin: result.best_origin,
        final_prompt: Scored {
            text: &result.final_text,
            loss: result.final_loss,
            accuracy: result.final_accuracy,
        },
        final_soft_loss: result.final_soft_loss,
        grad_steps: result.grad_steps,
        evaluations,
        rounds: &result.rounds,
    };
    let path = dir.join(SUMMARY_FILE);
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&path, json + "\n").map_err(CliError::io(format!("writing {}", path.display())))?;
    info!(
        "{arm}: best {:.4} {:?}, final {:.4}; artifacts in {}",
        result.best_loss,
        result.best_text,
        result.final_loss,
        dir.display()
    );
    Ok(())
}

fn build_client(run: &RunConfig, task: &LoadedTask) -> Result<Box<dyn LlmClient>, RunError> {
    Ok(run.llm.build(ClientContext {
        vocab: &task.vocab,
        planted_text: task.planted.as_deref(),
        seed: run.seed,
        style: run.instruction.style,
    })?)
}

pub fn cmd_run(config: &CliConfig) -> Result<RunResult, CliError> {
    let task = load_task(&config.task)?;
    let mut client = build_client(&config.run, &task)?;
    let result = run(&config.run, &task.objective, &task.vocab, &mut *client)?;
    write_artifacts(&config.out, "combined", config, &config.run, &task, &result)?;
    Ok(result)
}

/// Runs the baseline for each seed. A single seed writes into `out`
/// directly, several seeds into `out/seed-<n>`.
pub fn cmd_baseline(
    config: &CliConfig,
    kind: BaselineKind,
    seeds: &[u64],
) -> Result<Vec<RunResult>, CliError> {
    let task = load_task(&config.task)?;
    let seeds = if seeds.is_empty() { vec![config.run.seed] } else { seeds.to_vec() };
    let mut out = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let cfg = RunConfig { seed, ..config.run.clone() };
        let result = match kind {
            BaselineKind::GradientOnly => run_gradient_only(&cfg, &task.objective, &task.vocab)?,
            BaselineKind::NoiseRestart => run_noise_restart(&cfg, &task.objective, &task.vocab)?,
        };
        let dir = if seeds.len() == 1 { config.out.clone() } else { config.out.join(format!("seed-{seed}")) };
        write_artifacts(&dir, kind.name(), config, &cfg, &task, &result)?;
        out.push(result);
    }
    Ok(out)
}

/// Writes `ablation.csv` plus one trajectory per cell and seed under
/// `out/cells`. Fails only when every run failed.
pub fn cmd_ablate(config: &CliConfig) -> Result<usize, CliError> {
    let axes = config.ablation.axes()?;
    let task = load_task(&config.task)?;
    let report = run_ablation(&axes, &config.run, &task.objective, &task.vocab, |cfg| {
        build_client(cfg, &task)
    })?;

    let cells_dir = config.out.join("cells");
    fs::create_dir_all(&cells_dir).map_err(CliError::io(format!("creating {}", cells_dir.display())))?;
    let mut succeeded = 0;
    for cell in &report.cells {
        for (seed, result) in &cell.runs {
            succeeded += 1;
            let name = format!("cell-{}-seed-{seed}.jsonl", cell.cell.index);
            write_trajectory(&cells_dir.join(name), result)?;
        }
    }
    let table = config.out.join(ABLATION_FILE);
    report.write_csv(create(&table)?)?;
    info!("{} cells written to {}", report.cells.len(), table.display());

    if succeeded == 0 {
        if let Some(AblationError::Cell { source, .. }) = report.failures().next() {
            return Err(CliError::from(source));
        }
    }
    Ok(report.cells.len())
}
