use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prompt_catalyst::llmopt::LlmKind;
use prompt_catalyst::vocab::Metric;

mod commands;
mod config;
mod error;
mod report;
mod task;

use commands::BaselineKind;
use config::{CliConfig, Override, TaskSource};
use error::CliError;

/// Prompt tuning that alternates gradient descent with LLM-proposed restarts.
#[derive(Debug, Parser)]
#[command(name = "catalyst", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalFlags {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed (task seed for gen-task).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    llm: Option<LlmKind>,
    /// Chat-completions URL for the http client.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    metric: Option<Metric>,
    #[arg(long, global = true)]
    rounds: Option<usize>,
    #[arg(long = "inner-iters", global = true)]
    inner_iters: Option<usize>,
    #[arg(long = "final-iters", global = true)]
    final_iters: Option<usize>,
    #[arg(long, global = true)]
    topk: Option<usize>,
    #[arg(long = "prompt-len", global = true)]
    prompt_len: Option<usize>,
    /// Hand-written prompt used by the manual-prompt instruction block.
    #[arg(long = "manual-prompt", global = true)]
    manual_prompt: Option<String>,
    /// Any other config field, e.g. `--set run.gd.lr=0.05`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic task (vocabulary, embeddings, samples, manifest).
    GenTask,
    /// Run the combined optimizer.
    Run,
    /// Run a comparison arm with the combined arm's gradient budget.
    Baseline {
        #[arg(long, value_enum, default_value = "gradient-only")]
        kind: BaselineKind,
        #[arg(long = "noise-sigma")]
        noise_sigma: Option<f64>,
        /// Comma-separated seeds; one artifact directory per seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Sweep ablation axes and write one aggregated row per cell.
    Ablate {
        /// Axis values, e.g. `--grid rounds=1,2,3,4` or `--grid flags=table`.
        #[arg(long = "grid", value_name = "AXIS=VALUES")]
        grid: Vec<String>,
    },
    /// Summarize trajectory files as markdown and an SVG chart.
    Report {
        #[arg(required = true)]
        trajectories: Vec<PathBuf>,
    },
}

impl GlobalFlags {
    fn overrides(&self, command: &Command) -> Result<Vec<Override>, CliError> {
        let mut ov = Vec::new();
        let mut push = |path: &str, v: Option<toml::Value>| {
            if let Some(v) = v {
                ov.push(Override::new(path, v));
            }
        };
        let int = |v: Option<usize>| v.map(|n| toml::Value::Integer(n as i64));
        let text = |v: Option<&String>| v.map(|s| toml::Value::String(s.clone()));
        let seed_path = if matches!(command, Command::GenTask) { "task.seed" } else { "run.seed" };
        push(seed_path, self.seed.map(|s| toml::Value::Integer(s as i64)));
        push("out", self.out.as_ref().map(|p| toml::Value::String(p.display().to_string())));
        push("run.llm.kind", self.llm.map(|k| toml::Value::String(format!("{k:?}").to_lowercase())));
        push("run.llm.endpoint", text(self.endpoint.as_ref()));
        push("run.llm.model", text(self.model.as_ref()));
        push("run.metric", self.metric.map(|m| toml::Value::String(m.to_string())));
        push("run.rounds", int(self.rounds));
        push("run.inner_iterations", int(self.inner_iters));
        push("run.final_iterations", int(self.final_iters));
        push("run.topk", int(self.topk));
        push("run.prompt_length", int(self.prompt_len));
        push("run.instruction.manual_prompt", text(self.manual_prompt.as_ref()));
        for s in &self.set {
            ov.push(Override::parse(s)?);
        }
        Ok(ov)
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut overrides = cli.global.overrides(&cli.command)?;
    if let Command::Baseline { noise_sigma: Some(s), .. } = &cli.command {
        overrides.push(Override::new("run.noise_sigma", *s));
    }
    let mut config = CliConfig::load(cli.global.config.as_deref(), &overrides)?;
    match cli.command {
        Command::GenTask => {
            let TaskSource::Synthetic(spec) = &config.task else {
                return Err(CliError::Config("gen-task needs a synthetic [task] section".into()));
            };
            for p in task::gen_task(spec, &config.out)? {
                println!("{}", p.display());
            }
        }
        Command::Run => {
            let r = commands::cmd_run(&config)?;
            println!("best {:.6} {:?} | final {:.6} {:?}", r.best_loss, r.best_text, r.final_loss, r.final_text);
        }
        Command::Baseline { kind, seeds, .. } => {
            for r in commands::cmd_baseline(&config, kind, &seeds)? {
                println!("best {:.6} {:?} | final {:.6} {:?}", r.best_loss, r.best_text, r.final_loss, r.final_text);
            }
        }
        Command::Ablate { grid } => {
            for g in &grid {
                config.ablation.set_axis(g)?;
            }
            let cells = commands::cmd_ablate(&config)?;
            println!("{cells} cells -> {}", config.out.join(commands::ABLATION_FILE).display());
        }
        Command::Report { trajectories } => {
            let (md, svg) = report::cmd_report(&trajectories, &config.out)?;
            println!("{}\n{}", md.display(), svg.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
