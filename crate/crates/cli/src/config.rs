//! Config file loading and flag overrides.
//!
//! Values resolve as command-line flag, then config file, then built-in
//! default. Flags are applied as dotted-path edits to the parsed file before
//! it is deserialized, so every field goes through the same validation.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use prompt_catalyst::objective::SyntheticTaskSpec;
use prompt_catalyst::orchestrator::{AblationAxes, ContextFlags, RunConfig};
use prompt_catalyst::vocab::Metric;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;

fn default_temperature() -> f64 {
    10.0
}

fn default_out() -> PathBuf {
    PathBuf::from("catalyst-out")
}

/// Where the objective comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TaskSource {
    /// Built in memory from a spec.
    Synthetic(SyntheticTaskSpec),
    /// A directory written by `gen-task`.
    Dir { path: PathBuf },
    /// Explicit vocabulary and sample files.
    Files {
        tokens: PathBuf,
        embeddings: PathBuf,
        samples: PathBuf,
        class_tokens: Vec<String>,
        #[serde(default = "default_temperature")]
        temperature: f64,
        #[serde(default)]
        planted: Option<String>,
    },
}

impl Default for TaskSource {
    fn default() -> Self {
        TaskSource::Synthetic(SyntheticTaskSpec::default())
    }
}

/// Ablation axes as written in the config file. `flags` entries are
/// three-letter T/F strings in TD, MP, OT order, or `"table"` for the four
/// standard rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub flags: Vec<String>,
    #[serde(default)]
    pub rounds: Vec<usize>,
    #[serde(default)]
    pub inner_iterations: Vec<usize>,
    #[serde(default)]
    pub metric: Vec<Metric>,
    #[serde(default)]
    pub prompt_length: Vec<usize>,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

fn parse_flags(s: &str) -> Result<Vec<ContextFlags>, CliError> {
    if s.eq_ignore_ascii_case("table") {
        return Ok(ContextFlags::TABLE.to_vec());
    }
    let bit = |c: char| match c.to_ascii_uppercase() {
        'T' | '1' => Ok(true),
        'F' | '0' => Ok(false),
        _ => Err(CliError::Config(format!("flag row {s:?} must use T/F for TD, MP, OT"))),
    };
    let chars: Vec<char> = s.chars().collect();
    if chars.len() != 3 {
        return Err(CliError::Config(format!("flag row {s:?} must have three letters (TD, MP, OT)")));
    }
    Ok(vec![ContextFlags { td: bit(chars[0])?, mp: bit(chars[1])?, ot: bit(chars[2])? }])
}

impl GridSpec {
    pub fn axes(&self) -> Result<AblationAxes, CliError> {
        let mut flags = Vec::new();
        for f in &self.flags {
            flags.extend(parse_flags(f)?);
        }
        Ok(AblationAxes {
            flags,
            rounds: self.rounds.clone(),
            inner_iterations: self.inner_iterations.clone(),
            metric: self.metric.clone(),
            prompt_length: self.prompt_length.clone(),
            seeds: self.seeds.clone(),
        })
    }

    /// Applies `name=v1,v2,...` from the command line, replacing that axis.
    pub fn set_axis(&mut self, arg: &str) -> Result<(), CliError> {
        let (name, values) = arg
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("grid axis {arg:?} is not NAME=VALUES")))?;
        let items: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
        fn parse<T: FromStr>(name: &str, items: &[&str]) -> Result<Vec<T>, CliError> {
            items
                .iter()
                .map(|v| v.parse().map_err(|_| CliError::Config(format!("bad value {v:?} for axis {name}"))))
                .collect()
        }
        match name.trim() {
            "flags" => {
                for f in &items {
                    parse_flags(f)?;
                }
                self.flags = items.iter().map(|s| s.to_string()).collect();
            }
            "rounds" | "N" => self.rounds = parse(name, &items)?,
            "inner_iterations" | "inner-iters" | "m" => self.inner_iterations = parse(name, &items)?,
            "metric" => self.metric = parse(name, &items)?,
            "prompt_length" | "prompt-len" | "L" => self.prompt_length = parse(name, &items)?,
            "seeds" => self.seeds = parse(name, &items)?,
            other => {
                return Err(CliError::Config(format!(
                    "unknown ablation axis {other:?} (expected flags, rounds, inner_iterations, metric, prompt_length or seeds)"
                )))
            }
        }
        Ok(())
    }
}

/// Everything a command needs, after overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub task: TaskSource,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub ablation: GridSpec,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            out: default_out(),
            task: TaskSource::default(),
            run: RunConfig::default(),
            ablation: GridSpec::default(),
        }
    }
}

/// A pending `path = value` edit.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub path: String,
    pub value: Value,
}

impl Override {
    pub fn new(path: &str, value: impl Into<Value>) -> Self {
        Self { path: path.to_string(), value: value.into() }
    }

    /// Parses `a.b.c=value`; the value is read as a TOML literal, falling
    /// back to a bare string.
    pub fn parse(arg: &str) -> Result<Self, CliError> {
        let (path, raw) = arg
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set {arg:?} is not KEY=VALUE")))?;
        let raw = raw.trim();
        let value = Value::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        Ok(Self { path: path.trim().to_string(), value })
    }
}

fn apply(table: &mut Table, ov: &Override) -> Result<(), CliError> {
    let parts: Vec<&str> = ov.path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key {:?}", ov.path)));
    }
    let (last, parents) = parts.split_last().expect("non-empty path");
    let mut node = table;
    for p in parents {
        let entry = node.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override {:?}: {p} is not a table", ov.path)))?;
    }
    node.insert(last.to_string(), ov.value.clone());
    Ok(())
}

impl CliConfig {
    /// Reads `path` (if any), applies `overrides` in order and validates.
    pub fn load(path: Option<&Path>, overrides: &[Override]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(CliError::io(format!("reading config {}", p.display())))?;
                Table::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for ov in overrides {
            apply(&mut table, ov)?;
        }
        if let Some(Value::Table(task)) = table.get_mut("task") {
            task.entry("kind").or_insert_with(|| Value::String("synthetic".into()));
        }
        let cfg: CliConfig = table.try_into().map_err(|e| CliError::Config(e.to_string()))?;
        cfg.run.validate()?;
        if let TaskSource::Synthetic(spec) = &cfg.task {
            spec.validate()?;
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_file_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[run]\nrounds = 5\ntopk = 4\n[run.gd]\nlr = 0.05\n").unwrap();
        let cfg = CliConfig::load(Some(&p), &[Override::new("run.rounds", 2)]).unwrap();
        assert_eq!(cfg.run.rounds, 2);
        assert_eq!(cfg.run.topk, 4);
        assert_eq!(cfg.run.gd.lr, 0.05);
        assert_eq!(cfg.run.inner_iterations, 10);
    }

    #[test]
    fn set_parses_literals() {
        let cfg = CliConfig::load(
            None,
            &[
                Override::parse("run.noise_sigma=0.5").unwrap(),
                Override::parse("run.instruction.manual_prompt=a photo of").unwrap(),
                Override::parse("task.seed=7").unwrap(),
                Override::parse("run.metric=cosine").unwrap(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.run.noise_sigma, 0.5);
        assert_eq!(cfg.run.instruction.manual_prompt.as_deref(), Some("a photo of"));
        assert_eq!(cfg.run.metric, Metric::Cosine);
        match cfg.task {
            TaskSource::Synthetic(s) => assert_eq!(s.seed, 7),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let err = CliConfig::load(None, &[Override::parse("run.roundz=3").unwrap()]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = CliConfig::load(None, &[Override::new("run.inner_iterations", 0)]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn grid_axes() {
        let mut g = GridSpec::default();
        g.set_axis("flags=table").unwrap();
        g.set_axis("N=1,2,3,4").unwrap();
        g.set_axis("metric=l2,cosine").unwrap();
        let axes = g.axes().unwrap();
        assert_eq!(axes.flags.len(), 4);
        assert_eq!(axes.rounds, vec![1, 2, 3, 4]);
        assert_eq!(axes.metric, vec![Metric::L2, Metric::Cosine]);
        assert_eq!(g.set_axis("depth=3").unwrap_err().exit_code(), 2);
        assert!(g.set_axis("flags=TX").is_err());
    }
}
