use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use prompt_catalyst::objective::{
    make_synthetic_task, FewShotDataset, Objective, SyntheticObjective, SyntheticTaskSpec,
};
use prompt_catalyst::vocab::Vocabulary;
use serde::{Deserialize, Serialize};

use crate::config::TaskSource;
use crate::error::CliError;

pub const TOKENS_FILE: &str = "tokens.txt";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const SAMPLES_FILE: &str = "samples.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Written next to the task files by `gen-task`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SyntheticTaskSpec,
    pub planted_text: String,
    pub planted_ids: Vec<usize>,
    pub planted_loss: f64,
    pub planted_accuracy: f64,
    pub class_ids: Vec<usize>,
    pub class_tokens: Vec<String>,
    pub num_classes: usize,
    pub temperature: f64,
    pub tokens: String,
    pub embeddings: String,
    pub samples: String,
}

pub struct LoadedTask {
    pub vocab: Arc<Vocabulary>,
    pub objective: SyntheticObjective,
    /// Known optimum, when the task has one.
    pub planted: Option<String>,
}

impl LoadedTask {
    pub fn planted_loss(&self) -> Result<Option<f64>, CliError> {
        let Some(text) = &self.planted else { return Ok(None) };
        let prompt = self.vocab.tokenize(text)?.prompt;
        Ok(Some(self.objective.loss(&self.vocab.embed(&prompt))?))
    }
}

fn class_ids_for(vocab: &Vocabulary, tokens: &[String]) -> Result<Vec<usize>, CliError> {
    tokens
        .iter()
        .map(|t| {
            vocab
                .id_of(t)
                .ok_or_else(|| CliError::Config(format!("class token {t:?} is not in the vocabulary")))
        })
        .collect()
}

fn load_files(
    tokens: &Path,
    embeddings: &Path,
    samples: &Path,
    class_tokens: &[String],
    temperature: f64,
    planted: Option<String>,
) -> Result<LoadedTask, CliError> {
    let vocab = Vocabulary::load(tokens, embeddings)?;
    let class_ids = class_ids_for(&vocab, class_tokens)?;
    let dataset = FewShotDataset::load(samples, class_ids.len())?;
    let objective = SyntheticObjective::new(&vocab, &class_ids, &dataset, temperature)?;
    Ok(LoadedTask { vocab: Arc::new(vocab), objective, planted })
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CliError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(CliError::io(format!("reading {}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn load_task(source: &TaskSource) -> Result<LoadedTask, CliError> {
    match source {
        TaskSource::Synthetic(spec) => {
            let task = make_synthetic_task(spec)?;
            Ok(LoadedTask {
                vocab: task.vocab,
                objective: task.objective,
                planted: Some(task.planted.text().to_string()),
            })
        }
        TaskSource::Dir { path } => {
            let m = read_manifest(path)?;
            load_files(
                &path.join(&m.tokens),
                &path.join(&m.embeddings),
                &path.join(&m.samples),
                &m.class_tokens,
                m.temperature,
                Some(m.planted_text),
            )
        }
        TaskSource::Files { tokens, embeddings, samples, class_tokens, temperature, planted } => {
            load_files(tokens, embeddings, samples, class_tokens, *temperature, planted.clone())
        }
    }
}

/// Writes the vocabulary, embedding matrix, samples and manifest of the
/// synthetic task `spec` into `out`. Returns the written paths.
pub fn gen_task(spec: &SyntheticTaskSpec, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let task = make_synthetic_task(spec)?;
    fs::create_dir_all(out).map_err(CliError::io(format!("creating {}", out.display())))?;
    let paths: Vec<PathBuf> =
        [TOKENS_FILE, EMBEDDINGS_FILE, SAMPLES_FILE, MANIFEST_FILE].iter().map(|f| out.join(f)).collect();
    task.vocab.save(&paths[0], &paths[1])?;
    task.dataset.save(&paths[2]).map_err(CliError::io(format!("writing {}", paths[2].display())))?;
    let planted = task.vocab.embed(&task.planted);
    let manifest = Manifest {
        spec: spec.clone(),
        planted_text: task.planted.text().to_string(),
        planted_ids: task.planted.token_ids().to_vec(),
        planted_loss: task.objective.loss(&planted)?,
        planted_accuracy: task.objective.accuracy(&planted)?,
        class_tokens: task
            .class_ids
            .iter()
            .map(|&id| task.vocab.token(id).unwrap_or_default().to_string())
            .collect(),
        class_ids: task.class_ids,
        num_classes: spec.num_classes,
        temperature: spec.temperature,
        tokens: TOKENS_FILE.into(),
        embeddings: EMBEDDINGS_FILE.into(),
        samples: SAMPLES_FILE.into(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&paths[3], json + "\n").map_err(CliError::io(format!("writing {}", paths[3].display())))?;
    Ok(paths)
}
