//! Loss contract for soft prompts and the two built-in objectives.
//!
//! [`SyntheticObjective`] is a cosine-similarity few-shot classifier: the text
//! feature of class `c` is the normalized mean of the prompt rows and the class
//! token's row, logits are `temperature * cos(text_c, x)` and the loss is the
//! mean cross-entropy over the dataset. [`make_synthetic_task`] plants a known
//! good context so that an optimum exists by construction.
//!
//! [`QuadraticObjective`] is a convex landscape centred on a target prompt's
//! embedding, used as a convergence oracle.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::{DiscretePrompt, Metric, PromptEmbedding, VocabError, Vocabulary};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("prompt shape {got_len}x{got_dim} does not match expected {expected_len}x{expected_dim}")]
    ShapeMismatch { expected_len: usize, expected_dim: usize, got_len: usize, got_dim: usize },
    #[error("prompt dimension {got} does not match objective dimension {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("invalid task spec: {0}")]
    InvalidSpec(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("finite-difference step must be positive, got {0}")]
    BadStep(f64),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("malformed samples file line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Scalar loss with analytic gradient over soft prompts.
///
/// Implementations are immutable and every method is pure.
pub trait Objective: Send + Sync {
    /// Embedding dimension `d` of accepted prompts.
    fn dim(&self) -> usize;

    /// Required prompt length, or `None` if any `L >= 1` is accepted.
    fn prompt_len(&self) -> Option<usize> {
        None
    }

    fn loss(&self, theta: &PromptEmbedding) -> Result<f64, ObjectiveError>;

    fn grad(&self, theta: &PromptEmbedding) -> Result<Array2<f64>, ObjectiveError>;

    /// Percentage in `[0, 100]`.
    fn accuracy(&self, theta: &PromptEmbedding) -> Result<f64, ObjectiveError>;

    fn check_shape(&self, theta: &PromptEmbedding) -> Result<(), ObjectiveError> {
        match self.prompt_len() {
            Some(len) if len != theta.len() || theta.dim() != self.dim() => {
                Err(ObjectiveError::ShapeMismatch {
                    expected_len: len,
                    expected_dim: self.dim(),
                    got_len: theta.len(),
                    got_dim: theta.dim(),
                })
            }
            _ if theta.dim() != self.dim() => {
                Err(ObjectiveError::DimMismatch { expected: self.dim(), got: theta.dim() })
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Exactly `shots` samples for each of `num_classes` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotDataset {
    samples: Vec<Sample>,
    num_classes: usize,
    shots: usize,
}

impl FewShotDataset {
    pub fn new(samples: Vec<Sample>, num_classes: usize) -> Result<Self, ObjectiveError> {
        if num_classes < 2 {
            return Err(ObjectiveError::InvalidDataset("need at least two classes".into()));
        }
        let mut counts = vec![0usize; num_classes];
        let dim = samples.first().map(|s| s.features.len()).unwrap_or(0);
        for s in &samples {
            if s.label >= num_classes {
                return Err(ObjectiveError::InvalidDataset(format!("label {} out of range", s.label)));
            }
            if s.features.len() != dim || dim == 0 {
                return Err(ObjectiveError::InvalidDataset("inconsistent feature dimension".into()));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(ObjectiveError::InvalidDataset("non-finite feature".into()));
            }
            counts[s.label] += 1;
        }
        let shots = counts[0];
        if shots == 0 || counts.iter().any(|&c| c != shots) {
            return Err(ObjectiveError::InvalidDataset(format!(
                "classes must have equal, nonzero sample counts, got {counts:?}"
            )));
        }
        Ok(Self { samples, num_classes, shots })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn shots(&self) -> usize {
        self.shots
    }

    pub fn dim(&self) -> usize {
        self.samples[0].features.len()
    }

    /// One record per line: `label f1 ... fd`, floats in shortest round-trip form.
    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut w = io::BufWriter::new(fs::File::create(path)?);
        for s in &self.samples {
            write!(w, "{}", s.label)?;
            for v in &s.features {
                write!(w, " {v:?}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    }

    pub fn load(path: &Path, num_classes: usize) -> Result<Self, ObjectiveError> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut samples = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| ObjectiveError::Format { line: i + 1, msg };
            let mut fields = line.split_whitespace();
            let label = fields
                .next()
                .and_then(|f| f.parse::<usize>().ok())
                .ok_or_else(|| bad("missing or invalid label".into()))?;
            let features = fields
                .map(|f| f.parse::<f64>().map_err(|e| bad(format!("{f:?}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            samples.push(Sample { features, label });
        }
        Self::new(samples, num_classes)
    }
}

fn default_temperature() -> f64 {
    10.0
}

/// Parameters of the planted-optimum synthetic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTaskSpec {
    pub seed: u64,
    pub vocab_size: usize,
    pub dim: usize,
    pub num_classes: usize,
    pub shots: usize,
    /// Token ids of the hidden ideal context.
    pub planted_context_ids: Vec<usize>,
    pub noise_sigma: f64,
    pub temperature: f64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            vocab_size: 200,
            dim: 16,
            num_classes: 5,
            shots: 4,
            planted_context_ids: vec![60, 85, 120, 150],
            noise_sigma: 0.3,
            temperature: default_temperature(),
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let bad = |m: String| Err(ObjectiveError::InvalidSpec(m));
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2".into());
        }
        if self.shots == 0 {
            return bad("shots must be at least 1".into());
        }
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.planted_context_ids.is_empty() {
            return bad("planted_context_ids must be non-empty".into());
        }
        // one special padding token plus the classes plus the planted context
        if self.vocab_size <= self.num_classes + self.planted_context_ids.len() + 1 {
            return bad(format!(
                "vocab_size {} too small for {} classes and a {}-token context",
                self.vocab_size,
                self.num_classes,
                self.planted_context_ids.len()
            ));
        }
        if let Some(&id) =
            self.planted_context_ids.iter().find(|&&id| id == 0 || id >= self.vocab_size)
        {
            return bad(format!("planted id {id} is special or out of range"));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be positive".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive".into());
        }
        Ok(())
    }
}

fn normalized(v: &Array1<f64>) -> Array1<f64> {
    let n = v.dot(v).sqrt();
    if n > 0.0 {
        v / n
    } else {
        v.clone()
    }
}

/// Cosine-similarity classifier over mean-pooled prompt and class embeddings.
#[derive(Debug, Clone)]
pub struct SyntheticObjective {
    class_rows: Vec<Array1<f64>>,
    /// Unit-normalized sample features, `n x d`.
    features: Array2<f64>,
    labels: Vec<usize>,
    temperature: f64,
}

const NORM_FLOOR: f64 = 1e-12;

struct Forward {
    /// Per class: unnormalized mean `u_c` norm and text feature `t_c`.
    norms: Vec<f64>,
    text: Vec<Array1<f64>>,
    /// `n x C` logits.
    logits: Array2<f64>,
}

impl SyntheticObjective {
    pub fn new(
        vocab: &Vocabulary,
        class_ids: &[usize],
        dataset: &FewShotDataset,
        temperature: f64,
    ) -> Result<Self, ObjectiveError> {
        if class_ids.len() != dataset.num_classes() {
            return Err(ObjectiveError::InvalidDataset(format!(
                "{} class tokens for {} classes",
                class_ids.len(),
                dataset.num_classes()
            )));
        }
        if dataset.dim() != vocab.dim() {
            return Err(ObjectiveError::DimMismatch { expected: vocab.dim(), got: dataset.dim() });
        }
        if let Some(&id) = class_ids.iter().find(|&&id| id >= vocab.len()) {
            return Err(VocabError::InvalidId(id).into());
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(ObjectiveError::InvalidSpec("temperature must be positive".into()));
        }
        let class_rows = class_ids.iter().map(|&id| vocab.row(id).to_owned()).collect();
        let n = dataset.samples().len();
        let mut features = Array2::zeros((n, vocab.dim()));
        for (mut row, s) in features.rows_mut().into_iter().zip(dataset.samples()) {
            row.assign(&normalized(&Array1::from(s.features.clone())));
        }
        let labels = dataset.samples().iter().map(|s| s.label).collect();
        Ok(Self { class_rows, features, labels, temperature })
    }

    pub fn num_classes(&self) -> usize {
        self.class_rows.len()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    fn forward(&self, theta: &PromptEmbedding) -> Forward {
        let rows = theta.rows();
        let count = (rows.nrows() + 1) as f64;
        let sum = rows.sum_axis(ndarray::Axis(0));
        let mut norms = Vec::with_capacity(self.class_rows.len());
        let mut text = Vec::with_capacity(self.class_rows.len());
        for class_row in &self.class_rows {
            let mean = (&sum + class_row) / count;
            let n = mean.dot(&mean).sqrt();
            norms.push(n);
            // degenerate text feature contributes a zero logit
            text.push(if n > NORM_FLOOR { mean / n } else { Array1::zeros(sum.len()) });
        }
        let mut logits = Array2::zeros((self.features.nrows(), self.class_rows.len()));
        for (i, x) in self.features.rows().into_iter().enumerate() {
            for (c, t) in text.iter().enumerate() {
                logits[[i, c]] = self.temperature * t.dot(&x);
            }
        }
        Forward { norms, text, logits }
    }

    fn log_softmax(row: ArrayView1<'_, f64>) -> Array1<f64> {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv(|v| v - lse)
    }
}

impl Objective for SyntheticObjective {
    fn dim(&self) -> usize {
        self.features.ncols()
    }

    fn loss(&self, theta: &PromptEmbedding) -> Result<f64, ObjectiveError> {
        self.check_shape(theta)?;
        let fwd = self.forward(theta);
        let mut total = 0.0;
        for (i, &y) in self.labels.iter().enumerate() {
            total -= Self::log_softmax(fwd.logits.row(i))[y];
        }
        Ok((total / self.labels.len() as f64).max(0.0))
    }

    fn grad(&self, theta: &PromptEmbedding) -> Result<Array2<f64>, ObjectiveError> {
        self.check_shape(theta)?;
        let fwd = self.forward(theta);
        let n = self.labels.len() as f64;
        let dim = self.dim();
        // dL/dt_c accumulated over samples
        let mut d_text = vec![Array1::<f64>::zeros(dim); self.class_rows.len()];
        for (i, &y) in self.labels.iter().enumerate() {
            let probs = Self::log_softmax(fwd.logits.row(i)).mapv(f64::exp);
            let x = self.features.row(i);
            for (c, acc) in d_text.iter_mut().enumerate() {
                let g = (probs[c] - if c == y { 1.0 } else { 0.0 }) / n;
                acc.scaled_add(self.temperature * g, &x);
            }
        }
        // back through normalization and the mean; every row shares the result
        let count = (theta.len() + 1) as f64;
        let mut d_sum = Array1::<f64>::zeros(dim);
        for ((g, t), &norm) in d_text.iter().zip(&fwd.text).zip(&fwd.norms) {
            if norm > NORM_FLOOR {
                let radial = t.dot(g);
                let d_mean = (g - &(t * radial)) / norm;
                d_sum.scaled_add(1.0 / count, &d_mean);
            }
        }
        let mut out = Array2::zeros((theta.len(), dim));
        for mut row in out.rows_mut() {
            row.assign(&d_sum);
        }
        Ok(out)
    }

    fn accuracy(&self, theta: &PromptEmbedding) -> Result<f64, ObjectiveError> {
        self.check_shape(theta)?;
        let fwd = self.forward(theta);
        let correct = self
            .labels
            .iter()
            .enumerate()
            .filter(|&(i, &y)| argmax_lowest(fwd.logits.row(i)) == y)
            .count();
        Ok(100.0 * correct as f64 / self.labels.len() as f64)
    }
}

/// Index of the maximum; ties go to the lowest index.
fn argmax_lowest(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = c;
        }
    }
    best
}

/// Everything [`make_synthetic_task`] builds.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub vocab: Arc<Vocabulary>,
    pub dataset: FewShotDataset,
    pub objective: SyntheticObjective,
    pub planted: DiscretePrompt,
    pub class_ids: Vec<usize>,
}

/// Builds the seeded vocabulary, class tokens and samples of a planted task.
pub fn make_synthetic_task(spec: &SyntheticTaskSpec) -> Result<SyntheticTask, ObjectiveError> {
    spec.validate()?;
    let vocab = Vocabulary::random(spec.seed, spec.vocab_size, spec.dim)?;
    let planted = vocab.prompt_from_ids(&spec.planted_context_ids)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_c1a5_5e5e_d000);
    let mut free: Vec<usize> = vocab
        .projectable_ids()
        .filter(|id| !spec.planted_context_ids.contains(id))
        .collect();
    free.shuffle(&mut rng);
    let class_ids: Vec<usize> = free[..spec.num_classes].to_vec();

    let context: Array1<f64> = spec
        .planted_context_ids
        .iter()
        .fold(Array1::zeros(spec.dim), |acc, &id| acc + vocab.row(id));
    let count = (spec.planted_context_ids.len() + 1) as f64;

    let mut samples = Vec::with_capacity(spec.num_classes * spec.shots);
    for (label, &cid) in class_ids.iter().enumerate() {
        let direction = normalized(&((&context + &vocab.row(cid)) / count));
        for _ in 0..spec.shots {
            let noise: Array1<f64> =
                (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let x = normalized(&(&direction + &(noise * spec.noise_sigma)));
            samples.push(Sample { features: x.to_vec(), label });
        }
    }
    let dataset = FewShotDataset::new(samples, spec.num_classes)?;
    let objective = SyntheticObjective::new(&vocab, &class_ids, &dataset, spec.temperature)?;
    Ok(SyntheticTask { vocab: Arc::new(vocab), dataset, objective, planted, class_ids })
}

/// `loss(theta) = ||theta - embed(target)||_F^2`.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    center: Array2<f64>,
    target: DiscretePrompt,
    vocab: Arc<Vocabulary>,
}

impl QuadraticObjective {
    pub fn new(target: &DiscretePrompt, vocab: Arc<Vocabulary>) -> Result<Self, ObjectiveError> {
        let target = vocab.prompt_from_ids(target.token_ids())?;
        let center = vocab.embed(&target).into_inner();
        Ok(Self { center, target, vocab })
    }

    pub fn center(&self) -> &Array2<f64> {
        &self.center
    }
}

/// Convex convergence oracle centred on `target`.
pub fn make_quadratic(
    target: &DiscretePrompt,
    vocab: Arc<Vocabulary>,
) -> Result<QuadraticObjective, ObjectiveError> {
    QuadraticObjective::new(target, vocab)
}

impl Objective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.center.ncols()
    }

    fn prompt_len(&self) -> Option<usize> {
        Some(self.center.nrows())
    }

    fn loss(&self, theta: &PromptEmbedding) -> Result<f64, ObjectiveError> {
        self.check_shape(theta)?;
        Ok((theta.rows() - &self.center).mapv(|v| v * v).sum())
    }

    fn grad(&self, theta: &PromptEmbedding) -> Result<Array2<f64>, ObjectiveError> {
        self.check_shape(theta)?;
        Ok((theta.rows() - &self.center) * 2.0)
    }

    fn accuracy(&self, theta: &PromptEmbedding) -> Result<f64, ObjectiveError> {
        self.check_shape(theta)?;
        let hit = self
            .vocab
            .project(theta, Metric::L2)
            .map(|p| p.token_ids() == self.target.token_ids())
            .unwrap_or(false);
        Ok(if hit { 100.0 } else { 0.0 })
    }
}

/// Central-difference gradient, one coordinate at a time.
pub fn finite_diff_grad(
    objective: &dyn Objective,
    theta: &PromptEmbedding,
    h: f64,
) -> Result<Array2<f64>, ObjectiveError> {
    if !(h > 0.0) {
        return Err(ObjectiveError::BadStep(h));
    }
    let base = theta.rows();
    let mut out = Array2::zeros(base.raw_dim());
    for ((i, j), slot) in out.indexed_iter_mut() {
        let mut plus = base.clone();
        plus[[i, j]] += h;
        let mut minus = base.clone();
        minus[[i, j]] -= h;
        let lp = objective.loss(&PromptEmbedding::new(plus)?)?;
        let lm = objective.loss(&PromptEmbedding::new(minus)?)?;
        *slot = (lp - lm) / (2.0 * h);
    }
    Ok(out)
}
