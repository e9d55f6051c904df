//! Token dictionary, embedding lookup and nearest-token projection.
//!
//! A [`Vocabulary`] owns the token strings and an `|S| x d` embedding table.
//! [`Vocabulary::embed`] maps a [`DiscretePrompt`] to its rows and
//! [`Vocabulary::project`] maps every row of a soft prompt back to the closest
//! non-special token by exhaustive scan.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("vocabulary is empty")]
    Empty,
    #[error("token {0:?} is empty or not lowercase")]
    BadToken(String),
    #[error("duplicate token {0:?}")]
    DuplicateToken(String),
    #[error("embedding table has {rows} rows but there are {tokens} tokens")]
    RowCount { rows: usize, tokens: usize },
    #[error("embedding dimension must be positive")]
    ZeroDim,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("token id {0} is out of range")]
    InvalidId(usize),
    #[error("token id {0} is a special token")]
    SpecialId(usize),
    #[error("prompt must have at least one row")]
    EmptyPrompt,
    #[error("prompt dimension {got} does not match vocabulary dimension {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("no word of {0:?} is in the vocabulary")]
    AllTokensUnknown(String),
    #[error("row {0} has zero norm, cosine projection is undefined")]
    ZeroVectorUnderCosine(usize),
    #[error("vocabulary has no projectable (non-special) tokens")]
    NoProjectableTokens,
    #[error("malformed vocabulary file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Distance used by [`Vocabulary::project`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    #[serde(alias = "L2")]
    L2,
    #[serde(alias = "Cosine")]
    Cosine,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Metric::L2 => f.write_str("l2"),
            Metric::Cosine => f.write_str("cosine"),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(Metric::L2),
            "cosine" | "cos" => Ok(Metric::Cosine),
            other => Err(format!("unknown metric {other:?} (expected l2 or cosine)")),
        }
    }
}

/// A soft prompt: `L x d` real matrix, one row per prompt position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEmbedding {
    rows: Array2<f64>,
}

impl PromptEmbedding {
    pub fn new(rows: Array2<f64>) -> Result<Self, VocabError> {
        if rows.nrows() == 0 {
            return Err(VocabError::EmptyPrompt);
        }
        if rows.ncols() == 0 {
            return Err(VocabError::ZeroDim);
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(VocabError::NonFinite("prompt embedding"));
        }
        Ok(Self { rows })
    }

    /// Number of prompt positions `L`.
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.rows
    }
}

/// A prompt as a sequence of vocabulary ids together with its rendering.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiscretePrompt {
    token_ids: Vec<usize>,
    text: String,
}

impl DiscretePrompt {
    pub fn token_ids(&self) -> &[usize] {
        &self.token_ids
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Result of [`Vocabulary::tokenize`]: the mapped prompt and the words that
/// had no vocabulary entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenized {
    pub prompt: DiscretePrompt,
    pub dropped: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    embeddings: Array2<f64>,
    special: BTreeSet<usize>,
    row_norms: Vec<f64>,
}

const SPECIAL_PREFIX: char = '<';
const SPECIAL_SUFFIX: char = '>';

const BASE_WORDS: &[&str] = &[
    "a", "photo", "of", "the", "image", "picture", "view", "satellite", "centered", "clear",
    "crisp", "detailed", "aerial", "precise", "high", "definition", "small", "large", "close",
    "up", "bright", "dark", "blurry", "good", "bad", "type", "kind", "shot", "scene", "texture",
    "pattern", "flower", "pet", "car", "food", "land", "cover", "map", "top", "down", "style",
];

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

/// Deterministic readable token string for position `i`: a fixed list of real
/// words first, then consonant-vowel pseudo-words.
fn synthetic_word(i: usize) -> String {
    if i < BASE_WORDS.len() {
        return BASE_WORDS[i].to_string();
    }
    let syllables = ONSETS.len() * VOWELS.len();
    let mut n = i - BASE_WORDS.len();
    // fixed-width blocks of two, three, ... syllables
    let mut width = 2u32;
    while n >= syllables.pow(width) {
        n -= syllables.pow(width);
        width += 1;
    }
    let mut word = String::new();
    for _ in 0..width {
        let s = n % syllables;
        word.push_str(ONSETS[s / VOWELS.len()]);
        word.push_str(VOWELS[s % VOWELS.len()]);
        n /= syllables;
    }
    word
}

fn normalize_word(raw: &str) -> String {
    raw.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

impl Vocabulary {
    pub fn new(
        tokens: Vec<String>,
        embeddings: Array2<f64>,
        special: BTreeSet<usize>,
    ) -> Result<Self, VocabError> {
        if tokens.is_empty() {
            return Err(VocabError::Empty);
        }
        if embeddings.ncols() == 0 {
            return Err(VocabError::ZeroDim);
        }
        if embeddings.nrows() != tokens.len() {
            return Err(VocabError::RowCount { rows: embeddings.nrows(), tokens: tokens.len() });
        }
        if embeddings.iter().any(|v| !v.is_finite()) {
            return Err(VocabError::NonFinite("embedding table"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) || t.to_lowercase() != *t {
                return Err(VocabError::BadToken(t.clone()));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(VocabError::DuplicateToken(t.clone()));
            }
        }
        if let Some(&bad) = special.iter().find(|&&i| i >= tokens.len()) {
            return Err(VocabError::InvalidId(bad));
        }
        let row_norms = embeddings.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        Ok(Self { tokens, index, embeddings, special, row_norms })
    }

    /// Seeded vocabulary of `size` unit-norm gaussian rows. Id 0 is a special
    /// `<pad>` token; the rest are readable words.
    pub fn random(seed: u64, size: usize, dim: usize) -> Result<Self, VocabError> {
        if size < 2 {
            return Err(VocabError::Empty);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embeddings = random_unit_rows(&mut rng, size, dim);
        let tokens = std::iter::once("<pad>".to_string())
            .chain((0..size - 1).map(synthetic_word))
            .collect();
        Self::new(tokens, embeddings, BTreeSet::from([0]))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn embeddings(&self) -> &Array2<f64> {
        &self.embeddings
    }

    pub fn row(&self, id: usize) -> ArrayView1<'_, f64> {
        self.embeddings.row(id)
    }

    pub fn special_ids(&self) -> &BTreeSet<usize> {
        &self.special
    }

    pub fn is_special(&self, id: usize) -> bool {
        self.special.contains(&id)
    }

    /// Ids eligible as projection targets, ascending.
    pub fn projectable_ids(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |i| !self.special.contains(i))
    }

    /// Builds a prompt from ids, validating each one.
    pub fn prompt_from_ids(&self, ids: &[usize]) -> Result<DiscretePrompt, VocabError> {
        if ids.is_empty() {
            return Err(VocabError::EmptyPrompt);
        }
        for &id in ids {
            if id >= self.len() {
                return Err(VocabError::InvalidId(id));
            }
            if self.is_special(id) {
                return Err(VocabError::SpecialId(id));
            }
        }
        Ok(DiscretePrompt { token_ids: ids.to_vec(), text: self.join(ids) })
    }

    fn join(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.tokens[i].as_str()).collect::<Vec<_>>().join(" ")
    }

    /// Word-level tokenization: lowercase, whitespace split, surrounding
    /// punctuation stripped. Unknown words are dropped and reported; pure
    /// punctuation such as a `{}` placeholder is ignored.
    pub fn tokenize(&self, text: &str) -> Result<Tokenized, VocabError> {
        let mut ids = Vec::new();
        let mut dropped = Vec::new();
        for raw in text.split_whitespace() {
            let word = normalize_word(raw);
            if word.is_empty() {
                continue;
            }
            match self.index.get(&word) {
                Some(&id) if !self.is_special(id) => ids.push(id),
                _ => dropped.push(word),
            }
        }
        if ids.is_empty() {
            return Err(VocabError::AllTokensUnknown(text.to_string()));
        }
        let text = self.join(&ids);
        Ok(Tokenized { prompt: DiscretePrompt { token_ids: ids, text }, dropped })
    }

    pub fn render(&self, prompt: &DiscretePrompt) -> String {
        self.join(&prompt.token_ids)
    }

    pub fn embed(&self, prompt: &DiscretePrompt) -> PromptEmbedding {
        let rows = self.embeddings.select(Axis(0), &prompt.token_ids);
        PromptEmbedding { rows }
    }

    /// Nearest non-special token per row; ties go to the lowest id.
    pub fn project(
        &self,
        theta: &PromptEmbedding,
        metric: Metric,
    ) -> Result<DiscretePrompt, VocabError> {
        if theta.dim() != self.dim() {
            return Err(VocabError::DimMismatch { expected: self.dim(), got: theta.dim() });
        }
        if self.projectable_ids().next().is_none() {
            return Err(VocabError::NoProjectableTokens);
        }
        let ids = theta
            .rows()
            .rows()
            .into_iter()
            .enumerate()
            .map(|(pos, row)| match metric {
                Metric::L2 => Ok(self.nearest_l2(row)),
                Metric::Cosine => self.nearest_cosine(row).ok_or(VocabError::ZeroVectorUnderCosine(pos)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DiscretePrompt { text: self.join(&ids), token_ids: ids })
    }

    fn nearest_l2(&self, query: ArrayView1<'_, f64>) -> usize {
        let mut best = (usize::MAX, f64::INFINITY);
        for id in self.projectable_ids() {
            let dist: f64 = self
                .embeddings
                .row(id)
                .iter()
                .zip(query.iter())
                .map(|(e, q)| (e - q) * (e - q))
                .sum();
            if dist < best.1 {
                best = (id, dist);
            }
        }
        best.0
    }

    fn nearest_cosine(&self, query: ArrayView1<'_, f64>) -> Option<usize> {
        let qn = query.dot(&query).sqrt();
        if qn == 0.0 {
            return None;
        }
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for id in self.projectable_ids() {
            let en = self.row_norms[id];
            let sim = if en == 0.0 { 0.0 } else { self.embeddings.row(id).dot(&query) / (en * qn) };
            if sim > best.1 {
                best = (id, sim);
            }
        }
        Some(best.0)
    }

    /// The `count` closest non-special tokens to token `id` by L2 distance,
    /// excluding `id` itself, nearest first.
    pub fn neighbors(&self, id: usize, count: usize) -> Vec<usize> {
        let anchor = self.embeddings.row(id);
        let mut scored: Vec<(f64, usize)> = self
            .projectable_ids()
            .filter(|&j| j != id)
            .map(|j| {
                let d = &self.embeddings.row(j) - &anchor;
                (d.dot(&d), j)
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scored.into_iter().take(count).map(|(_, j)| j).collect()
    }

    /// Writes the token sidecar (one token per line) and the embedding matrix
    /// as little-endian f64, row-major.
    pub fn save(&self, tokens_path: &Path, matrix_path: &Path) -> Result<(), VocabError> {
        let mut tokens = io::BufWriter::new(fs::File::create(tokens_path)?);
        for t in &self.tokens {
            writeln!(tokens, "{t}")?;
        }
        tokens.flush()?;
        let mut bytes = Vec::with_capacity(self.embeddings.len() * 8);
        for v in self.embeddings.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(matrix_path, bytes)?;
        Ok(())
    }

    /// Inverse of [`Vocabulary::save`]. Tokens written as `<name>` are special.
    pub fn load(tokens_path: &Path, matrix_path: &Path) -> Result<Self, VocabError> {
        let reader = BufReader::new(fs::File::open(tokens_path)?);
        let mut tokens = Vec::new();
        for line in reader.lines() {
            tokens.push(line?);
        }
        if tokens.is_empty() {
            return Err(VocabError::Empty);
        }
        let bytes = fs::read(matrix_path)?;
        if bytes.len() % (8 * tokens.len()) != 0 || bytes.is_empty() {
            return Err(VocabError::Format(format!(
                "{} bytes is not a whole number of f64 rows for {} tokens",
                bytes.len(),
                tokens.len()
            )));
        }
        let dim = bytes.len() / 8 / tokens.len();
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let embeddings = Array2::from_shape_vec((tokens.len(), dim), values)
            .map_err(|e| VocabError::Format(e.to_string()))?;
        let special = tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.starts_with(SPECIAL_PREFIX) && t.ends_with(SPECIAL_SUFFIX))
            .map(|(i, _)| i)
            .collect();
        Self::new(tokens, embeddings, special)
    }
}

/// `rows x dim` matrix of independent unit-norm gaussian directions.
pub fn random_unit_rows<R: rand::Rng>(rng: &mut R, rows: usize, dim: usize) -> Array2<f64> {
    let mut m = Array2::<f64>::zeros((rows, dim));
    for mut row in m.rows_mut() {
        loop {
            for v in row.iter_mut() {
                *v = StandardNormal.sample(rng);
            }
            let n = row.dot(&row).sqrt();
            if n > 1e-12 {
                row.mapv_inplace(|v| v / n);
                break;
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn tiny() -> Vocabulary {
        let tokens = ["<pad>", "a", "photo", "of", "dog"].map(String::from).to_vec();
        let emb = array![
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, -1.0, 0.0],
        ];
        Vocabulary::new(tokens, emb, BTreeSet::from([0])).unwrap()
    }

    #[test]
    fn tokenize_exact_membership() {
        let v = tiny();
        let t = v.tokenize("a photo of").unwrap();
        assert_eq!(t.prompt.token_ids(), &[1, 2, 3]);
        assert!(t.dropped.is_empty());
    }

    #[test]
    fn tokenize_normalizes_case_punctuation_whitespace() {
        let v = tiny();
        let t = v.tokenize("A  Photo,").unwrap();
        assert_eq!(t.prompt.token_ids(), &[1, 2]);
        assert_eq!(t.prompt.text(), "a photo");
    }

    #[test]
    fn tokenize_all_unknown() {
        let v = tiny();
        assert!(matches!(v.tokenize("zq9x zq9x"), Err(VocabError::AllTokensUnknown(_))));
    }

    #[test]
    fn tokenize_counts_drops_and_ignores_placeholder() {
        let v = tiny();
        let t = v.tokenize("a fluffy photo of {}.").unwrap();
        assert_eq!(t.prompt.token_ids(), &[1, 2, 3]);
        assert_eq!(t.dropped, vec!["fluffy".to_string()]);
    }

    #[test]
    fn special_token_is_not_tokenized() {
        let v = tiny();
        assert!(v.tokenize("<pad>").is_err());
    }

    #[test]
    fn embed_rows_and_repetition() {
        let v = tiny();
        let p = v.prompt_from_ids(&[2]).unwrap();
        assert_eq!(v.embed(&p).rows(), &array![[0.0, 1.0, 0.0]]);
        let p = v.prompt_from_ids(&[4, 4]).unwrap();
        let e = v.embed(&p);
        assert_eq!(e.rows().row(0), e.rows().row(1));
    }

    #[test]
    fn project_exact_rows_both_metrics() {
        let v = tiny();
        for id in 1..5 {
            let p = v.prompt_from_ids(&[id]).unwrap();
            for m in [Metric::L2, Metric::Cosine] {
                assert_eq!(v.project(&v.embed(&p), m).unwrap().token_ids(), &[id]);
            }
        }
    }

    #[test]
    fn project_never_returns_special() {
        let v = tiny();
        // exactly the <pad> row: the special token is excluded, so a tie among
        // the four equidistant words resolves to the lowest id
        let theta = PromptEmbedding::new(array![[0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(v.project(&theta, Metric::L2).unwrap().token_ids(), &[1]);
        assert_eq!(v.project(&theta, Metric::Cosine).unwrap().token_ids(), &[1]);
    }

    #[test]
    fn cosine_scale_invariance_example() {
        let v = tiny();
        let theta = PromptEmbedding::new(array![[0.0, 2.0, 0.0]]).unwrap();
        assert_eq!(v.project(&theta, Metric::Cosine).unwrap().token_ids(), &[2]);
    }

    #[test]
    fn cosine_zero_row_errors() {
        let v = tiny();
        let theta = PromptEmbedding::new(array![[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            v.project(&theta, Metric::Cosine),
            Err(VocabError::ZeroVectorUnderCosine(1))
        ));
        assert!(v.project(&theta, Metric::L2).is_ok());
    }

    #[test]
    fn render_examples() {
        let v = tiny();
        assert_eq!(v.render(&v.prompt_from_ids(&[1, 2]).unwrap()), "a photo");
        assert_eq!(v.render(&v.prompt_from_ids(&[3]).unwrap()), "of");
        let t = v.tokenize("a photo of dog").unwrap();
        assert_eq!(v.render(&t.prompt), "a photo of dog");
    }

    #[test]
    fn rejects_bad_tables() {
        let toks = vec!["a".to_string(), "a".to_string()];
        assert!(matches!(
            Vocabulary::new(toks, Array2::zeros((2, 2)), BTreeSet::new()),
            Err(VocabError::DuplicateToken(_))
        ));
        let toks = vec!["a".to_string()];
        assert!(matches!(
            Vocabulary::new(toks.clone(), Array2::zeros((2, 2)), BTreeSet::new()),
            Err(VocabError::RowCount { .. })
        ));
        assert!(matches!(
            Vocabulary::new(toks.clone(), array![[f64::NAN]], BTreeSet::new()),
            Err(VocabError::NonFinite(_))
        ));
        assert!(matches!(
            Vocabulary::new(toks, array![[1.0]], BTreeSet::from([3])),
            Err(VocabError::InvalidId(3))
        ));
    }

    #[test]
    fn random_vocab_is_seeded_and_unit_norm() {
        let a = Vocabulary::random(7, 300, 8).unwrap();
        let b = Vocabulary::random(7, 300, 8).unwrap();
        assert_eq!(a.tokens(), b.tokens());
        assert_eq!(a.embeddings(), b.embeddings());
        for r in a.embeddings().rows() {
            assert!((r.dot(&r) - 1.0).abs() < 1e-12);
        }
        assert!(a.is_special(0));
        assert_eq!(a.id_of("photo"), Some(2));
    }

    #[test]
    fn synthetic_words_are_unique() {
        let words: std::collections::HashSet<_> = (0..6000).map(synthetic_word).collect();
        assert_eq!(words.len(), 6000);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = Vocabulary::random(3, 50, 5).unwrap();
        let (t, m) = (dir.path().join("tokens.txt"), dir.path().join("emb.bin"));
        v.save(&t, &m).unwrap();
        let w = Vocabulary::load(&t, &m).unwrap();
        assert_eq!(v.tokens(), w.tokens());
        assert_eq!(v.embeddings(), w.embeddings());
        assert_eq!(v.special_ids(), w.special_ids());
    }

    #[test]
    fn neighbors_exclude_self_and_special() {
        let v = Vocabulary::random(3, 50, 5).unwrap();
        let n = v.neighbors(5, 4);
        assert_eq!(n.len(), 4);
        assert!(!n.contains(&5) && !n.contains(&0));
    }

    proptest! {
        #[test]
        fn project_embed_round_trip(ids in prop::collection::vec(1usize..120, 1..8)) {
            let v = Vocabulary::random(11, 120, 12).unwrap();
            let p = v.prompt_from_ids(&ids).unwrap();
            for m in [Metric::L2, Metric::Cosine] {
                prop_assert_eq!(&v.project(&v.embed(&p), m).unwrap(), &p);
            }
        }

        #[test]
        fn cosine_projection_is_scale_invariant(
            seed in 0u64..1000,
            scale in prop::sample::select(vec![0.5f64, 2.0, 4.0, 8.0]),
        ) {
            let v = Vocabulary::random(5, 80, 6).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = random_unit_rows(&mut rng, 3, 6);
            let theta = PromptEmbedding::new(rows.clone()).unwrap();
            let scaled = PromptEmbedding::new(rows * scale).unwrap();
            prop_assert_eq!(
                v.project(&theta, Metric::Cosine).unwrap(),
                v.project(&scaled, Metric::Cosine).unwrap()
            );
        }
    }
}
