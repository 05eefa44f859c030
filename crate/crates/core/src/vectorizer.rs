//! Sparse TF-IDF vectors and cosine distance.
//!
//! Weights follow `w(t, d) = tf(t, d) * ln(N / df(t))` where `tf` is the raw
//! count of `t` in `d`, `N` the number of fitted documents and `df(t)` the
//! number of documents containing `t`. A term present in every document gets
//! weight zero and is not stored.
//!
//! Tokens are lowercase alphanumeric runs of at least two characters. No
//! stop-word list is applied.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Finding;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VectorizeError {
    #[error("cannot fit a vocabulary on an empty corpus")]
    EmptyCorpus,
}

/// Tokens shorter than this are dropped by default.
pub const DEFAULT_MIN_TOKEN_LEN: usize = 2;

/// Splits `text` into lowercase alphanumeric tokens, dropping tokens shorter
/// than [`DEFAULT_MIN_TOKEN_LEN`] characters.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_min(text, DEFAULT_MIN_TOKEN_LEN)
}

pub fn tokenize_min(text: &str, min_len: usize) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && t.chars().count() >= min_len)
        .map(str::to_lowercase)
        .collect()
}

/// The text a finding contributes to the corpus: each engine's stdout and
/// stderr in engine order, preceded by a delimiter line naming the engine.
pub fn finding_document(finding: &Finding) -> String {
    let mut doc = String::new();
    for result in &finding.engine_results {
        doc.push_str("=== engine ");
        doc.push_str(&result.engine_name);
        doc.push_str(" ===\n");
        doc.push_str(&result.stdout);
        doc.push('\n');
        doc.push_str(&result.stderr);
        doc.push('\n');
    }
    doc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitOptions {
    pub weighting: IdfWeighting,
    pub min_token_len: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            weighting: IdfWeighting::Plain,
            min_token_len: DEFAULT_MIN_TOKEN_LEN,
        }
    }
}

impl FitOptions {
    pub fn smoothed() -> Self {
        Self {
            weighting: IdfWeighting::Smoothed,
            ..Self::default()
        }
    }
}

/// How inverse document frequency is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum IdfWeighting {
    /// `ln(N / df)`, unsmoothed.
    #[default]
    Plain,
    /// `ln((1 + N) / (1 + df)) + 1`. Keeps terms shared by every document
    /// non-zero, which retrieval over tiny stores needs.
    Smoothed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    /// Column index per term. Indices are assigned in lexicographic term
    /// order so fitting is independent of document order.
    pub term_to_index: BTreeMap<String, usize>,
    pub document_frequency: Vec<usize>,
    pub corpus_size: usize,
    pub options: FitOptions,
    idf: Vec<f64>,
}

impl Vocabulary {
    /// Fits a vocabulary with unsmoothed IDF and the default tokenizer.
    pub fn fit<S: AsRef<str>>(documents: &[S]) -> Result<Self, VectorizeError> {
        Self::fit_with(documents, FitOptions::default())
    }

    pub fn fit_with<S: AsRef<str>>(
        documents: &[S],
        options: FitOptions,
    ) -> Result<Self, VectorizeError> {
        if documents.is_empty() {
            return Err(VectorizeError::EmptyCorpus);
        }
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for doc in documents {
            let unique: HashSet<String> = tokenize_min(doc.as_ref(), options.min_token_len)
                .into_iter()
                .collect();
            for term in unique {
                *df.entry(term).or_default() += 1;
            }
        }
        let n = documents.len();
        let mut term_to_index = BTreeMap::new();
        let mut document_frequency = Vec::with_capacity(df.len());
        for (idx, (term, count)) in df.into_iter().enumerate() {
            term_to_index.insert(term, idx);
            document_frequency.push(count);
        }
        let idf = document_frequency
            .iter()
            .map(|&d| idf_value(options.weighting, n, d))
            .collect();
        Ok(Self {
            term_to_index,
            document_frequency,
            corpus_size: n,
            options,
            idf,
        })
    }

    pub fn len(&self) -> usize {
        self.term_to_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.term_to_index.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.term_to_index.get(term).copied()
    }

    pub fn document_frequency_of(&self, term: &str) -> Option<usize> {
        self.index_of(term).map(|i| self.document_frequency[i])
    }

    pub fn idf(&self, index: usize) -> f64 {
        self.idf[index]
    }

    /// TF-IDF vector of `document`. Out-of-vocabulary terms are ignored and an
    /// empty document yields the zero vector.
    pub fn transform(&self, document: &str) -> FeatureVector {
        let mut counts: HashMap<usize, u64> = HashMap::new();
        for token in tokenize_min(document, self.options.min_token_len) {
            if let Some(idx) = self.index_of(&token) {
                *counts.entry(idx).or_default() += 1;
            }
        }
        FeatureVector::from_pairs(
            counts
                .into_iter()
                .map(|(idx, tf)| (idx, tf as f64 * self.idf[idx])),
        )
    }
}

fn idf_value(weighting: IdfWeighting, n: usize, df: usize) -> f64 {
    match weighting {
        IdfWeighting::Plain => (n as f64 / df as f64).ln(),
        IdfWeighting::Smoothed => ((1 + n) as f64 / (1 + df) as f64).ln() + 1.0,
    }
}

/// Sparse non-negative vector. Entries are sorted by column and never zero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    entries: Vec<(usize, f64)>,
    norm: f64,
}

impl FeatureVector {
    /// Builds a vector from `(column, weight)` pairs. Zero weights are
    /// dropped; duplicate columns are summed.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut map: BTreeMap<usize, f64> = BTreeMap::new();
        for (idx, w) in pairs {
            *map.entry(idx).or_default() += w;
        }
        let entries: Vec<(usize, f64)> = map.into_iter().filter(|&(_, w)| w != 0.0).collect();
        let norm = entries.iter().map(|&(_, w)| w * w).sum::<f64>().sqrt();
        Self { entries, norm }
    }

    pub fn from_dense(values: &[f64]) -> Self {
        Self::from_pairs(values.iter().copied().enumerate())
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0.0)
    }

    /// One past the largest stored column (0 for the zero vector).
    pub fn dimension(&self) -> usize {
        self.entries.last().map(|&(i, _)| i + 1).unwrap_or(0)
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        let (a, b) = (&self.entries, &other.entries);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|&(i, w)| w * dense.get(i).copied().unwrap_or(0.0))
            .sum()
    }

    pub fn scaled(&self, factor: f64) -> FeatureVector {
        FeatureVector::from_pairs(self.entries.iter().map(|&(i, w)| (i, w * factor)))
    }

    /// Unit-length copy; the zero vector stays zero.
    pub fn normalized(&self) -> FeatureVector {
        if self.norm == 0.0 {
            return self.clone();
        }
        self.scaled(1.0 / self.norm)
    }

    pub fn to_dense(&self, dimension: usize) -> Vec<f64> {
        let mut out = vec![0.0; dimension];
        for &(i, w) in &self.entries {
            if i < dimension {
                out[i] = w;
            }
        }
        out
    }
}

/// `u . v / (|u| |v|)`, or 0 when either vector is zero.
pub fn cosine_similarity(u: &FeatureVector, v: &FeatureVector) -> f64 {
    if u.norm == 0.0 || v.norm == 0.0 {
        return 0.0;
    }
    if u.entries == v.entries {
        return 1.0;
    }
    (u.dot(v) / (u.norm * v.norm)).clamp(-1.0, 1.0)
}

/// `1 - cosine_similarity(u, v)`. A zero vector is at distance 1 from
/// everything, itself included.
pub fn cosine_distance(u: &FeatureVector, v: &FeatureVector) -> f64 {
    1.0 - cosine_similarity(u, v)
}

/// Row of the optional vector debug dump.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VectorDump {
    pub finding_id: String,
    pub entries: Vec<(usize, f64)>,
}
