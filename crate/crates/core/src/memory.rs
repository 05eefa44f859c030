//! Store of previously reported issues with exact top-k similarity search.
//!
//! Records persist as append-only JSON Lines (`issues.jsonl`). Vectors are
//! derived: the vocabulary is refitted over every stored summary whenever a
//! record is added or the store is loaded.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{append_jsonl, read_jsonl, CorpusError};
use crate::vectorizer::{cosine_similarity, FeatureVector, FitOptions, Vocabulary};

/// Default number of neighbours returned by [`IssueStore::top_k_similar`].
pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("issue summary is empty")]
    EmptySummary,

    #[error("duplicate issue id `{0}` in store")]
    DuplicateIssue(String),

    #[error(transparent)]
    Storage(#[from] CorpusError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueRecord {
    pub issue_id: String,
    pub summary: String,
    pub finding_id: String,
    pub decided_at: u64,
    #[serde(skip)]
    pub vector: FeatureVector,
}

#[derive(Debug, Default)]
pub struct IssueStore {
    path: Option<PathBuf>,
    records: Vec<IssueRecord>,
    vocab: Option<Vocabulary>,
}

impl IssueStore {
    /// A store that lives only in memory.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or lazily creates) a store backed by `path`.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, MemoryError> {
        let path = path.into();
        let mut records: Vec<IssueRecord> = Vec::new();
        if path.exists() {
            for (_, record) in read_jsonl::<IssueRecord>(&path)? {
                if records.iter().any(|r| r.issue_id == record.issue_id) {
                    return Err(MemoryError::DuplicateIssue(record.issue_id));
                }
                records.push(record);
            }
        }
        let mut store = Self {
            path: Some(path),
            records,
            vocab: None,
        };
        store.reindex();
        Ok(store)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[IssueRecord] {
        &self.records
    }

    /// Stores a reported issue and makes it immediately searchable.
    pub fn record_issue(&mut self, summary: &str, finding_id: &str) -> Result<IssueRecord, MemoryError> {
        self.record_issue_at(summary, finding_id, crate::unix_now())
    }

    pub fn record_issue_at(
        &mut self,
        summary: &str,
        finding_id: &str,
        decided_at: u64,
    ) -> Result<IssueRecord, MemoryError> {
        let summary = summary.trim();
        if summary.is_empty() {
            return Err(MemoryError::EmptySummary);
        }
        let mut seq = self.records.len() + 1;
        let mut issue_id = format!("issue-{seq:04}");
        while self.records.iter().any(|r| r.issue_id == issue_id) {
            seq += 1;
            issue_id = format!("issue-{seq:04}");
        }
        let record = IssueRecord {
            issue_id,
            summary: summary.to_string(),
            finding_id: finding_id.to_string(),
            decided_at,
            vector: FeatureVector::zero(),
        };
        if let Some(path) = &self.path {
            append_jsonl(path, &record)?;
        }
        self.records.push(record);
        self.reindex();
        Ok(self.records.last().cloned().expect("just pushed"))
    }

    fn reindex(&mut self) {
        let summaries: Vec<&str> = self.records.iter().map(|r| r.summary.as_str()).collect();
        self.vocab = Vocabulary::fit_with(&summaries, FitOptions::smoothed()).ok();
        if let Some(vocab) = &self.vocab {
            for record in &mut self.records {
                record.vector = vocab.transform(&record.summary);
            }
        }
    }

    /// Up to `k` stored issues ranked by cosine similarity to `query`,
    /// most similar first; equal similarities rank newer records first.
    pub fn top_k_similar(&self, query: &str, k: usize) -> Vec<(IssueRecord, f64)> {
        let Some(vocab) = &self.vocab else {
            return Vec::new();
        };
        let q = vocab.transform(query);
        let mut scored: Vec<(usize, f64)> = self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| (i, cosine_similarity(&q, &r.vector)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.0.cmp(&a.0)));
        scored
            .into_iter()
            .take(k)
            .map(|(i, s)| (self.records[i].clone(), s))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_store_returns_nothing() {
        let store = IssueStore::in_memory();
        assert!(store.top_k_similar("anything", 10).is_empty());
    }

    #[test]
    fn records_get_distinct_ids() {
        let mut store = IssueStore::in_memory();
        let a = store.record_issue("TypeError missing for proto setter", "f1").unwrap();
        assert_eq!(store.len(), 1);
        let b = store.record_issue("parser rejects ASI after return", "f2").unwrap();
        assert_eq!(store.len(), 2);
        assert_ne!(a.issue_id, b.issue_id);
        assert!(matches!(store.record_issue("  ", "f3"), Err(MemoryError::EmptySummary)));
    }

    #[test]
    fn identical_query_ranks_first_with_similarity_one() {
        let mut store = IssueStore::in_memory();
        let s = "String.prototype.search ignores non-callable Symbol.search";
        store.record_issue(s, "f1").unwrap();
        let hits = store.top_k_similar(s, 10);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].1, 1.0);

        store.record_issue("write() in the shell masks errors", "f2").unwrap();
        let hits = store.top_k_similar(s, 10);
        assert_eq!(hits[0].0.finding_id, "f1");
        assert_eq!(hits[0].1, 1.0);
    }

    #[test]
    fn ties_prefer_newer_records() {
        let mut store = IssueStore::in_memory();
        store.record_issue_at("alpha beta", "old", 1).unwrap();
        store.record_issue_at("alpha beta", "new", 2).unwrap();
        let hits = store.top_k_similar("alpha beta", 2);
        assert_eq!(hits[0].0.finding_id, "new");
        assert_eq!(hits[1].0.finding_id, "old");
    }

    #[test]
    fn store_survives_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("issues.jsonl");
        {
            let mut store = IssueStore::open(&path).unwrap();
            store.record_issue("proto access throws TypeError", "f1").unwrap();
            store.record_issue("ASI inside object literal", "f2").unwrap();
        }
        let store = IssueStore::open(&path).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(store.records()[1].summary, "ASI inside object literal");
        let hits = store.top_k_similar("ASI inside object literal", 1);
        assert_eq!(hits[0].0.issue_id, "issue-0002");
        let line = std::fs::read_to_string(&path).unwrap();
        assert!(line.lines().next().unwrap().starts_with(r#"{"issue_id":"issue-0001","summary":"#));
    }
}
