//! Finding and label data model plus their JSON Lines persistence.
//!
//! A findings file (`*.findings.jsonl`) holds one [`Finding`] per line and a
//! labels file (`*.labels.jsonl`) holds one [`Label`] per line. Labels live in
//! their own file because they are produced after the findings, usually one
//! medoid at a time.
//!
//! Divergence is decided on text alone: a finding is differential when at
//! least two engines disagree on `(stdout, stderr)`. Findings whose engines
//! differ only in exit code are *not* differential; exit codes are used for
//! grouping instead.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exit code recorded for an engine run that hit its timeout.
pub const TIMEOUT_EXIT_CODE: i32 = -1;

/// Exit code recorded when the engine binary could not be spawned at all.
pub const SPAWN_FAILURE_EXIT_CODE: i32 = -2;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate finding id `{id}` (lines {first_line} and {line})")]
    DuplicateId {
        id: String,
        first_line: usize,
        line: usize,
    },

    #[error("duplicate label for finding `{0}`")]
    DuplicateLabel(String),

    #[error("label for `{0}` has verdict BUG but an empty root cause")]
    MissingRootCause(String),

    #[error("label references unknown finding `{0}`")]
    UnknownFinding(String),

    #[error("finding `{id}` has {count} engine result(s); at least 2 are required")]
    TooFewEngines { id: String, count: usize },
}

/// Observation of one engine on one snippet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineResult {
    pub engine_name: String,
    pub stdout: String,
    pub stderr: String,
    pub exit_code: i32,
    pub wall_time_ms: u64,
    pub timed_out: bool,
}

impl EngineResult {
    /// Synthetic result for an engine that could not be started.
    pub fn spawn_failure(engine_name: impl Into<String>) -> Self {
        Self {
            engine_name: engine_name.into(),
            stdout: String::new(),
            stderr: String::new(),
            exit_code: SPAWN_FAILURE_EXIT_CODE,
            wall_time_ms: 0,
            timed_out: false,
        }
    }
}

/// A snippet together with the result of every configured engine, in
/// configuration order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub id: String,
    pub snippet: String,
    pub engine_results: Vec<EngineResult>,
    pub created_at: u64,
}

impl Finding {
    pub fn exit_codes(&self) -> Vec<i32> {
        self.engine_results.iter().map(|r| r.exit_code).collect()
    }

    /// True iff at least one engine's `(stdout, stderr)` pair differs from
    /// another's. Exit codes are ignored.
    pub fn is_differential(&self) -> Result<bool, CorpusError> {
        is_differential(self)
    }
}

/// See [`Finding::is_differential`].
pub fn is_differential(finding: &Finding) -> Result<bool, CorpusError> {
    let results = &finding.engine_results;
    if results.len() < 2 {
        return Err(CorpusError::TooFewEngines {
            id: finding.id.clone(),
            count: results.len(),
        });
    }
    let first = &results[0];
    Ok(results[1..]
        .iter()
        .any(|r| r.stdout != first.stdout || r.stderr != first.stderr))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LabelVerdict {
    Bug,
    NoBug,
}

impl LabelVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelVerdict::Bug => "BUG",
            LabelVerdict::NoBug => "NO_BUG",
        }
    }
}

impl std::str::FromStr for LabelVerdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().replace('-', "_").as_str() {
            "BUG" => Ok(LabelVerdict::Bug),
            "NO_BUG" | "NOBUG" => Ok(LabelVerdict::NoBug),
            other => Err(format!("expected BUG or NO_BUG, got `{other}`")),
        }
    }
}

/// Ground-truth (or propagated) label for one finding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub finding_id: String,
    pub verdict: LabelVerdict,
    pub root_cause: String,
    /// Set by the interactive labeler; absent for imported or propagated labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labeled_at: Option<u64>,
}

impl Label {
    pub fn new(
        finding_id: impl Into<String>,
        verdict: LabelVerdict,
        root_cause: impl Into<String>,
    ) -> Self {
        Self {
            finding_id: finding_id.into(),
            verdict,
            root_cause: root_cause.into(),
            labeled_at: None,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.verdict == LabelVerdict::Bug && self.root_cause.trim().is_empty() {
            return Err(CorpusError::MissingRootCause(self.finding_id.clone()));
        }
        Ok(())
    }
}

/// Reads a JSON Lines file. Blank lines are skipped; any other line must hold
/// exactly one JSON value of type `T`. Line numbers in errors are 1-based.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push((idx + 1, value));
    }
    Ok(out)
}

/// Writes `items` as JSON Lines (LF endings), replacing any existing file.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = BufWriter::new(File::create(path).map_err(io_err)?);
    for item in items {
        serde_json::to_writer(&mut writer, item).map_err(|e| io_err(e.into()))?;
        writer.write_all(b"\n").map_err(io_err)?;
    }
    writer.flush().map_err(io_err)
}

/// Appends one JSON line to `path`, creating the file if needed.
pub fn append_jsonl<T: Serialize>(path: &Path, item: &T) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err)?;
    let mut line = serde_json::to_vec(item).map_err(|e| io_err(e.into()))?;
    line.push(b'\n');
    file.write_all(&line).map_err(io_err)?;
    file.flush().map_err(io_err)
}

/// Loads findings in file order, rejecting duplicate ids.
pub fn load_corpus(path: &Path) -> Result<Vec<Finding>, CorpusError> {
    let rows: Vec<(usize, Finding)> = read_jsonl(path)?;
    let mut seen = std::collections::HashMap::new();
    let mut findings = Vec::with_capacity(rows.len());
    for (line, finding) in rows {
        if let Some(&first_line) = seen.get(&finding.id) {
            return Err(CorpusError::DuplicateId {
                id: finding.id,
                first_line,
                line,
            });
        }
        seen.insert(finding.id.clone(), line);
        findings.push(finding);
    }
    Ok(findings)
}

pub fn save_corpus(findings: &[Finding], path: &Path) -> Result<(), CorpusError> {
    write_jsonl(path, findings)
}

/// Loads labels, validating root causes and rejecting two labels for the same
/// finding.
pub fn load_labels(path: &Path) -> Result<Vec<Label>, CorpusError> {
    let rows: Vec<(usize, Label)> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    let mut labels = Vec::with_capacity(rows.len());
    for (_, label) in rows {
        label.validate()?;
        if !seen.insert(label.finding_id.clone()) {
            return Err(CorpusError::DuplicateLabel(label.finding_id));
        }
        labels.push(label);
    }
    Ok(labels)
}

pub fn save_labels(labels: &[Label], path: &Path) -> Result<(), CorpusError> {
    for label in labels {
        label.validate()?;
    }
    write_jsonl(path, labels)
}

/// Checks that every label points at a finding in `findings`.
pub fn check_label_references(labels: &[Label], findings: &[Finding]) -> Result<(), CorpusError> {
    let ids: HashSet<&str> = findings.iter().map(|f| f.id.as_str()).collect();
    match labels.iter().find(|l| !ids.contains(l.finding_id.as_str())) {
        Some(l) => Err(CorpusError::UnknownFinding(l.finding_id.clone())),
        None => Ok(()),
    }
}
