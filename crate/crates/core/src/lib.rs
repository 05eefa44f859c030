//! Core pipeline for triaging differential findings across language runtimes.
//!
//! The crate covers everything that does not need a language model:
//!
//! - [`corpus`]: the finding/label data model and its JSON Lines files
//! - [`runner`]: executing snippets on engine binaries and building findings
//! - [`vectorizer`]: TF-IDF vectors over finding logs plus cosine distance
//! - [`clusterer`]: exit-code grouping, k-means and silhouette-based k selection
//! - [`propagation`]: medoid label propagation and its accuracy evaluation
//! - [`memory`]: the store of reported issues and top-k similar retrieval
//! - [`specindex`]: a searchable index over a language specification dump

pub mod clusterer;
pub mod corpus;
pub mod memory;
pub mod propagation;
pub mod runner;
pub mod specindex;
pub mod vectorizer;

pub use clusterer::{ExitPattern, KmeansError};
pub use corpus::{CorpusError, EngineResult, Finding, Label, LabelVerdict};
pub use runner::{EngineConfig, RunError};
pub use vectorizer::{FeatureVector, Vocabulary};

use std::time::{SystemTime, UNIX_EPOCH};

/// Seconds since the Unix epoch, saturating to zero for clocks set before it.
pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
