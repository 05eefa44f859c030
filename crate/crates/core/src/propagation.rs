//! Medoid-based label propagation.
//!
//! Each cluster is represented by its medoid: the member with the smallest
//! cosine distance to the arithmetic mean of the cluster's (unnormalised)
//! TF-IDF vectors. Only medoids need a human label; every other member
//! inherits it. Propagation accuracy is the percentage of findings whose
//! inherited label matches ground truth.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clusterer::{default_k_range, group_by_exit_pattern, select_k, KmeansError};
use crate::corpus::{Finding, Label};
use crate::vectorizer::{cosine_distance, finding_document, FeatureVector, VectorizeError, Vocabulary};

#[derive(Debug, Error)]
pub enum PropagationError {
    #[error("cannot take the medoid of an empty cluster")]
    EmptyCluster,

    #[error("no label for medoid `{medoid_id}` of cluster {pattern_key}/{cluster_id}")]
    MissingMedoidLabel {
        pattern_key: String,
        cluster_id: usize,
        medoid_id: String,
    },

    #[error("finding `{0}` appears in more than one cluster")]
    OverlappingClusters(String),

    #[error("ground truth is missing for {} finding(s): {}", .0.len(), .0.join(", "))]
    CoverageGap(Vec<String>),

    #[error("nothing to evaluate")]
    NothingToEvaluate,

    #[error("{} finding(s) have no label: {}", .0.len(), .0.join(", "))]
    Unlabeled(Vec<String>),

    #[error(transparent)]
    Clustering(#[from] KmeansError),

    #[error(transparent)]
    Vectorize(#[from] VectorizeError),
}

/// Index of the member closest (cosine distance) to the mean vector. Ties go
/// to the lowest index.
pub fn medoid(cluster: &[FeatureVector]) -> Result<usize, PropagationError> {
    if cluster.is_empty() {
        return Err(PropagationError::EmptyCluster);
    }
    let centroid = mean_vector(cluster);
    let mut best = (0, f64::INFINITY);
    for (i, v) in cluster.iter().enumerate() {
        let d = cosine_distance(&centroid, v);
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best.0)
}

fn mean_vector(vectors: &[FeatureVector]) -> FeatureVector {
    let scale = 1.0 / vectors.len() as f64;
    let mut sums: BTreeMap<usize, f64> = BTreeMap::new();
    for v in vectors {
        for &(i, w) in v.entries() {
            *sums.entry(i).or_default() += w;
        }
    }
    FeatureVector::from_pairs(sums.into_iter().map(|(i, w)| (i, w * scale)))
}

/// One row of a cluster report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub pattern_key: String,
    pub cluster_id: usize,
    pub finding_ids: Vec<String>,
    pub medoid_id: String,
    /// Number of clusters chosen for this pattern.
    pub k: usize,
    /// Mean silhouette of the pattern's clustering; absent when k = 1.
    pub silhouette: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterOptions {
    /// Refine each exit pattern with k-means; otherwise one cluster per pattern.
    pub refine: bool,
    pub k_max: usize,
    pub seed: u64,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self {
            refine: true,
            k_max: crate::clusterer::DEFAULT_K_MAX,
            seed: 42,
        }
    }
}

/// TF-IDF vectors for every finding, fitted over the whole corpus.
pub fn vectorize_findings(findings: &[Finding]) -> Result<(Vocabulary, Vec<FeatureVector>), VectorizeError> {
    let docs: Vec<String> = findings.iter().map(finding_document).collect();
    let vocab = Vocabulary::fit(&docs)?;
    let vectors = docs.iter().map(|d| vocab.transform(d)).collect();
    Ok((vocab, vectors))
}

/// Groups findings by exit pattern, optionally refines each group with
/// k-means, and picks a medoid per cluster. Records come out ordered by
/// pattern key then cluster id.
pub fn build_clusters(
    findings: &[Finding],
    options: ClusterOptions,
) -> Result<Vec<ClusterRecord>, PropagationError> {
    if findings.is_empty() {
        return Ok(Vec::new());
    }
    let (_, vectors) = vectorize_findings(findings)?;
    build_clusters_with_vectors(findings, &vectors, options)
}

pub fn build_clusters_with_vectors(
    findings: &[Finding],
    vectors: &[FeatureVector],
    options: ClusterOptions,
) -> Result<Vec<ClusterRecord>, PropagationError> {
    let groups = group_by_exit_pattern(findings)?;
    let mut records = Vec::new();
    for (pattern, indices) in groups {
        let group_vectors: Vec<FeatureVector> = indices.iter().map(|&i| vectors[i].clone()).collect();
        let range = default_k_range(indices.len(), options.k_max).filter(|_| options.refine);
        let (k, silhouette, members) = match range {
            Some(range) => {
                let selection = select_k(&group_vectors, range, options.seed)?;
                (selection.k, selection.silhouette, selection.clustering.members())
            }
            None => (1, None, vec![(0..indices.len()).collect()]),
        };
        for (cluster_id, local) in members.into_iter().enumerate() {
            let cluster_vectors: Vec<FeatureVector> =
                local.iter().map(|&i| group_vectors[i].clone()).collect();
            let m = medoid(&cluster_vectors)?;
            records.push(ClusterRecord {
                pattern_key: pattern.key().to_string(),
                cluster_id,
                finding_ids: local.iter().map(|&i| findings[indices[i]].id.clone()).collect(),
                medoid_id: findings[indices[local[m]]].id.clone(),
                k,
                silhouette,
            });
        }
    }
    Ok(records)
}

/// Clusters ordered for the human labeler: largest first, then by pattern
/// key and cluster id.
pub fn medoid_worklist(records: &[ClusterRecord]) -> Vec<&ClusterRecord> {
    let mut list: Vec<&ClusterRecord> = records.iter().collect();
    list.sort_by(|a, b| {
        b.finding_ids
            .len()
            .cmp(&a.finding_ids.len())
            .then_with(|| a.pattern_key.cmp(&b.pattern_key))
            .then_with(|| a.cluster_id.cmp(&b.cluster_id))
    });
    list
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    /// BUG vs NO_BUG only.
    Binary,
    /// Verdict and root cause (case-insensitive, trimmed).
    RootCause,
}

impl std::str::FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" => Ok(Granularity::Binary),
            "root-cause" | "root_cause" => Ok(Granularity::RootCause),
            other => Err(format!("unknown granularity `{other}` (binary|root-cause)")),
        }
    }
}

fn normalize_cause(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Whether `predicted` agrees with `truth` at `granularity`. A root-cause match
/// also requires the verdicts to agree.
pub fn labels_match(predicted: &Label, truth: &Label, granularity: Granularity) -> bool {
    let verdict = predicted.verdict == truth.verdict;
    match granularity {
        Granularity::Binary => verdict,
        Granularity::RootCause => {
            verdict && normalize_cause(&predicted.root_cause) == normalize_cause(&truth.root_cause)
        }
    }
}

/// Matched-over-total ratio kept exact until display.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accuracy {
    pub matched: usize,
    pub total: usize,
}

impl Accuracy {
    pub fn percent(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        100.0 * self.matched as f64 / self.total as f64
    }
}

/// Percentage of propagated labels that agree with ground truth.
pub fn propagation_accuracy(
    propagated: &BTreeMap<String, Label>,
    truth: &HashMap<String, Label>,
    granularity: Granularity,
) -> Result<Accuracy, PropagationError> {
    if propagated.is_empty() {
        return Err(PropagationError::NothingToEvaluate);
    }
    let missing: Vec<String> = propagated
        .keys()
        .filter(|id| !truth.contains_key(*id))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(PropagationError::CoverageGap(missing));
    }
    let matched = propagated
        .iter()
        .filter(|(id, label)| labels_match(label, &truth[*id], granularity))
        .count();
    Ok(Accuracy {
        matched,
        total: propagated.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationResult {
    /// `(pattern_key, cluster_id, medoid_id)` per cluster.
    pub medoids: Vec<(String, usize, String)>,
    pub propagated: BTreeMap<String, Label>,
    /// Pattern of every propagated finding.
    pub pattern_of: BTreeMap<String, String>,
    pub accuracy: Option<f64>,
    pub per_pattern_accuracy: BTreeMap<String, f64>,
}

impl PropagationResult {
    /// Scores the propagation against `truth`, filling `accuracy` and
    /// `per_pattern_accuracy`. Returns the overall ratio.
    pub fn evaluate(
        &mut self,
        truth: &HashMap<String, Label>,
        granularity: Granularity,
    ) -> Result<Accuracy, PropagationError> {
        let overall = propagation_accuracy(&self.propagated, truth, granularity)?;
        let mut per: BTreeMap<String, Accuracy> = BTreeMap::new();
        for (id, label) in &self.propagated {
            let entry = per
                .entry(self.pattern_of[id].clone())
                .or_insert(Accuracy { matched: 0, total: 0 });
            entry.total += 1;
            if labels_match(label, &truth[id], granularity) {
                entry.matched += 1;
            }
        }
        self.accuracy = Some(overall.percent());
        self.per_pattern_accuracy = per.into_iter().map(|(k, a)| (k, a.percent())).collect();
        Ok(overall)
    }

    pub fn labels(&self) -> Vec<Label> {
        self.propagated.values().cloned().collect()
    }
}

/// Copies each medoid's label (verdict and root cause) to every member of its
/// cluster.
pub fn propagate(
    clusters: &[ClusterRecord],
    medoid_labels: &HashMap<String, Label>,
) -> Result<PropagationResult, PropagationError> {
    let mut result = PropagationResult {
        medoids: Vec::with_capacity(clusters.len()),
        propagated: BTreeMap::new(),
        pattern_of: BTreeMap::new(),
        accuracy: None,
        per_pattern_accuracy: BTreeMap::new(),
    };
    for cluster in clusters {
        let source = medoid_labels.get(&cluster.medoid_id).ok_or_else(|| {
            PropagationError::MissingMedoidLabel {
                pattern_key: cluster.pattern_key.clone(),
                cluster_id: cluster.cluster_id,
                medoid_id: cluster.medoid_id.clone(),
            }
        })?;
        result.medoids.push((
            cluster.pattern_key.clone(),
            cluster.cluster_id,
            cluster.medoid_id.clone(),
        ));
        for id in &cluster.finding_ids {
            let label = Label::new(id.clone(), source.verdict, source.root_cause.clone());
            if result.propagated.insert(id.clone(), label).is_some() {
                return Err(PropagationError::OverlappingClusters(id.clone()));
            }
            result.pattern_of.insert(id.clone(), cluster.pattern_key.clone());
        }
    }
    Ok(result)
}

/// One line of the strategy comparison, per exit pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternRow {
    pub pattern: String,
    pub findings: usize,
    pub root_causes: usize,
    pub baseline: f64,
    pub kmeans: f64,
    pub optimal_k: usize,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    /// Root-cause accuracy with one cluster per exit pattern.
    pub baseline_accuracy: f64,
    /// Root-cause accuracy after k-means refinement.
    pub kmeans_accuracy: f64,
    pub binary_baseline_accuracy: f64,
    pub binary_kmeans_accuracy: f64,
    pub gain: f64,
    pub rows: Vec<PatternRow>,
}

/// Compares one-cluster-per-pattern propagation with k-means refinement on a
/// fully labelled corpus. Medoid labels are looked up in `labels`.
pub fn compare_strategies(
    findings: &[Finding],
    labels: &[Label],
    k_max: usize,
    seed: u64,
) -> Result<StrategyReport, PropagationError> {
    let truth: HashMap<String, Label> = labels
        .iter()
        .map(|l| (l.finding_id.clone(), l.clone()))
        .collect();
    let unlabeled: Vec<String> = findings
        .iter()
        .filter(|f| !truth.contains_key(&f.id))
        .map(|f| f.id.clone())
        .collect();
    if !unlabeled.is_empty() {
        return Err(PropagationError::Unlabeled(unlabeled));
    }
    if findings.is_empty() {
        return Err(PropagationError::NothingToEvaluate);
    }
    let (_, vectors) = vectorize_findings(findings)?;
    let baseline_clusters = build_clusters_with_vectors(
        findings,
        &vectors,
        ClusterOptions { refine: false, k_max, seed },
    )?;
    let refined_clusters = build_clusters_with_vectors(
        findings,
        &vectors,
        ClusterOptions { refine: true, k_max, seed },
    )?;

    let mut baseline = propagate(&baseline_clusters, &truth)?;
    let mut refined = propagate(&refined_clusters, &truth)?;
    let binary_baseline = baseline.evaluate(&truth, Granularity::Binary)?;
    let binary_refined = refined.evaluate(&truth, Granularity::Binary)?;
    let base_acc = baseline.evaluate(&truth, Granularity::RootCause)?;
    let refined_acc = refined.evaluate(&truth, Granularity::RootCause)?;

    let mut sizes: BTreeMap<&str, (usize, BTreeSet<String>, usize)> = BTreeMap::new();
    for (id, pattern) in &baseline.pattern_of {
        let entry = sizes.entry(pattern.as_str()).or_default();
        entry.0 += 1;
        entry.1.insert(normalize_cause(&truth[id].root_cause));
    }
    for record in &refined_clusters {
        sizes.entry(record.pattern_key.as_str()).or_default().2 = record.k;
    }
    let rows = sizes
        .into_iter()
        .map(|(pattern, (count, causes, k))| {
            let b = baseline.per_pattern_accuracy[pattern];
            let r = refined.per_pattern_accuracy[pattern];
            PatternRow {
                pattern: pattern.to_string(),
                findings: count,
                root_causes: causes.len(),
                baseline: b,
                kmeans: r,
                optimal_k: k,
                gain: r - b,
            }
        })
        .collect();

    Ok(StrategyReport {
        baseline_accuracy: base_acc.percent(),
        kmeans_accuracy: refined_acc.percent(),
        binary_baseline_accuracy: binary_baseline.percent(),
        binary_kmeans_accuracy: binary_refined.percent(),
        gain: refined_acc.percent() - base_acc.percent(),
        rows,
    })
}

/// Plain-text table: Pattern, Baseline, K-means, Opt. k, % Gain.
pub fn render_strategy_table(report: &StrategyReport) -> String {
    let width = report
        .rows
        .iter()
        .map(|r| r.pattern.len())
        .chain(std::iter::once("Pattern".len()))
        .max()
        .unwrap_or(7);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>9}  {:>9}  {:>6}  {:>8}",
        "Pattern", "Baseline", "K-means", "Opt. k", "% Gain"
    );
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.2}%  {:>8.2}%  {:>6}  {:>+8.2}",
            row.pattern, row.baseline, row.kmeans, row.optimal_k, row.gain
        );
    }
    let _ = writeln!(
        out,
        "{:<width$}  {:>8.2}%  {:>8.2}%  {:>6}  {:>+8.2}",
        "overall", report.baseline_accuracy, report.kmeans_accuracy, "", report.gain
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LabelVerdict;

    fn record(pattern: &str, id: usize, members: &[&str], medoid: &str) -> ClusterRecord {
        ClusterRecord {
            pattern_key: pattern.into(),
            cluster_id: id,
            finding_ids: members.iter().map(|s| s.to_string()).collect(),
            medoid_id: medoid.into(),
            k: 1,
            silhouette: None,
        }
    }

    fn label_map(labels: &[Label]) -> HashMap<String, Label> {
        labels.iter().map(|l| (l.finding_id.clone(), l.clone())).collect()
    }

    #[test]
    fn medoid_edge_cases() {
        assert!(matches!(medoid(&[]), Err(PropagationError::EmptyCluster)));
        let v = FeatureVector::from_dense(&[1.0, 2.0]);
        assert_eq!(medoid(std::slice::from_ref(&v)).unwrap(), 0);
        assert_eq!(medoid(&[v.clone(), v]).unwrap(), 0);
    }

    #[test]
    fn medoid_is_the_member_nearest_the_mean() {
        let vs = vec![
            FeatureVector::from_dense(&[1.0, 0.0]),
            FeatureVector::from_dense(&[1.0, 1.0]),
            FeatureVector::from_dense(&[0.0, 1.0]),
        ];
        assert_eq!(medoid(&vs).unwrap(), 1);
    }

    #[test]
    fn single_cluster_propagation() {
        let clusters = vec![record("p", 0, &["a", "b", "c"], "b")];
        let labels = label_map(&[Label::new("b", LabelVerdict::Bug, "parser")]);
        let result = propagate(&clusters, &labels).unwrap();
        for id in ["a", "b", "c"] {
            assert_eq!(result.propagated[id].verdict, LabelVerdict::Bug);
            assert_eq!(result.propagated[id].root_cause, "parser");
            assert_eq!(result.propagated[id].finding_id, id);
        }
    }

    #[test]
    fn two_clusters_split_labels_and_missing_labels_name_the_cluster() {
        let clusters = vec![
            record("p", 0, &["a", "b"], "a"),
            record("p", 1, &["c"], "c"),
        ];
        let labels = label_map(&[
            Label::new("a", LabelVerdict::Bug, "parser"),
            Label::new("c", LabelVerdict::NoBug, "shell"),
        ]);
        let r = propagate(&clusters, &labels).unwrap();
        assert_eq!(r.propagated["b"].root_cause, "parser");
        assert_eq!(r.propagated["c"].verdict, LabelVerdict::NoBug);

        let partial = label_map(&[Label::new("a", LabelVerdict::Bug, "parser")]);
        let err = propagate(&clusters, &partial).unwrap_err();
        assert!(err.to_string().contains("p/1"), "{err}");
    }

    #[test]
    fn propagation_is_idempotent() {
        let clusters = vec![record("p", 0, &["a", "b"], "a")];
        let labels = label_map(&[Label::new("a", LabelVerdict::Bug, "gc")]);
        let once = propagate(&clusters, &labels).unwrap();
        let again = propagate(&clusters, &once.propagated.clone().into_iter().collect()).unwrap();
        assert_eq!(once.propagated, again.propagated);
    }

    #[test]
    fn accuracy_values() {
        let mut propagated = BTreeMap::new();
        let mut truth = HashMap::new();
        for i in 0..14 {
            let id = format!("f{i}");
            propagated.insert(id.clone(), Label::new(&id, LabelVerdict::Bug, "Parser "));
            let cause = if i < 13 { "parser" } else { "regexp" };
            truth.insert(id.clone(), Label::new(&id, LabelVerdict::Bug, cause));
        }
        let acc = propagation_accuracy(&propagated, &truth, Granularity::RootCause).unwrap();
        assert_eq!((acc.matched, acc.total), (13, 14));
        assert!((acc.percent() - 92.857142857).abs() < 1e-6);
        let bin = propagation_accuracy(&propagated, &truth, Granularity::Binary).unwrap();
        assert_eq!(bin.percent(), 100.0);

        truth.remove("f3");
        match propagation_accuracy(&propagated, &truth, Granularity::Binary) {
            Err(PropagationError::CoverageGap(ids)) => assert_eq!(ids, ["f3"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn root_cause_match_requires_verdict_match() {
        let a = Label::new("x", LabelVerdict::Bug, "shell");
        let b = Label::new("x", LabelVerdict::NoBug, "shell");
        assert!(!labels_match(&a, &b, Granularity::RootCause));
        assert!(!labels_match(&a, &b, Granularity::Binary));
    }

    #[test]
    fn worklist_orders_by_size() {
        let rs = vec![
            record("b", 0, &["x"], "x"),
            record("a", 0, &["y", "z"], "y"),
            record("a", 1, &["w"], "w"),
        ];
        let order: Vec<_> = medoid_worklist(&rs).iter().map(|r| r.medoid_id.as_str()).collect();
        assert_eq!(order, ["y", "w", "x"]);
    }
}
