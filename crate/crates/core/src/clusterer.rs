//! Two-level grouping of findings: exit-code patterns first, then k-means on
//! TF-IDF vectors inside each pattern with the number of clusters chosen by
//! mean silhouette.
//!
//! K-means runs Lloyd iterations with Euclidean distance on L2-normalised
//! vectors, seeded with k-means++. The silhouette uses cosine distance on the
//! raw vectors, which is the same quantity up to normalisation.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Finding;
use crate::vectorizer::{cosine_distance, FeatureVector};

pub const MAX_LLOYD_ITERATIONS: usize = 300;

/// Largest k tried by default.
pub const DEFAULT_K_MAX: usize = 20;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KmeansError {
    #[error("k = {k} is out of range for {n} point(s)")]
    KOutOfRange { k: usize, n: usize },

    #[error("silhouette needs at least 2 non-empty clusters, found {0}")]
    TooFewClusters(usize),

    #[error("{assignments} assignment(s) for {points} point(s)")]
    LengthMismatch { assignments: usize, points: usize },

    #[error("empty k range")]
    EmptyRange,

    #[error("k range {lo}..={hi} must lie within 2..={n}")]
    RangeOutOfBounds { lo: usize, hi: usize, n: usize },

    #[error("finding `{id}` has {found} engine results, expected {expected}")]
    HeterogeneousEngines {
        id: String,
        expected: usize,
        found: usize,
    },
}

/// Ordered tuple of per-engine exit codes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExitPattern {
    codes: Vec<i32>,
    key: String,
}

impl ExitPattern {
    pub fn new(codes: Vec<i32>) -> Self {
        let key = std::iter::once("pattern".to_string())
            .chain(codes.iter().map(i32::to_string))
            .collect::<Vec<_>>()
            .join("_");
        Self { codes, key }
    }

    pub fn of(finding: &Finding) -> Self {
        Self::new(finding.exit_codes())
    }

    pub fn codes(&self) -> &[i32] {
        &self.codes
    }

    /// `pattern_` followed by the codes joined with `_`.
    pub fn key(&self) -> &str {
        &self.key
    }
}

impl fmt::Display for ExitPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key)
    }
}

impl PartialOrd for ExitPattern {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExitPattern {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.cmp(&other.key)
    }
}

/// Partitions finding indices by exit pattern. Groups iterate in
/// lexicographic key order; indices inside a group keep input order.
pub fn group_by_exit_pattern(
    findings: &[Finding],
) -> Result<BTreeMap<ExitPattern, Vec<usize>>, KmeansError> {
    let mut groups: BTreeMap<ExitPattern, Vec<usize>> = BTreeMap::new();
    let Some(first) = findings.first() else {
        return Ok(groups);
    };
    let expected = first.engine_results.len();
    for (idx, finding) in findings.iter().enumerate() {
        if finding.engine_results.len() != expected {
            return Err(KmeansError::HeterogeneousEngines {
                id: finding.id.clone(),
                expected,
                found: finding.engine_results.len(),
            });
        }
        groups.entry(ExitPattern::of(finding)).or_default().push(idx);
    }
    Ok(groups)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Cluster id per input point, dense in `0..k`.
    pub assignments: Vec<usize>,
    /// Mean of the (normalised) members of each cluster.
    pub centroids: Vec<Vec<f64>>,
    pub k: usize,
    /// Sum of squared Euclidean distances to the assigned centroid.
    pub inertia: f64,
    /// Inertia after every centroid update, in iteration order.
    pub inertia_history: Vec<f64>,
    pub converged: bool,
}

impl Clustering {
    /// Point indices of each cluster.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &c) in self.assignments.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    /// The single-cluster clustering of `n` points.
    pub fn trivial(n: usize) -> Self {
        Self {
            assignments: vec![0; n],
            centroids: Vec::new(),
            k: 1,
            inertia: 0.0,
            inertia_history: Vec::new(),
            converged: true,
        }
    }
}

/// K-means over TF-IDF vectors: normalises each vector, densifies, and runs
/// [`kmeans_dense`].
pub fn kmeans(vectors: &[FeatureVector], k: usize, seed: u64) -> Result<Clustering, KmeansError> {
    let dim = vectors.iter().map(FeatureVector::dimension).max().unwrap_or(0);
    let points: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.normalized().to_dense(dim))
        .collect();
    kmeans_dense(&points, k, seed, MAX_LLOYD_ITERATIONS)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding, Euclidean distance.
///
/// Stops when an assignment step changes nothing or after `max_iterations`
/// centroid updates. A cluster left empty by an assignment step receives the
/// point farthest from its own centroid (taken from a cluster with at least
/// two members), so the result always has exactly `k` non-empty clusters.
pub fn kmeans_dense(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iterations: usize,
) -> Result<Clustering, KmeansError> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(KmeansError::KOutOfRange { k, n });
    }
    let dim = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(points, k, &mut rng);

    let mut assignments = assign(points, &centroids);
    repair_empty(points, &centroids, &mut assignments, k);

    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..max_iterations {
        centroids = means(points, &assignments, k, dim);
        history.push(inertia(points, &centroids, &assignments));
        let mut next = assign(points, &centroids);
        repair_empty(points, &centroids, &mut next, k);
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;
    }
    if !converged {
        centroids = means(points, &assignments, k, dim);
        history.push(inertia(points, &centroids, &assignments));
    }
    Ok(Clustering {
        inertia: *history.last().unwrap_or(&0.0),
        assignments,
        centroids,
        k,
        inertia_history: history,
        converged,
    })
}

fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &points[chosen[0]]))
        .collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in nearest.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if target < d {
                        break;
                    }
                    target -= d;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            // Every remaining point coincides with a chosen centre.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(squared_distance(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// Nearest centroid per point; ties go to the lowest centroid index.
fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    points
        .iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (c, centroid) in centroids.iter().enumerate() {
                let d = squared_distance(p, centroid);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best.0
        })
        .collect()
}

fn repair_empty(points: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &mut [usize], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &c in assignments.iter() {
            sizes[c] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut donor: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            let c = assignments[i];
            if sizes[c] < 2 {
                continue;
            }
            let d = squared_distance(p, &centroids[c]);
            if donor.is_none_or(|(_, best)| d > best) {
                donor = Some((i, d));
            }
        }
        match donor {
            Some((i, _)) => assignments[i] = empty,
            // k <= n guarantees a donor exists while a cluster is empty.
            None => return,
        }
    }
}

fn means(points: &[Vec<f64>], assignments: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignments) {
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(p) {
            *s += x;
        }
    }
    for (sum, &count) in sums.iter_mut().zip(&counts) {
        if count > 0 {
            for s in sum.iter_mut() {
                *s /= count as f64;
            }
        }
    }
    sums
}

fn inertia(points: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &c)| squared_distance(p, &centroids[c]))
        .sum()
}

/// Mean silhouette under cosine distance.
pub fn silhouette_score(vectors: &[FeatureVector], assignments: &[usize]) -> Result<f64, KmeansError> {
    silhouette_with(vectors.len(), assignments, |i, j| {
        cosine_distance(&vectors[i], &vectors[j])
    })
}

/// Mean silhouette `s(i) = (b - a) / max(a, b)` for an arbitrary metric over
/// point indices. Points alone in their cluster score 0. Cluster ids need not
/// be dense.
pub fn silhouette_with<F>(n: usize, assignments: &[usize], distance: F) -> Result<f64, KmeansError>
where
    F: Fn(usize, usize) -> f64,
{
    let samples = silhouette_samples_with(n, assignments, distance)?;
    Ok(samples.iter().sum::<f64>() / n as f64)
}

pub fn silhouette_samples_with<F>(
    n: usize,
    assignments: &[usize],
    distance: F,
) -> Result<Vec<f64>, KmeansError>
where
    F: Fn(usize, usize) -> f64,
{
    if assignments.len() != n {
        return Err(KmeansError::LengthMismatch {
            assignments: assignments.len(),
            points: n,
        });
    }
    // Remap ids to 0..m.
    let mut ids: Vec<usize> = assignments.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(KmeansError::TooFewClusters(ids.len()));
    }
    let label: Vec<usize> = assignments
        .iter()
        .map(|c| ids.binary_search(c).expect("id collected above"))
        .collect();
    let m = ids.len();
    let mut sizes = vec![0usize; m];
    for &c in &label {
        sizes[c] += 1;
    }

    let mut sums = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = distance(i, j);
            sums[i][label[j]] += d;
            sums[j][label[i]] += d;
        }
    }
    Ok((0..n)
        .map(|i| {
            let own = label[i];
            if sizes[own] < 2 {
                return 0.0;
            }
            let a = sums[i][own] / (sizes[own] - 1) as f64;
            let b = (0..m)
                .filter(|&c| c != own)
                .map(|c| sums[i][c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect())
}

/// Outcome of k selection.
#[derive(Debug, Clone, PartialEq)]
pub struct KSelection {
    pub k: usize,
    pub clustering: Clustering,
    /// Mean silhouette of the chosen clustering; `None` on the k = 1 fallback.
    pub silhouette: Option<f64>,
    /// `(k, mean silhouette)` for every candidate, in k order.
    pub scores: Vec<(usize, f64)>,
}

impl KSelection {
    fn fallback(n: usize) -> Self {
        Self {
            k: 1,
            clustering: Clustering::trivial(n),
            silhouette: None,
            scores: Vec::new(),
        }
    }
}

/// Default candidate range `2..=min(k_max, n - 1)`, or `None` when fewer than
/// three points leave nothing to choose.
pub fn default_k_range(n: usize, k_max: usize) -> Option<RangeInclusive<usize>> {
    let hi = k_max.min(n.saturating_sub(1));
    (hi >= 2).then_some(2..=hi)
}

/// Runs k-means for every k in `k_range` and keeps the k with the largest
/// mean silhouette, preferring the smaller k on ties.
///
/// Falls back to a single cluster (k = 1, no silhouette) when there are fewer
/// than two points or fewer than two distinct vectors.
pub fn select_k(
    vectors: &[FeatureVector],
    k_range: RangeInclusive<usize>,
    seed: u64,
) -> Result<KSelection, KmeansError> {
    let n = vectors.len();
    if n < 2 || !has_two_distinct(vectors) {
        return Ok(KSelection::fallback(n));
    }
    if k_range.is_empty() {
        return Err(KmeansError::EmptyRange);
    }
    let (lo, hi) = (*k_range.start(), *k_range.end());
    if lo < 2 || hi > n {
        return Err(KmeansError::RangeOutOfBounds { lo, hi, n });
    }
    let dist = pairwise_cosine(vectors);
    let runs: Vec<(usize, Clustering, f64)> = k_range
        .into_par_iter()
        .map(|k| {
            let clustering = kmeans(vectors, k, seed)?;
            let score = silhouette_with(n, &clustering.assignments, |i, j| dist[i][j])?;
            Ok((k, clustering, score))
        })
        .collect::<Result<_, KmeansError>>()?;

    let scores = runs.iter().map(|(k, _, s)| (*k, *s)).collect();
    let (k, clustering, score) = runs
        .into_iter()
        .reduce(|best, cand| if cand.2 > best.2 { cand } else { best })
        .expect("non-empty range");
    Ok(KSelection {
        k,
        clustering,
        silhouette: Some(score),
        scores,
    })
}

fn has_two_distinct(vectors: &[FeatureVector]) -> bool {
    let first = vectors[0].normalized();
    vectors[1..].iter().any(|v| v.normalized() != first)
}

fn pairwise_cosine(vectors: &[FeatureVector]) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = cosine_distance(&vectors[i], &vectors[j]);
            out[i][j] = d;
            out[j][i] = d;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EngineResult;

    fn finding(id: &str, codes: &[i32]) -> Finding {
        Finding {
            id: id.into(),
            snippet: String::new(),
            engine_results: codes
                .iter()
                .enumerate()
                .map(|(i, &c)| EngineResult {
                    engine_name: format!("e{i}"),
                    stdout: String::new(),
                    stderr: String::new(),
                    exit_code: c,
                    wall_time_ms: 0,
                    timed_out: false,
                })
                .collect(),
            created_at: 0,
        }
    }

    #[test]
    fn pattern_key_format() {
        assert_eq!(ExitPattern::new(vec![7, 3, 0, 1]).key(), "pattern_7_3_0_1");
        assert_eq!(ExitPattern::new(vec![-1, 0]).key(), "pattern_-1_0");
    }

    #[test]
    fn grouping_is_a_sorted_partition() {
        let fs = vec![
            finding("a", &[7, 3, 0, 1]),
            finding("b", &[0, 0, 0, 0]),
            finding("c", &[7, 3, 0, 1]),
        ];
        let groups = group_by_exit_pattern(&fs).unwrap();
        let keys: Vec<_> = groups.keys().map(|p| p.key().to_string()).collect();
        assert_eq!(keys, ["pattern_0_0_0_0", "pattern_7_3_0_1"]);
        assert_eq!(groups[&ExitPattern::new(vec![7, 3, 0, 1])], vec![0, 2]);

        let same: Vec<_> = (0..5).map(|i| finding(&i.to_string(), &[0, 0, 0, 0])).collect();
        assert_eq!(group_by_exit_pattern(&same).unwrap().len(), 1);

        let mixed = vec![finding("a", &[0, 0]), finding("b", &[0, 0, 0])];
        assert!(matches!(
            group_by_exit_pattern(&mixed),
            Err(KmeansError::HeterogeneousEngines { .. })
        ));
    }

    #[test]
    fn kmeans_k1_gives_the_mean() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![4.0, 6.0]];
        let c = kmeans_dense(&pts, 1, 1, 300).unwrap();
        assert_eq!(c.assignments, vec![0, 0, 0]);
        assert_eq!(c.centroids[0], vec![2.0, 2.0]);
    }

    #[test]
    fn kmeans_k_equals_n_has_zero_inertia() {
        let pts = vec![vec![0.0], vec![1.0], vec![5.0], vec![9.0]];
        let c = kmeans_dense(&pts, 4, 3, 300).unwrap();
        assert_eq!(c.inertia, 0.0);
        let mut ids = c.assignments.clone();
        ids.sort();
        assert_eq!(ids, vec![0, 1, 2, 3]);
    }

    #[test]
    fn kmeans_repairs_empty_clusters_on_duplicates() {
        let pts = vec![vec![1.0, 1.0]; 4];
        let c = kmeans_dense(&pts, 3, 0, 300).unwrap();
        let sizes: Vec<usize> = c.members().iter().map(Vec::len).collect();
        assert!(sizes.iter().all(|&s| s > 0), "{sizes:?}");
    }

    #[test]
    fn kmeans_rejects_bad_k() {
        let pts = vec![vec![0.0]];
        assert_eq!(
            kmeans_dense(&pts, 0, 0, 10),
            Err(KmeansError::KOutOfRange { k: 0, n: 1 })
        );
        assert_eq!(
            kmeans_dense(&pts, 2, 0, 10),
            Err(KmeansError::KOutOfRange { k: 2, n: 1 })
        );
    }

    #[test]
    fn silhouette_hand_value_with_euclidean_metric() {
        let xs: [f64; 4] = [0.0, 1.0, 10.0, 11.0];
        let samples =
            silhouette_samples_with(4, &[0, 0, 1, 1], |i, j| (xs[i] - xs[j]).abs()).unwrap();
        assert!((samples[0] - (10.5 - 1.0) / 10.5).abs() < 1e-12);
    }

    #[test]
    fn silhouette_of_singletons_is_zero() {
        let s = silhouette_with(2, &[0, 1], |_, _| 1.0).unwrap();
        assert_eq!(s, 0.0);
        assert_eq!(
            silhouette_with(3, &[4, 4, 4], |_, _| 1.0),
            Err(KmeansError::TooFewClusters(1))
        );
    }

    #[test]
    fn select_k_falls_back_on_duplicates() {
        let v = FeatureVector::from_dense(&[1.0, 2.0]);
        let sel = select_k(&[v.clone(), v], 2..=2, 42).unwrap();
        assert_eq!(sel.k, 1);
        assert_eq!(sel.silhouette, None);
        assert_eq!(sel.clustering.assignments, vec![0, 0]);
    }

    #[test]
    fn select_k_validates_range() {
        let vs: Vec<_> = (0..4)
            .map(|i| FeatureVector::from_dense(&[1.0, i as f64]))
            .collect();
        #[allow(clippy::reversed_empty_ranges)]
        let empty = 3..=2;
        assert_eq!(select_k(&vs, empty, 0).unwrap_err(), KmeansError::EmptyRange);
        assert!(matches!(
            select_k(&vs, 2..=5, 0),
            Err(KmeansError::RangeOutOfBounds { .. })
        ));
    }

    #[test]
    fn default_range() {
        assert_eq!(default_k_range(2, 20), None);
        assert_eq!(default_k_range(3, 20), Some(2..=2));
        assert_eq!(default_k_range(100, 20), Some(2..=20));
    }
}
