//! Medication clustering on candidate-tower representations.
//!
//! k-means (k-means++ seeding, Lloyd iterations, deterministic from the
//! seed) with a silhouette sweep to pick the cluster count, nearest-name
//! reports within a cluster, and a TSV export compatible with common
//! embedding-projector tools.

use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::encoder::{encode, ModelParams};
use crate::token::TokenSequence;
use crate::{Error, Result};

/// Lloyd iteration cap used by the silhouette sweep and suggested for
/// standalone fits.
pub const DEFAULT_MAX_ITERS: usize = 100;

/// One k-means fit: per-vector labels, the centroids, and the total
/// within-cluster squared distance. Every cluster id in `[0, k)` has at
/// least one member (empty clusters are repaired during the fit).
#[derive(Debug, Clone)]
pub struct ClusterAssignment {
    pub k: usize,
    pub labels: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
}

/// Mean silhouette per candidate k, and the argmax (smallest k on ties).
#[derive(Debug, Clone)]
pub struct SilhouetteReport {
    pub scores: Vec<(usize, f64)>,
    pub best_k: usize,
}

/// Encodes every name through the candidate tower, order-preserving.
pub fn encode_all(model: &ModelParams, smns: &[TokenSequence]) -> Vec<Array1<f64>> {
    smns.par_iter()
        .map(|smn| encode(smn, &model.candidate_tower, &model.candidate_table))
        .collect()
}

/// Unit-normalizes vectors (zero vectors stay zero). Euclidean distances
/// over normalized vectors order pairs the same way cosine similarity does.
pub fn normalize_vectors(vectors: &[Array1<f64>]) -> Vec<Array1<f64>> {
    vectors
        .iter()
        .map(|v| {
            let norm = v.dot(v).sqrt();
            if norm < crate::encoder::ZERO_NORM_EPS {
                v.clone()
            } else {
                v / norm
            }
        })
        .collect()
}

fn dist2(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

fn validate_vectors(vectors: &[Array1<f64>]) -> Result<usize> {
    let dim = vectors
        .first()
        .map(Array1::len)
        .ok_or_else(|| Error::InvalidArgument("no vectors to cluster".into()))?;
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::InvalidArgument(
            "vectors have inconsistent dimensions".into(),
        ));
    }
    Ok(dim)
}

/// k-means++ seeding followed by Lloyd iterations with Euclidean distance.
/// Stops when assignments stabilize or after `max_iters`. Deterministic
/// given the seed. An emptied cluster steals the point farthest from its
/// current centroid.
pub fn kmeans(
    vectors: &[Array1<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<ClusterAssignment> {
    kmeans_with_trace(vectors, k, seed, max_iters).map(|(assignment, _)| assignment)
}

/// As [`kmeans`], also returning the inertia after each Lloyd iteration
/// (used to verify the non-increase invariant).
pub(crate) fn kmeans_with_trace(
    vectors: &[Array1<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<(ClusterAssignment, Vec<f64>)> {
    let dim = validate_vectors(vectors)?;
    let n = vectors.len();
    if k < 1 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    if max_iters < 1 {
        return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(vectors, k, &mut rng);

    let mut prev: Option<Vec<usize>> = None;
    let mut trace = Vec::new();
    for _ in 0..max_iters {
        let mut labels = assign_nearest(vectors, &centroids);
        repair_empty_clusters(vectors, &centroids, &mut labels, k);
        centroids = recompute_centroids(vectors, &labels, k, dim);
        trace.push(total_inertia(vectors, &labels, &centroids));
        let stable = prev.as_deref() == Some(labels.as_slice());
        prev = Some(labels);
        if stable {
            break;
        }
    }
    let labels = prev.expect("at least one Lloyd iteration");
    let inertia = *trace.last().expect("trace has one entry per iteration");
    let mut centroid_matrix = Array2::zeros((k, dim));
    for (mut row, centroid) in centroid_matrix.rows_mut().into_iter().zip(&centroids) {
        row.assign(centroid);
    }
    Ok((
        ClusterAssignment {
            k,
            labels,
            centroids: centroid_matrix,
            inertia,
        },
        trace,
    ))
}

fn seed_centroids(vectors: &[Array1<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Array1<f64>> {
    let n = vectors.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(vectors[rng.gen_range(0..n)].clone());
    let mut d2: Vec<f64> = vectors.iter().map(|v| dist2(v, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // All remaining mass sits on already-chosen points.
            rng.gen_range(0..n)
        } else {
            let r = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > r {
                    pick = i;
                    break;
                }
            }
            pick
        };
        let chosen = vectors[next].clone();
        for (slot, v) in d2.iter_mut().zip(vectors) {
            *slot = slot.min(dist2(v, &chosen));
        }
        centroids.push(chosen);
    }
    centroids
}

fn assign_nearest(vectors: &[Array1<f64>], centroids: &[Array1<f64>]) -> Vec<usize> {
    vectors
        .iter()
        .map(|v| {
            let mut best = 0usize;
            let mut best_d = dist2(v, &centroids[0]);
            for (c, centroid) in centroids.iter().enumerate().skip(1) {
                let d = dist2(v, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn repair_empty_clusters(
    vectors: &[Array1<f64>],
    centroids: &[Array1<f64>],
    labels: &mut [usize],
    k: usize,
) {
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    for cluster in 0..k {
        while counts[cluster] == 0 {
            let mut steal: Option<(usize, f64)> = None;
            for (i, &l) in labels.iter().enumerate() {
                if counts[l] < 2 {
                    continue;
                }
                let d = dist2(&vectors[i], &centroids[l]);
                if steal.is_none_or(|(_, best)| d > best) {
                    steal = Some((i, d));
                }
            }
            let (idx, _) = steal.expect("k <= n leaves a donor cluster");
            counts[labels[idx]] -= 1;
            labels[idx] = cluster;
            counts[cluster] += 1;
        }
    }
}

fn recompute_centroids(
    vectors: &[Array1<f64>],
    labels: &[usize],
    k: usize,
    dim: usize,
) -> Vec<Array1<f64>> {
    let mut sums = vec![Array1::<f64>::zeros(dim); k];
    let mut counts = vec![0usize; k];
    for (v, &l) in vectors.iter().zip(labels) {
        sums[l] += v;
        counts[l] += 1;
    }
    sums.into_iter()
        .zip(counts)
        .map(|(sum, count)| sum / count.max(1) as f64)
        .collect()
}

fn total_inertia(vectors: &[Array1<f64>], labels: &[usize], centroids: &[Array1<f64>]) -> f64 {
    vectors
        .iter()
        .zip(labels)
        .map(|(v, &l)| dist2(v, &centroids[l]))
        .sum()
}

/// Mean silhouette over all points: `s(i) = (b - a) / max(a, b)` with `a`
/// the mean intra-cluster distance (singleton clusters score 0) and `b`
/// the smallest mean distance to another cluster.
pub fn silhouette(vectors: &[Array1<f64>], assignment: &ClusterAssignment) -> Result<f64> {
    validate_vectors(vectors)?;
    let n = vectors.len();
    if assignment.labels.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: assignment.labels.len(),
        });
    }
    let k = assignment.k;
    if k < 2 {
        return Err(Error::SingleCluster);
    }
    let mut counts = vec![0usize; k];
    for &l in &assignment.labels {
        if l >= k {
            return Err(Error::InvalidArgument(format!(
                "label {l} out of range for k = {k}"
            )));
        }
        counts[l] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::InvalidArgument("empty cluster in assignment".into()));
    }

    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = assignment.labels[i];
            if counts[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0f64; k];
            for j in 0..n {
                if i == j {
                    continue;
                }
                sums[assignment.labels[j]] += dist2(&vectors[i], &vectors[j]).sqrt();
            }
            let a = sums[own] / (counts[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[c] / counts[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom == 0.0 {
                0.0
            } else {
                (b - a) / denom
            }
        })
        .sum();
    Ok(total / n as f64)
}

fn derive_seed(seed: u64, k: usize, restart: usize) -> u64 {
    // splitmix64 over a (seed, k, restart) tuple.
    let mut z = seed
        .wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((restart as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The lowest-inertia of `restarts` k-means fits, each from a seed derived
/// deterministically from `(seed, k, restart)`.
pub fn best_of_restarts(
    vectors: &[Array1<f64>],
    k: usize,
    seed: u64,
    restarts: usize,
    max_iters: usize,
) -> Result<ClusterAssignment> {
    if restarts < 1 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    let mut best: Option<ClusterAssignment> = None;
    for r in 0..restarts {
        let run = kmeans(vectors, k, derive_seed(seed, k, r), max_iters)?;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

/// Fits `restarts` k-means runs per k (keeping the lowest-inertia run),
/// scores each k by mean silhouette, and reports the best k (smallest on
/// ties).
pub fn silhouette_sweep(
    vectors: &[Array1<f64>],
    k_min: usize,
    k_max: usize,
    seed: u64,
    restarts: usize,
) -> Result<SilhouetteReport> {
    let n = vectors.len();
    if !(2 <= k_min && k_min <= k_max && k_max < n) {
        return Err(Error::InvalidKRange { k_min, k_max, n });
    }
    if restarts < 1 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    let scores: Vec<(usize, f64)> = (k_min..=k_max)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&k| {
            let assignment = best_of_restarts(vectors, k, seed, restarts, DEFAULT_MAX_ITERS)?;
            Ok((k, silhouette(vectors, &assignment)?))
        })
        .collect::<Result<_>>()?;

    let mut best_k = scores[0].0;
    let mut best_s = scores[0].1;
    for &(k, s) in &scores[1..] {
        if s > best_s {
            best_s = s;
            best_k = k;
        }
    }
    Ok(SilhouetteReport { scores, best_k })
}

/// Members of the anchor's cluster (excluding the anchor itself), closest
/// first, truncated to `topk`.
pub fn nearest_in_cluster(
    anchor_smn: &str,
    names: &[String],
    vectors: &[Array1<f64>],
    assignment: &ClusterAssignment,
    topk: usize,
) -> Result<Vec<String>> {
    if names.len() != vectors.len() || assignment.labels.len() != vectors.len() {
        return Err(Error::LengthMismatch {
            left: vectors.len(),
            right: names.len().min(assignment.labels.len()),
        });
    }
    let anchor = names
        .iter()
        .position(|n| n == anchor_smn)
        .ok_or_else(|| Error::UnknownAnchor(anchor_smn.to_string()))?;
    let cluster = assignment.labels[anchor];
    let mut members: Vec<(usize, f64)> = (0..names.len())
        .filter(|&i| i != anchor && assignment.labels[i] == cluster)
        .map(|i| (i, dist2(&vectors[i], &vectors[anchor]).sqrt()))
        .collect();
    members.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    members.truncate(topk);
    Ok(members.into_iter().map(|(i, _)| names[i].clone()).collect())
}

/// Writes two row-aligned files: vectors as tab-separated floats and names
/// one per line. Float formatting is shortest-round-trip, so parsing the
/// file back reproduces the values exactly.
pub fn export_tsv(
    vectors: &[Array1<f64>],
    names: &[String],
    vectors_path: impl AsRef<Path>,
    names_path: impl AsRef<Path>,
) -> Result<()> {
    if vectors.len() != names.len() {
        return Err(Error::LengthMismatch {
            left: vectors.len(),
            right: names.len(),
        });
    }
    let mut vw = BufWriter::new(std::fs::File::create(vectors_path)?);
    for v in vectors {
        let row = v
            .iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join("\t");
        writeln!(vw, "{row}")?;
    }
    vw.flush()?;
    let mut nw = BufWriter::new(std::fs::File::create(names_path)?);
    for name in names {
        writeln!(nw, "{name}")?;
    }
    nw.flush()?;
    Ok(())
}
