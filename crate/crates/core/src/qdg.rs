//! Clustering samples by the direction of their loss gradients.
//!
//! Per-sample gradients over all parameters are normalized to unit length,
//! compared pairwise by cosine (then mapped to an angular similarity in
//! `[0, 1]`), and partitioned by spectral clustering.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::{dot, max_residual, top_eigenpairs};
use crate::error::{Error, Result};
use crate::mlp::{MlpModel, Workspace};
use crate::parity::SampleBatch;
use crate::seed::stream_rng;

/// Default loss filter for gradient clustering, in nats.
pub const DEFAULT_LOSS_FILTER_NATS: f64 = 0.1;
pub const KMEANS_RESTARTS: usize = 10;
pub const KMEANS_MAX_ITERATIONS: usize = 300;
pub const EIGEN_RESIDUAL_TOLERANCE: f64 = 1e-8;

/// Row-normalized per-sample gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    /// Batch row of each gradient row.
    pub sample_ids: Vec<usize>,
    pub ground_truth: Option<Vec<u32>>,
    /// Samples that passed the loss filter but had an all-zero gradient.
    pub dropped_zero_gradient: usize,
}

impl GradMatrix {
    /// Normalizes each row. Zero rows are an error.
    pub fn from_rows(rows: Vec<Vec<f64>>, ground_truth: Option<Vec<u32>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("gradient rows"));
        }
        let cols = rows[0].len();
        if let Some(truth) = &ground_truth {
            if truth.len() != rows.len() {
                return Err(Error::LengthMismatch { left: rows.len(), right: truth.len() });
            }
        }
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, mut row) in rows.into_iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Shape { expected: cols, got: row.len() });
            }
            let norm = dot(&row, &row).sqrt();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::Domain(format!("gradient row {i} has zero or non-finite norm")));
            }
            row.iter_mut().for_each(|x| *x /= norm);
            values.extend_from_slice(&row);
        }
        let n = values.len() / cols.max(1);
        Ok(Self { rows: n, cols, values, sample_ids: (0..n).collect(), ground_truth, dropped_zero_gradient: 0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
}

/// Normalized gradients of the samples whose loss is below `loss_filter` nats.
pub fn build_grad_matrix(model: &MlpModel, samples: &SampleBatch, loss_filter: f64) -> Result<GradMatrix> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    let losses = model.per_sample_losses(samples)?;
    let kept: Vec<usize> = (0..samples.len()).filter(|&i| losses[i] < loss_filter).collect();
    let grads: Vec<(usize, Option<Vec<f64>>)> = kept
        .par_iter()
        .map_init(Workspace::default, |ws, &i| {
            let (_, mut g) = model.sample_grad(samples, i, ws)?;
            let norm = g.norm();
            if norm > 0.0 && norm.is_finite() {
                g.values.iter_mut().for_each(|x| *x /= norm);
                Ok((i, Some(g.values)))
            } else {
                Ok((i, None))
            }
        })
        .collect::<Result<_>>()?;
    let dropped = grads.iter().filter(|g| g.1.is_none()).count();
    let grads: Vec<(usize, Vec<f64>)> = grads.into_iter().filter_map(|(i, g)| g.map(|g| (i, g))).collect();
    if grads.is_empty() {
        return Err(Error::Empty("no samples pass the loss filter with a nonzero gradient"));
    }
    let cols = model.param_count();
    let mut values = Vec::with_capacity(grads.len() * cols);
    let mut sample_ids = Vec::with_capacity(grads.len());
    for (i, g) in grads {
        values.extend_from_slice(&g);
        sample_ids.push(i);
    }
    let ground_truth = Some(sample_ids.iter().map(|&i| samples.subtask_ids()[i]).collect());
    Ok(GradMatrix { rows: sample_ids.len(), cols, values, sample_ids, ground_truth, dropped_zero_gradient: dropped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AffinityKind {
    Cosine,
    Angular,
    /// Any other nonnegative symmetric similarity.
    Custom,
}

/// Symmetric `m × m` affinity, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub m: usize,
    pub kind: AffinityKind,
    pub values: Vec<f64>,
}

impl AffinityMatrix {
    pub fn new(m: usize, kind: AffinityKind, values: Vec<f64>) -> Result<Self> {
        if values.len() != m * m {
            return Err(Error::Shape { expected: m * m, got: values.len() });
        }
        Ok(Self { m, kind, values })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.m {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Fill a symmetric matrix from `entry(i, j)` for `j <= i`, rows in parallel.
pub(crate) fn symmetric_from<F>(m: usize, entry: F) -> Vec<f64>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let mut values = vec![0.0; m * m];
    values.par_chunks_mut(m.max(1)).enumerate().for_each(|(i, row)| {
        for (j, x) in row.iter_mut().enumerate().take(i + 1) {
            *x = entry(i, j);
        }
    });
    for i in 0..m {
        for j in 0..i {
            values[j * m + i] = values[i * m + j];
        }
    }
    values
}

/// `C = A Aᵀ`, clamped to `[-1, 1]` with an exact unit diagonal.
pub fn cosine_affinity(a: &GradMatrix) -> AffinityMatrix {
    let values = symmetric_from(a.rows, |i, j| if i == j { 1.0 } else { dot(a.row(i), a.row(j)).clamp(-1.0, 1.0) });
    AffinityMatrix { m: a.rows, kind: AffinityKind::Cosine, values }
}

/// `1 - arccos(C) / π` elementwise.
pub fn angular_affinity(c: &AffinityMatrix) -> Result<AffinityMatrix> {
    if c.kind != AffinityKind::Cosine {
        return Err(Error::Domain(format!("angular affinity needs a cosine matrix, got {:?}", c.kind)));
    }
    let values = c
        .values
        .iter()
        .map(|&x| 1.0 - x.clamp(-1.0, 1.0).acos() / std::f64::consts::PI)
        .collect();
    Ok(AffinityMatrix { m: c.m, kind: AffinityKind::Angular, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub n_clusters: usize,
    pub seed: u64,
    /// Smallest Laplacian eigenvalues, increasing; one more than `n_clusters`
    /// when available so the eigengap can be read off.
    pub laplacian_eigenvalues: Vec<f64>,
    pub inertia: f64,
    pub max_residual: f64,
}

/// Spectral embedding: unit-normalized rows of the `n_clusters` eigenvectors
/// of `D^-1/2 A D^-1/2` with the largest eigenvalues.
pub struct SpectralEmbedding {
    pub rows: Vec<Vec<f64>>,
    pub laplacian_eigenvalues: Vec<f64>,
    pub max_residual: f64,
}

pub fn spectral_embedding(aff: &AffinityMatrix, dims: usize) -> Result<SpectralEmbedding> {
    let m = aff.m;
    if dims == 0 || dims > m {
        return Err(Error::Domain(format!("n_clusters must be in 1..={m}, got {dims}")));
    }
    if aff.values.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("affinity"));
    }
    if aff.values.iter().any(|&x| x < 0.0) {
        return Err(Error::Domain("spectral clustering needs a nonnegative affinity".into()));
    }
    let mut inv_sqrt_degree = Vec::with_capacity(m);
    for i in 0..m {
        let degree: f64 = aff.row(i).iter().sum();
        if degree <= 0.0 {
            return Err(Error::IsolatedNode { row: i });
        }
        inv_sqrt_degree.push(1.0 / degree.sqrt());
    }
    let normalized = symmetric_from(m, |i, j| aff.get(i, j) * inv_sqrt_degree[i] * inv_sqrt_degree[j]);
    let want = (dims + 1).min(m);
    let eig = top_eigenpairs(&normalized, m, want)?;
    let residual = max_residual(&normalized, m, &eig);
    if residual > EIGEN_RESIDUAL_TOLERANCE {
        let index = eig
            .values
            .iter()
            .zip(&eig.vectors)
            .position(|(&l, v)| {
                let single = crate::eigen::SymmetricEigen { values: vec![l], vectors: vec![v.clone()] };
                max_residual(&normalized, m, &single) > EIGEN_RESIDUAL_TOLERANCE
            })
            .unwrap_or(0);
        return Err(Error::Residual { index, residual });
    }
    let rows = (0..m)
        .map(|i| {
            let mut row: Vec<f64> = eig.vectors[..dims].iter().map(|v| v[i]).collect();
            let norm = dot(&row, &row).sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|x| *x /= norm);
            }
            row
        })
        .collect();
    Ok(SpectralEmbedding {
        rows,
        laplacian_eigenvalues: eig.values.iter().map(|mu| 1.0 - mu).collect(),
        max_residual: residual,
    })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn kmeans_once(points: &[Vec<f64>], k: usize, seed: u64, restart: u64) -> KMeansResult {
    let mut rng = stream_rng(seed, restart);
    let n = points.len();
    let mut centroids: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random_range(0.0..total);
            let mut acc = 0.0;
            nearest
                .iter()
                .position(|&d| {
                    acc += d;
                    acc > target
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[next].clone());
        let c = centroids.last().expect("just pushed");
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, c));
        }
    }

    let dims = points[0].len();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITERATIONS {
        let mut changed = false;
        for (label, p) in labels.iter_mut().zip(points) {
            let best = (0..k)
                .map(|c| (c, squared_distance(p, &centroids[c])))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|x| x.0)
                .expect("k >= 1");
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dims]; k];
        let mut counts = vec![0usize; k];
        for (&label, p) in labels.iter().zip(points) {
            counts[label] += 1;
            for (s, x) in sums[label].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            // Empty clusters keep their previous centroid.
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let inertia = labels.iter().zip(points).map(|(&l, p)| squared_distance(p, &centroids[l])).sum();
    KMeansResult { labels, centroids, inertia }
}

/// k-means with plus-plus seeding; the lowest-inertia restart wins, earliest
/// restart on ties.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    if points.is_empty() {
        return Err(Error::Empty("points"));
    }
    if k == 0 || k > points.len() {
        return Err(Error::Domain(format!("k must be in 1..={}, got {k}", points.len())));
    }
    let mut best: Option<KMeansResult> = None;
    for r in 0..restarts.max(1) {
        let run = kmeans_once(points, k, seed, r as u64);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

pub fn spectral_cluster(aff: &AffinityMatrix, n_clusters: usize, seed: u64) -> Result<ClusterAssignment> {
    let embedding = spectral_embedding(aff, n_clusters)?;
    cluster_embedding(&embedding, n_clusters, seed)
}

/// k-means on the first `n_clusters` coordinates of a precomputed embedding,
/// renormalized. Lets several cluster counts share one eigensolve.
pub fn cluster_embedding(embedding: &SpectralEmbedding, n_clusters: usize, seed: u64) -> Result<ClusterAssignment> {
    let available = embedding.rows.first().map_or(0, Vec::len);
    if n_clusters == 0 || n_clusters > available {
        return Err(Error::Domain(format!("n_clusters must be in 1..={available}, got {n_clusters}")));
    }
    let points: Vec<Vec<f64>> = embedding
        .rows
        .iter()
        .map(|row| {
            let mut p = row[..n_clusters].to_vec();
            let norm = dot(&p, &p).sqrt();
            if norm > 0.0 {
                p.iter_mut().for_each(|x| *x /= norm);
            }
            p
        })
        .collect();
    let result = kmeans(&points, n_clusters, seed, KMEANS_RESTARTS)?;
    let eigen_count = (n_clusters + 1).min(embedding.laplacian_eigenvalues.len());
    Ok(ClusterAssignment {
        labels: result.labels,
        n_clusters,
        seed,
        laplacian_eigenvalues: embedding.laplacian_eigenvalues[..eigen_count].to_vec(),
        inertia: result.inertia,
        max_residual: embedding.max_residual,
    })
}

/// Fraction of samples that share their cluster's majority ground-truth class.
pub fn cluster_purity(labels: &[usize], ground_truth: &[u32]) -> Result<f64> {
    if labels.len() != ground_truth.len() {
        return Err(Error::LengthMismatch { left: labels.len(), right: ground_truth.len() });
    }
    if labels.is_empty() {
        return Err(Error::Empty("labels"));
    }
    let mut counts: std::collections::HashMap<(usize, u32), usize> = std::collections::HashMap::new();
    for (&l, &t) in labels.iter().zip(ground_truth) {
        *counts.entry((l, t)).or_default() += 1;
    }
    let mut majority: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    for (&(l, _), &c) in &counts {
        let e = majority.entry(l).or_default();
        *e = (*e).max(c);
    }
    Ok(majority.values().sum::<usize>() as f64 / labels.len() as f64)
}

/// Mean affinity over pairs `i != j` in the same class and in different classes.
pub fn within_between_means(aff: &AffinityMatrix, ground_truth: &[u32]) -> Result<(f64, f64)> {
    if ground_truth.len() != aff.m {
        return Err(Error::LengthMismatch { left: aff.m, right: ground_truth.len() });
    }
    let (mut within, mut nw, mut between, mut nb) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..aff.m {
        for j in 0..i {
            if ground_truth[i] == ground_truth[j] {
                within += aff.get(i, j);
                nw += 1;
            } else {
                between += aff.get(i, j);
                nb += 1;
            }
        }
    }
    if nw == 0 || nb == 0 {
        return Err(Error::Empty("within- or between-class pairs"));
    }
    Ok((within / nw as f64, between / nb as f64))
}

/// Permutation that groups samples by cluster label (stable within a cluster).
pub fn block_order(labels: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by_key(|&i| labels[i]);
    order
}
