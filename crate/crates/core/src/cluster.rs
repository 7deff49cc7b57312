//! Rank-frequency curves of clusterings, their upper envelope, and a toy
//! Gaussian cluster model for checking how well envelope slopes recover the
//! underlying power law.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::dot;
use crate::error::{Error, Result};
use crate::qdg::{cluster_embedding, cluster_purity, spectral_embedding, AffinityKind, AffinityMatrix, ClusterAssignment};
use crate::seed::{derive_seed, stream_rng};
use crate::stats::{fit_power_law, spearman};

/// Cluster sizes in decreasing order; empty clusters omitted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankFrequencyCurve {
    pub n_clusters: usize,
    pub sizes: Vec<usize>,
}

impl RankFrequencyCurve {
    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }
}

pub fn rank_frequency_from_labels(labels: &[usize], n_clusters: usize) -> RankFrequencyCurve {
    let mut counts = std::collections::HashMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    let mut sizes: Vec<usize> = counts.into_values().collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    RankFrequencyCurve { n_clusters, sizes }
}

pub fn rank_frequency(assignment: &ClusterAssignment) -> RankFrequencyCurve {
    rank_frequency_from_labels(&assignment.labels, assignment.n_clusters)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFit {
    /// Requested window.
    pub window: (usize, usize),
    /// Window after intersecting with the ranks the curves cover.
    pub effective_window: (usize, usize),
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub curves: usize,
    /// `(rank, envelope size)` over every available rank.
    pub envelope: Vec<(usize, usize)>,
}

/// Pointwise maximum of the curves at each rank.
pub fn envelope(curves: &[RankFrequencyCurve]) -> Vec<(usize, usize)> {
    let longest = curves.iter().map(|c| c.sizes.len()).max().unwrap_or(0);
    (0..longest)
        .map(|r| (r + 1, curves.iter().filter_map(|c| c.sizes.get(r)).copied().max().unwrap_or(0)))
        .collect()
}

/// Power-law fit of the envelope over ranks `lo..=hi`.
pub fn envelope_slope(curves: &[RankFrequencyCurve], window: (usize, usize)) -> Result<EnvelopeFit> {
    if curves.is_empty() {
        return Err(Error::Empty("rank-frequency curves"));
    }
    let (lo, hi) = window;
    if lo == 0 || hi <= lo {
        return Err(Error::Domain(format!("rank window must satisfy 1 <= lo < hi, got {lo}:{hi}")));
    }
    let env = envelope(curves);
    let effective = (lo, hi.min(env.len()));
    if effective.1 <= effective.0 {
        return Err(Error::Empty("rank window after intersecting with available ranks"));
    }
    let points: Vec<(f64, f64)> = env[effective.0 - 1..effective.1]
        .iter()
        .map(|&(r, s)| (r as f64, s as f64))
        .collect();
    let fit = fit_power_law(&points)?;
    Ok(EnvelopeFit {
        window,
        effective_window: effective,
        slope: fit.exponent,
        intercept: fit.prefactor.ln(),
        r_squared: fit.r_squared,
        curves: curves.len(),
        envelope: env,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyModelConfig {
    pub n_subtasks: usize,
    pub amplitude: f64,
    pub alpha: f64,
    pub dim: usize,
    pub sigma: f64,
    pub k_list: Vec<usize>,
    pub window: (usize, usize),
    pub seed: u64,
}

impl ToyModelConfig {
    pub fn desk() -> Self {
        Self {
            n_subtasks: 300,
            amplitude: 300.0,
            alpha: 1.0,
            dim: 300,
            sigma: 2.0,
            k_list: vec![10, 20, 30, 45, 60, 100, 150, 200],
            window: (10, 300),
            seed: 0,
        }
    }

    pub fn paper() -> Self {
        Self {
            n_subtasks: 1000,
            amplitude: 1000.0,
            dim: 1000,
            k_list: vec![100, 200, 500],
            window: (100, 1000),
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| Err(Error::Config { field: field.into(), message: message.into() });
        if self.n_subtasks == 0 {
            return bad("n_subtasks", "must be >= 1");
        }
        if !(self.amplitude >= 1.0 && self.amplitude.is_finite()) {
            return bad("amplitude", "must be >= 1");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha", "must be positive");
        }
        if self.dim == 0 {
            return bad("dim", "must be >= 1");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma", "must be nonnegative");
        }
        if self.k_list.is_empty() || self.k_list.contains(&0) {
            return bad("k_list", "needs at least one positive cluster count");
        }
        if self.window.0 == 0 || self.window.1 <= self.window.0 {
            return bad("window", "must satisfy 1 <= lo < hi");
        }
        Ok(())
    }

    /// `n_i = floor(A / i^alpha)` for `i = 1..=N`, zeros dropped.
    pub fn subtask_sizes(&self) -> Vec<usize> {
        (1..=self.n_subtasks)
            .map(|i| (self.amplitude / (i as f64).powf(self.alpha)).floor() as usize)
            .take_while(|&n| n > 0)
            .collect()
    }
}

/// Toy gradients: for each retained subtask a standard-normal mean, then
/// `n_i` draws around it with isotropic noise `sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyGradients {
    pub dim: usize,
    /// Row-major `total × dim`.
    pub vectors: Vec<f64>,
    pub ground_truth: Vec<u32>,
    pub means: Vec<Vec<f64>>,
}

impl ToyGradients {
    pub fn len(&self) -> usize {
        self.ground_truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ground_truth.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn gen_toy_gradients(cfg: &ToyModelConfig) -> Result<ToyGradients> {
    cfg.validate()?;
    let sizes = cfg.subtask_sizes();
    let total: usize = sizes.iter().sum();
    let mut vectors = Vec::with_capacity(total * cfg.dim);
    let mut ground_truth = Vec::with_capacity(total);
    let mut means = Vec::with_capacity(sizes.len());
    let seed = derive_seed(cfg.seed, "data");
    for (i, &n) in sizes.iter().enumerate() {
        let mut rng = stream_rng(seed, i as u64);
        let mean: Vec<f64> = (0..cfg.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        for _ in 0..n {
            for &mu in &mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                vectors.push(mu + cfg.sigma * z);
            }
            ground_truth.push(i as u32);
        }
        means.push(mean);
    }
    Ok(ToyGradients { dim: cfg.dim, vectors, ground_truth, means })
}

/// `1 + cos(x, y)`, in `[0, 2]`.
pub fn toy_similarity(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
    }
    let nx = dot(x, x).sqrt();
    let ny = dot(y, y).sqrt();
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::Domain("toy similarity of a zero vector".into()));
    }
    Ok((1.0 + dot(x, y) / (nx * ny)).clamp(0.0, 2.0))
}

/// Pairwise `toy_similarity` matrix.
pub fn toy_affinity(g: &ToyGradients) -> Result<AffinityMatrix> {
    let m = g.len();
    let mut unit = Vec::with_capacity(g.vectors.len());
    for i in 0..m {
        let row = g.row(i);
        let norm = dot(row, row).sqrt();
        if norm == 0.0 {
            return Err(Error::Domain(format!("toy vector {i} is zero")));
        }
        unit.extend(row.iter().map(|x| x / norm));
    }
    let d = g.dim;
    let values = crate::qdg::symmetric_from(m, |i, j| {
        if i == j {
            2.0
        } else {
            (1.0 + dot(&unit[i * d..(i + 1) * d], &unit[j * d..(j + 1) * d])).clamp(0.0, 2.0)
        }
    });
    AffinityMatrix::new(m, AffinityKind::Custom, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySweep {
    pub curves: Vec<RankFrequencyCurve>,
    /// Purity of each clustering against the generating subtask.
    pub purities: Vec<f64>,
    pub samples: usize,
}

/// Spectral clustering of the toy similarity matrix for every `k` in the
/// config. One eigensolve serves every `k`.
pub fn toy_cluster_sweep(cfg: &ToyModelConfig) -> Result<ToySweep> {
    let g = gen_toy_gradients(cfg)?;
    let aff = toy_affinity(&g)?;
    let k_max = cfg.k_list.iter().copied().max().expect("validated nonempty");
    if k_max > aff.m {
        return Err(Error::Domain(format!("k = {k_max} exceeds the {} toy samples", aff.m)));
    }
    let embedding = spectral_embedding(&aff, k_max)?;
    let kmeans_seed = derive_seed(cfg.seed, "kmeans");
    let mut curves = Vec::with_capacity(cfg.k_list.len());
    let mut purities = Vec::with_capacity(cfg.k_list.len());
    for &k in &cfg.k_list {
        let assignment = cluster_embedding(&embedding, k, kmeans_seed)?;
        purities.push(cluster_purity(&assignment.labels, &g.ground_truth)?);
        curves.push(rank_frequency(&assignment));
    }
    Ok(ToySweep { curves, purities, samples: g.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRecovery {
    pub alpha: f64,
    pub slope: f64,
    /// `slope - (-alpha)`.
    pub error: f64,
    pub r_squared: f64,
    pub curves: Vec<RankFrequencyCurve>,
}

pub fn alpha_recovery_sweep(alphas: &[f64], base: &ToyModelConfig) -> Result<Vec<AlphaRecovery>> {
    if alphas.is_empty() {
        return Err(Error::Empty("alphas"));
    }
    alphas
        .par_iter()
        .map(|&alpha| {
            let cfg = ToyModelConfig { alpha, ..base.clone() };
            let sweep = toy_cluster_sweep(&cfg)?;
            let fit = envelope_slope(&sweep.curves, cfg.window)?;
            Ok(AlphaRecovery { alpha, slope: fit.slope, error: fit.slope + alpha, r_squared: fit.r_squared, curves: sweep.curves })
        })
        .collect()
}

/// Mean absolute slope error and rank correlation between `alpha` and `|slope|`.
pub fn recovery_summary(rows: &[AlphaRecovery]) -> Result<(f64, f64)> {
    if rows.is_empty() {
        return Err(Error::Empty("alpha recovery rows"));
    }
    let mae = rows.iter().map(|r| r.error.abs()).sum::<f64>() / rows.len() as f64;
    let alphas: Vec<f64> = rows.iter().map(|r| r.alpha).collect();
    let slopes: Vec<f64> = rows.iter().map(|r| r.slope.abs()).collect();
    Ok((mae, spearman(&alphas, &slopes)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_frequency_examples() {
        assert_eq!(rank_frequency_from_labels(&[0, 0, 1, 2, 0], 3).sizes, vec![3, 1, 1]);
        assert_eq!(rank_frequency_from_labels(&[4; 6], 5).sizes, vec![6]);
    }

    #[test]
    fn exact_power_law_envelope() {
        let sizes: Vec<usize> = (1..=200).map(|r| (1e6 * (r as f64).powf(-1.4)).round() as usize).collect();
        let fit = envelope_slope(&[RankFrequencyCurve { n_clusters: 200, sizes }], (1, 200)).unwrap();
        assert!((fit.slope + 1.4).abs() < 0.01);
    }

    #[test]
    fn dominant_curve_is_the_envelope() {
        let big = RankFrequencyCurve { n_clusters: 4, sizes: vec![10, 8, 6, 4] };
        let small = RankFrequencyCurve { n_clusters: 3, sizes: vec![9, 5, 1] };
        let env = envelope(&[small, big.clone()]);
        assert_eq!(env.iter().map(|e| e.1).collect::<Vec<_>>(), big.sizes);
    }

    #[test]
    fn envelope_window_errors() {
        let c = RankFrequencyCurve { n_clusters: 3, sizes: vec![5, 3, 1] };
        assert!(envelope_slope(std::slice::from_ref(&c), (5, 10)).is_err());
        assert!(envelope_slope(&[c], (0, 10)).is_err());
        assert!(envelope_slope(&[], (1, 3)).is_err());
    }

    #[test]
    fn toy_sizes_and_noise() {
        let cfg = ToyModelConfig { amplitude: 1000.0, n_subtasks: 1000, dim: 4, sigma: 0.0, ..ToyModelConfig::desk() };
        assert_eq!(cfg.subtask_sizes()[2], 333);
        let small = ToyModelConfig { n_subtasks: 5, amplitude: 6.0, dim: 4, sigma: 0.0, ..ToyModelConfig::desk() };
        let g = gen_toy_gradients(&small).unwrap();
        for i in 0..g.len() {
            assert_eq!(g.row(i), g.means[g.ground_truth[i] as usize].as_slice());
        }
    }

    #[test]
    fn toy_sample_means_concentrate() {
        let cfg = ToyModelConfig { n_subtasks: 3, amplitude: 400.0, dim: 20, sigma: 2.0, ..ToyModelConfig::desk() };
        let g = gen_toy_gradients(&cfg).unwrap();
        let sizes = cfg.subtask_sizes();
        for (i, &n) in sizes.iter().enumerate() {
            let rows: Vec<usize> = (0..g.len()).filter(|&r| g.ground_truth[r] == i as u32).collect();
            assert_eq!(rows.len(), n);
            for t in 0..cfg.dim {
                let mean = rows.iter().map(|&r| g.row(r)[t]).sum::<f64>() / n as f64;
                assert!((mean - g.means[i][t]).abs() < 3.0 * 2.0 / (n as f64).sqrt() * 1.5);
            }
        }
    }

    #[test]
    fn toy_similarity_examples() {
        assert!((toy_similarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 2.0).abs() < 1e-15);
        assert!((toy_similarity(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(toy_similarity(&[1.0, 2.0], &[-1.0, -2.0]).unwrap().abs() < 1e-15);
        assert!(toy_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn toy_within_exceeds_between() {
        let cfg = ToyModelConfig { n_subtasks: 40, amplitude: 40.0, dim: 1000, sigma: 2.0, ..ToyModelConfig::desk() };
        let g = gen_toy_gradients(&cfg).unwrap();
        let aff = toy_affinity(&g).unwrap();
        let (mut within, mut between) = (Vec::new(), Vec::new());
        for i in 0..aff.m {
            for j in 0..i {
                if g.ground_truth[i] == g.ground_truth[j] {
                    within.push(aff.get(i, j));
                } else {
                    between.push(aff.get(i, j));
                }
            }
        }
        let stats = |v: &[f64]| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            (mean, var / v.len() as f64)
        };
        let (mw, vw) = stats(&within);
        let (mb, vb) = stats(&between);
        assert!(mw - mb > 5.0 * (vw + vb).sqrt(), "{mw} vs {mb}");
    }

    #[test]
    fn noiseless_toy_is_separable() {
        let cfg = ToyModelConfig {
            n_subtasks: 20,
            amplitude: 30.0,
            dim: 200,
            sigma: 0.0,
            k_list: vec![1, 20],
            ..ToyModelConfig::desk()
        };
        let retained = cfg.subtask_sizes().len();
        assert_eq!(retained, 20);
        let sweep = toy_cluster_sweep(&cfg).unwrap();
        assert_eq!(sweep.curves[0].sizes, vec![sweep.samples]);
        assert!(sweep.purities[1] >= 0.99);
        for c in &sweep.curves {
            assert_eq!(c.total(), sweep.samples);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = ToyModelConfig::desk();
        c.k_list.clear();
        assert!(c.validate().is_err());
        let json = serde_json::to_string(&ToyModelConfig::paper()).unwrap();
        assert_eq!(serde_json::from_str::<ToyModelConfig>(&json).unwrap(), ToyModelConfig::paper());
    }
}
