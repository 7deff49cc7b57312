//! Dense symmetric eigensolver.
//!
//! Householder reduction to tridiagonal form, then implicit QL. The full
//! solver accumulates rotations into every eigenvector; the selective solver
//! computes only the requested eigenvalues' vectors by inverse iteration on the
//! tridiagonal matrix and maps them back through the reflectors.

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed::stream_rng;

const MAX_QL_ITERATIONS: usize = 60;
const MAX_INVERSE_ITERATIONS: usize = 12;
/// Relative eigenvalue gap below which inverse-iteration vectors are
/// reorthogonalized against their neighbours.
const CLUSTER_GAP: f64 = 1e-3;
/// Fixed stream so that start vectors do not depend on the caller.
const START_VECTOR_SEED: u64 = 0xe16e;

/// Dot product with four independent accumulators.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Eigenpairs sorted by decreasing eigenvalue; `vectors[j]` has unit norm and
/// belongs to `values[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

struct Tridiagonal {
    diag: Vec<f64>,
    /// `off[i]` couples `i` and `i + 1`; `off[m - 1] = 0`.
    off: Vec<f64>,
    /// Reflector `k` is `I - beta v vᵀ` acting on indices `k + 1..`.
    reflectors: Vec<(Vec<f64>, f64)>,
}

impl Tridiagonal {
    fn norm(&self) -> f64 {
        self.diag
            .iter()
            .zip(&self.off)
            .map(|(d, e)| d.abs() + 2.0 * e.abs())
            .fold(0.0, f64::max)
    }

    /// Map a vector from the tridiagonal basis back to the original one.
    fn back_transform(&self, y: &mut [f64]) {
        for (k, (v, beta)) in self.reflectors.iter().enumerate().rev() {
            if *beta == 0.0 {
                continue;
            }
            let tail = &mut y[k + 1..];
            let s = beta * dot(v, tail);
            axpy(-s, v, tail);
        }
    }
}

fn check_square(a: &[f64], m: usize) -> Result<()> {
    if a.len() != m * m {
        return Err(Error::Shape { expected: m * m, got: a.len() });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("matrix entry"));
    }
    Ok(())
}

/// Householder reduction of the symmetric row-major `m × m` matrix `a`.
/// Only the lower triangle of the input is read.
fn tridiagonalize(a: &[f64], m: usize) -> Tridiagonal {
    let mut a = a.to_vec();
    for i in 0..m {
        for j in 0..i {
            a[j * m + i] = a[i * m + j];
        }
    }
    let mut diag = vec![0.0; m];
    let mut off = vec![0.0; m];
    let mut reflectors = Vec::with_capacity(m.saturating_sub(2));
    let mut p = vec![0.0; m];
    for k in 0..m.saturating_sub(2) {
        diag[k] = a[k * m + k];
        let len = m - k - 1;
        let mut v: Vec<f64> = (k + 1..m).map(|i| a[i * m + k]).collect();
        let norm = dot(&v, &v).sqrt();
        if norm == 0.0 {
            off[k] = 0.0;
            reflectors.push((v, 0.0));
            continue;
        }
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let beta = 2.0 / dot(&v, &v);
        off[k] = alpha;

        let p = &mut p[..len];
        for (i, pi) in p.iter_mut().enumerate() {
            let row = (k + 1 + i) * m + k + 1;
            *pi = beta * dot(&a[row..row + len], &v);
        }
        let half = 0.5 * beta * dot(p, &v);
        for (pi, vi) in p.iter_mut().zip(&v) {
            *pi -= half * vi;
        }
        for i in 0..len {
            let row = (k + 1 + i) * m + k + 1;
            let (vi, wi) = (v[i], p[i]);
            for ((x, vj), wj) in a[row..row + len].iter_mut().zip(&v).zip(p.iter()) {
                *x -= vi * wj + wi * vj;
            }
        }
        reflectors.push((v, beta));
    }
    if m >= 2 {
        diag[m - 2] = a[(m - 2) * m + m - 2];
        off[m - 2] = a[(m - 1) * m + m - 2];
    }
    if m >= 1 {
        diag[m - 1] = a[(m - 1) * m + m - 1];
    }
    Tridiagonal { diag, off, reflectors }
}

/// Implicit QL on a symmetric tridiagonal matrix. `d` receives the
/// eigenvalues. Rotations are applied to `z`, whose rows are basis vectors.
fn tql(d: &mut [f64], e: &mut [f64], mut z: Option<&mut [Vec<f64>]>) -> Result<()> {
    let n = d.len();
    // Off-diagonals are negligible relative to the largest row norm seen so
    // far; a purely local test stalls on rank-deficient matrices.
    let mut scale: f64 = 0.0;
    for l in 0..n {
        scale = scale.max(d[l].abs() + e[l].abs());
        let mut iterations = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                if e[m].abs() <= f64::EPSILON * scale {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iterations += 1;
            if iterations > MAX_QL_ITERATIONS {
                return Err(Error::NoConvergence { index: l, iterations });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                if let Some(z) = z.as_deref_mut() {
                    let (lo, hi) = z.split_at_mut(i + 1);
                    for (zi, zi1) in lo[i].iter_mut().zip(hi[0].iter_mut()) {
                        let f = *zi1;
                        *zi1 = s * *zi + c * f;
                        *zi = c * *zi - s * f;
                    }
                }
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

fn sorted_descending(values: Vec<f64>, vectors: Vec<Vec<f64>>) -> SymmetricEigen {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    SymmetricEigen {
        values: order.iter().map(|&i| values[i]).collect(),
        vectors: order.iter().map(|&i| vectors[i].clone()).collect(),
    }
}

/// Every eigenpair of the symmetric row-major `m × m` matrix `a`.
pub fn symmetric_eigen(a: &[f64], m: usize) -> Result<SymmetricEigen> {
    check_square(a, m)?;
    let tri = tridiagonalize(a, m);
    let mut d = tri.diag.clone();
    let mut e = tri.off.clone();
    let mut z: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut row = vec![0.0; m];
            row[i] = 1.0;
            row
        })
        .collect();
    tql(&mut d, &mut e, Some(&mut z))?;
    for v in z.iter_mut() {
        tri.back_transform(v);
    }
    Ok(sorted_descending(d, z))
}

/// LU factorization with partial pivoting of `T - shift I`.
struct ShiftedLu {
    dl: Vec<f64>,
    d: Vec<f64>,
    du: Vec<f64>,
    du2: Vec<f64>,
    swapped: Vec<bool>,
}

impl ShiftedLu {
    fn new(diag: &[f64], off: &[f64], shift: f64, tiny: f64) -> Self {
        let n = diag.len();
        let mut dl: Vec<f64> = off[..n.saturating_sub(1)].to_vec();
        let mut du = dl.clone();
        let mut d: Vec<f64> = diag.iter().map(|x| x - shift).collect();
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        for i in 0..n.saturating_sub(1) {
            if d[i].abs() >= dl[i].abs() {
                if d[i] != 0.0 {
                    let fact = dl[i] / d[i];
                    dl[i] = fact;
                    d[i + 1] -= fact * du[i];
                }
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] *= -fact;
                }
                swapped[i] = true;
            }
        }
        for x in d.iter_mut() {
            if x.abs() < tiny {
                *x = if *x < 0.0 { -tiny } else { tiny };
            }
        }
        Self { dl, d, du, du2, swapped }
    }

    fn solve(&self, b: &mut [f64]) {
        let n = self.d.len();
        for i in 0..n.saturating_sub(1) {
            if self.swapped[i] {
                let temp = b[i];
                b[i] = b[i + 1];
                b[i + 1] = temp - self.dl[i] * b[i];
            } else {
                b[i + 1] -= self.dl[i] * b[i];
            }
        }
        b[n - 1] /= self.d[n - 1];
        if n >= 2 {
            b[n - 2] = (b[n - 2] - self.du[n - 2] * b[n - 1]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
    }
}

fn tridiagonal_residual(diag: &[f64], off: &[f64], lambda: f64, x: &[f64]) -> f64 {
    let n = diag.len();
    let mut sum = 0.0;
    for i in 0..n {
        let mut y = (diag[i] - lambda) * x[i];
        if i > 0 {
            y += off[i - 1] * x[i - 1];
        }
        if i + 1 < n {
            y += off[i] * x[i + 1];
        }
        sum += y * y;
    }
    sum.sqrt()
}

/// The `k` largest eigenpairs of the symmetric row-major `m × m` matrix `a`.
pub fn top_eigenpairs(a: &[f64], m: usize, k: usize) -> Result<SymmetricEigen> {
    check_square(a, m)?;
    if k == 0 || k > m {
        return Err(Error::Domain(format!("requested {k} eigenpairs of a {m}x{m} matrix")));
    }
    if m <= 64 || 4 * k >= m {
        let mut full = symmetric_eigen(a, m)?;
        full.values.truncate(k);
        full.vectors.truncate(k);
        return Ok(full);
    }
    match selective(a, m, k)? {
        Some(eig) => Ok(eig),
        None => {
            // Tightly clustered spectrum; the rotation-based solver is robust there.
            let mut full = symmetric_eigen(a, m)?;
            full.values.truncate(k);
            full.vectors.truncate(k);
            Ok(full)
        }
    }
}

/// Inverse iteration for the `k` largest eigenpairs. `None` if some vector
/// fails to converge.
fn selective(a: &[f64], m: usize, k: usize) -> Result<Option<SymmetricEigen>> {
    let tri = tridiagonalize(a, m);
    let mut d = tri.diag.clone();
    let mut e = tri.off.clone();
    tql(&mut d, &mut e, None)?;
    d.sort_by(|x, y| y.total_cmp(x));
    let values: Vec<f64> = d[..k].to_vec();

    let norm = tri.norm().max(f64::MIN_POSITIVE);
    let tiny = f64::EPSILON * norm;
    let separation = 10.0 * f64::EPSILON * norm;
    let mut rng = stream_rng(START_VECTOR_SEED, m as u64);
    let mut tri_vectors: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut cluster_start = 0;
    let mut shift = f64::INFINITY;
    for j in 0..k {
        let lambda = values[j];
        if j > 0 && values[j - 1] - lambda > CLUSTER_GAP * norm {
            cluster_start = j;
        }
        // Equal eigenvalues get distinct shifts so the solves do not coincide.
        shift = if j > 0 && shift - lambda < separation { shift - separation } else { lambda };
        let lu = ShiftedLu::new(&tri.diag, &tri.off, shift, tiny);
        let mut x: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        normalize(&mut x);
        let mut converged = false;
        for _ in 0..MAX_INVERSE_ITERATIONS {
            lu.solve(&mut x);
            for prev in &tri_vectors[cluster_start..j] {
                let c = dot(prev, &x);
                axpy(-c, prev, &mut x);
            }
            if normalize(&mut x) == 0.0 {
                x = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
                normalize(&mut x);
                continue;
            }
            if tridiagonal_residual(&tri.diag, &tri.off, lambda, &x) <= 1e-12 * norm {
                converged = true;
                break;
            }
        }
        if !converged {
            return Ok(None);
        }
        tri_vectors.push(x);
    }
    for v in tri_vectors.iter_mut() {
        tri.back_transform(v);
        normalize(v);
    }
    Ok(Some(SymmetricEigen { values, vectors: tri_vectors }))
}

/// Largest `‖A v - λ v‖ / ‖v‖` over the returned pairs.
pub fn max_residual(a: &[f64], m: usize, eig: &SymmetricEigen) -> f64 {
    eig.values
        .iter()
        .zip(&eig.vectors)
        .map(|(&lambda, v)| {
            let r: f64 = (0..m)
                .map(|i| {
                    let y = dot(&a[i * m..(i + 1) * m], v) - lambda * v[i];
                    y * y
                })
                .sum();
            r.sqrt() / dot(v, v).sqrt()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_symmetric(m: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, 0);
        let mut a = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..=i {
                let x: f64 = rng.random_range(-1.0..1.0);
                a[i * m + j] = x;
                a[j * m + i] = x;
            }
        }
        a
    }

    /// Jacobi rotation sweeps: an independent eigenvalue oracle.
    fn jacobi_eigenvalues(a: &[f64], m: usize) -> Vec<f64> {
        let mut a = a.to_vec();
        for _ in 0..100 {
            let off: f64 = (0..m).flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i * m + j].powi(2)).sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..m {
                for q in p + 1..m {
                    let apq = a[p * m + q];
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q * m + q] - a[p * m + p]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..m {
                        let akp = a[k * m + p];
                        let akq = a[k * m + q];
                        a[k * m + p] = c * akp - s * akq;
                        a[k * m + q] = s * akp + c * akq;
                    }
                    for k in 0..m {
                        let apk = a[p * m + k];
                        let aqk = a[q * m + k];
                        a[p * m + k] = c * apk - s * aqk;
                        a[q * m + k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut d: Vec<f64> = (0..m).map(|i| a[i * m + i]).collect();
        d.sort_by(|x, y| y.total_cmp(x));
        d
    }

    #[test]
    fn full_solver_matches_jacobi() {
        for (m, seed) in [(1, 1), (2, 2), (3, 3), (7, 4), (30, 5)] {
            let a = random_symmetric(m, seed);
            let eig = symmetric_eigen(&a, m).unwrap();
            let oracle = jacobi_eigenvalues(&a, m);
            for (x, y) in eig.values.iter().zip(&oracle) {
                assert!((x - y).abs() < 1e-10, "m={m}: {x} vs {y}");
            }
            assert!(max_residual(&a, m, &eig) < 1e-10);
        }
    }

    #[test]
    fn diagonal_matrix() {
        let a = [3.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 2.0];
        let eig = symmetric_eigen(&a, 3).unwrap();
        assert_eq!(eig.values, vec![3.0, 2.0, -1.0]);
        assert!((eig.vectors[0][0].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn eigenvectors_are_orthonormal() {
        let m = 40;
        let a = random_symmetric(m, 9);
        let eig = symmetric_eigen(&a, m).unwrap();
        for i in 0..m {
            for j in 0..m {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot(&eig.vectors[i], &eig.vectors[j]) - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn selective_matches_full_on_random_matrix() {
        let m = 150;
        let a = random_symmetric(m, 11);
        let full = symmetric_eigen(&a, m).unwrap();
        let top = selective(&a, m, 12).unwrap().expect("inverse iteration converges");
        for j in 0..12 {
            assert!((full.values[j] - top.values[j]).abs() < 1e-10);
            assert!((dot(&full.vectors[j], &top.vectors[j]).abs() - 1.0).abs() < 1e-8);
        }
        assert!(max_residual(&a, m, &top) < 1e-8);
    }

    #[test]
    fn selective_handles_repeated_eigenvalues() {
        // Block-diagonal all-ones blocks: eigenvalue 10 with multiplicity 12.
        let (blocks, size) = (12, 10);
        let m = blocks * size;
        let mut a = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                if i / size == j / size {
                    a[i * m + j] = 1.0;
                }
            }
        }
        let top = selective(&a, m, 12).unwrap().expect("inverse iteration converges");
        assert!(top.values.iter().all(|v| (v - 10.0).abs() < 1e-10));
        assert!(max_residual(&a, m, &top) < 1e-8);
        for i in 0..12 {
            for j in 0..i {
                assert!(dot(&top.vectors[i], &top.vectors[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rank_deficient_matrix_converges() {
        // Gram matrix of 300 vectors in 5 dimensions: 295 zero eigenvalues.
        let (m, d) = (300, 5);
        let mut rng = stream_rng(21, 0);
        let x: Vec<f64> = (0..m * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a: Vec<f64> = (0..m * m).map(|ij| dot(&x[ij / m * d..ij / m * d + d], &x[ij % m * d..ij % m * d + d])).collect();
        let full = symmetric_eigen(&a, m).unwrap();
        assert!(max_residual(&a, m, &full) < 1e-8);
        assert!(full.values[d..].iter().all(|v| v.abs() < 1e-10));
        let top = top_eigenpairs(&a, m, 8).unwrap();
        assert!(max_residual(&a, m, &top) < 1e-8);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(symmetric_eigen(&[1.0, 2.0], 2).is_err());
        assert!(symmetric_eigen(&[f64::NAN], 1).is_err());
        assert!(top_eigenpairs(&[1.0], 1, 2).is_err());
    }
}
