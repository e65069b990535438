//! Relaxed normalized cut: the second-smallest generalized eigenpair of
//! `(D - E) y = λ D y`, solved through the symmetric normalized Laplacian
//! `L = D^{-1/2} (D - E) D^{-1/2}` with `y = D^{-1/2} z`.
//!
//! The null vector of `L` is known in closed form (`z0 = D^{1/2} 1`), so the
//! returned `z1` is explicitly re-orthogonalized against it before mapping back.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AffinityGraph;

/// Largest accepted generalized-eigensystem residual.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;
/// Eigenvalue gap below which the second eigenvalue is reported as repeated.
pub const MULTIPLICITY_GAP: f64 = 1e-12;
/// Node count above which [`EigenMethod::Auto`] switches to Lanczos.
pub const DENSE_LIMIT: usize = 4096;
/// Largest graph accepted by [`brute_force_min_ncut`].
pub const BRUTE_FORCE_LIMIT: usize = 16;

const SYMMETRIC_EIGEN_EPS: f64 = 1e-15;
const SYMMETRIC_EIGEN_MAX_ITER: usize = 0;
const INVERSE_ITERATION_OFFSET: f64 = 1e-10;
const INVERSE_ITERATION_STEPS: usize = 8;
const INVERSE_ITERATION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigenMethod {
    /// Dense up to [`DENSE_LIMIT`] nodes, Lanczos beyond.
    #[default]
    Auto,
    Dense,
    Lanczos,
}

/// Second-smallest generalized eigenpair plus diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct CutSolution {
    pub lambda1: f64,
    /// Unit-norm eigenvector, signed so its largest-magnitude entry is positive.
    pub y1: Vec<f64>,
    /// `‖(D − E) y1 − λ1 D y1‖ / ‖D y1‖`.
    pub residual: f64,
    /// `|λ0|`, ideally zero.
    pub lambda0_check: f64,
    /// Set when `λ1` and `λ2` coincide to within [`MULTIPLICITY_GAP`].
    pub repeated_eigenvalue: bool,
}

pub fn solve_second_eigenpair(graph: &AffinityGraph) -> Result<CutSolution> {
    solve_second_eigenpair_with(graph, EigenMethod::Auto)
}

pub fn solve_second_eigenpair_with(graph: &AffinityGraph, method: EigenMethod) -> Result<CutSolution> {
    let n = graph.n();
    let degrees = graph.degrees();
    if let Some(i) = degrees.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::Input(format!("node {i} has non-positive degree")));
    }
    let inv_sqrt: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    let laplacian = normalized_laplacian(graph, &inv_sqrt);

    let mut z0 = DVector::from_iterator(n, degrees.iter().map(|d| d.sqrt()));
    z0.normalize_mut();

    let method = match method {
        EigenMethod::Auto if n <= DENSE_LIMIT => EigenMethod::Dense,
        EigenMethod::Auto => EigenMethod::Lanczos,
        m => m,
    };
    let pair = match method {
        EigenMethod::Lanczos => lanczos_second_pair(&laplacian, &z0)?,
        _ => dense_second_pair(laplacian, &z0)?,
    };

    let mut z1 = pair.vector;
    let overlap = z1.dot(&z0);
    z1.axpy(-overlap, &z0, 1.0);
    let zn = z1.norm();
    if !(zn > 0.0) || !zn.is_finite() {
        return Err(Error::Solver { residual: f64::INFINITY });
    }
    z1 /= zn;

    let mut y1: Vec<f64> = z1.iter().zip(&inv_sqrt).map(|(z, s)| z * s).collect();
    let yn = y1.iter().map(|v| v * v).sum::<f64>().sqrt();
    y1.iter_mut().for_each(|v| *v /= yn);
    fix_sign(&mut y1);

    let lambda1 = rayleigh_quotient(graph, &y1);
    let residual = generalized_residual(graph, &y1, lambda1);
    if !(residual <= RESIDUAL_TOLERANCE) {
        return Err(Error::Solver { residual });
    }

    Ok(CutSolution {
        lambda1,
        y1,
        residual,
        lambda0_check: pair.lambda0.abs(),
        repeated_eigenvalue: pair
            .lambda2
            .is_some_and(|l2| (l2 - pair.lambda1).abs() <= MULTIPLICITY_GAP),
    })
}

struct SecondPair {
    lambda0: f64,
    lambda1: f64,
    lambda2: Option<f64>,
    vector: DVector<f64>,
}

fn normalized_laplacian(graph: &AffinityGraph, inv_sqrt: &[f64]) -> DMatrix<f64> {
    let n = graph.n();
    DMatrix::from_fn(n, n, |i, j| {
        // s_i * s_j is commutative, so the product below is exactly symmetric.
        let scaled = (inv_sqrt[i] * inv_sqrt[j]) * graph.edge(i, j);
        if i == j {
            1.0 - scaled
        } else {
            -scaled
        }
    })
}

fn sorted_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    order
}

/// Dense path: eigenvalues from the symmetric QR algorithm, then `z1` by
/// shifted inverse iteration deflated against `z0`. Only one eigenvector is
/// needed, which is several times cheaper than the full decomposition; the
/// full decomposition remains as a fallback if inverse iteration stalls.
fn dense_second_pair(laplacian: DMatrix<f64>, z0: &DVector<f64>) -> Result<SecondPair> {
    let values = laplacian.clone().symmetric_eigenvalues();
    let order = sorted_order(values.as_slice());
    let lambda1 = values[order[1]];
    let vector = match inverse_iteration(&laplacian, lambda1, z0) {
        Some(v) => v,
        None => full_decomposition_vector(laplacian)?,
    };
    Ok(SecondPair {
        lambda0: values[order[0]],
        lambda1,
        lambda2: order.get(2).map(|&k| values[k]),
        vector,
    })
}

fn full_decomposition_vector(laplacian: DMatrix<f64>) -> Result<DVector<f64>> {
    let eig = SymmetricEigen::try_new(laplacian, SYMMETRIC_EIGEN_EPS, SYMMETRIC_EIGEN_MAX_ITER)
        .ok_or(Error::Solver { residual: f64::INFINITY })?;
    let order = sorted_order(eig.eigenvalues.as_slice());
    Ok(eig.eigenvectors.column(order[1]).into_owned())
}

fn inverse_iteration(laplacian: &DMatrix<f64>, lambda: f64, z0: &DVector<f64>) -> Option<DVector<f64>> {
    let n = laplacian.nrows();
    // Shifting slightly below the eigenvalue keeps the factorization nonsingular.
    let shift = lambda - INVERSE_ITERATION_OFFSET;
    let mut shifted = laplacian.clone();
    for i in 0..n {
        shifted[(i, i)] -= shift;
    }
    let lu = shifted.lu();
    let deflate = |x: &mut DVector<f64>| -> Option<()> {
        let overlap = x.dot(z0);
        x.axpy(-overlap, z0, 1.0);
        let norm = x.norm();
        (norm > 0.0 && norm.is_finite()).then(|| *x /= norm)
    };
    // Deterministic start vector with no special alignment to the graph.
    let mut x = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_749_895).fract());
    deflate(&mut x)?;
    for _ in 0..INVERSE_ITERATION_STEPS {
        x = lu.solve(&x)?;
        deflate(&mut x)?;
        let lx = laplacian * &x;
        let rayleigh = x.dot(&lx);
        if (lx - &x * rayleigh).norm() <= INVERSE_ITERATION_TOLERANCE {
            return Some(x);
        }
    }
    None
}

/// Lanczos with full reorthogonalization on the complement of `z0`.
///
/// The Krylov basis grows until the smallest Ritz pair meets the residual
/// tolerance; at `n - 1` vectors the projection is exact.
fn lanczos_second_pair(laplacian: &DMatrix<f64>, z0: &DVector<f64>) -> Result<SecondPair> {
    let n = laplacian.nrows();
    let max_dim = n - 1;
    let target = RESIDUAL_TOLERANCE * 1e-3;

    let mut start = DVector::from_fn(n, |i, _| {
        // Deterministic, non-degenerate start vector.
        let x = (i as f64 + 1.0) * 0.618_033_988_749_894_9;
        (x - x.floor()) - 0.5
    });
    start.axpy(-start.dot(z0), z0, 1.0);
    start.normalize_mut();

    let mut basis: Vec<DVector<f64>> = vec![start];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut check_at = 32.min(max_dim);
    let breakdown = f64::EPSILON * laplacian.norm();

    loop {
        let k = basis.len() - 1;
        let mut w = laplacian * &basis[k];
        let alpha = w.dot(&basis[k]);
        alphas.push(alpha);
        // Two passes of classical Gram-Schmidt against z0 and the whole basis.
        for _ in 0..2 {
            w.axpy(-w.dot(z0), z0, 1.0);
            for q in &basis {
                w.axpy(-w.dot(q), q, 1.0);
            }
        }
        let beta = w.norm();
        let exhausted = basis.len() == max_dim || beta <= breakdown;

        if basis.len() >= check_at || exhausted {
            let m = basis.len();
            let tri = DMatrix::from_fn(m, m, |i, j| {
                if i == j {
                    alphas[i]
                } else if i + 1 == j {
                    betas[i]
                } else if j + 1 == i {
                    betas[j]
                } else {
                    0.0
                }
            });
            let eig = SymmetricEigen::try_new(tri, SYMMETRIC_EIGEN_EPS, SYMMETRIC_EIGEN_MAX_ITER)
                .ok_or(Error::Solver { residual: f64::INFINITY })?;
            let values = eig.eigenvalues.as_slice();
            let order = sorted_order(values);
            let s = eig.eigenvectors.column(order[0]);
            let ritz_residual = (beta * s[m - 1]).abs();
            if ritz_residual <= target || exhausted {
                let mut vector = DVector::zeros(n);
                for (q, &c) in basis.iter().zip(s.iter()) {
                    vector.axpy(c, q, 1.0);
                }
                return Ok(SecondPair {
                    lambda0: (laplacian * z0).dot(z0),
                    lambda1: values[order[0]],
                    lambda2: order.get(1).map(|&i| values[i]),
                    vector,
                });
            }
            check_at = (check_at * 2).min(max_dim);
        }

        betas.push(beta);
        basis.push(w / beta);
    }
}

/// Flips `y` so its largest-magnitude entry (lowest index on ties) is positive.
pub fn fix_sign(y: &mut [f64]) {
    if let Some(at) = argmax_abs(y) {
        if y[at] < 0.0 {
            y.iter_mut().for_each(|v| *v = -*v);
        }
    }
}

/// Index of the largest `|y_i|`, lowest index on ties.
pub fn argmax_abs(y: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in y.iter().enumerate() {
        let m = v.abs();
        if best.is_none_or(|(_, b)| m > b) {
            best = Some((i, m));
        }
    }
    best.map(|(i, _)| i)
}

/// `yᵀ(D − E)y / yᵀDy`, with the numerator summed as `Σ_{i<j} E_ij (y_i − y_j)²`.
pub fn rayleigh_quotient(graph: &AffinityGraph, y: &[f64]) -> f64 {
    let n = graph.n();
    let mut num = 0.0;
    for i in 0..n {
        let row = graph.row(i);
        for j in (i + 1)..n {
            let diff = y[i] - y[j];
            num += row[j] * diff * diff;
        }
    }
    let den: f64 = graph.degrees().iter().zip(y).map(|(d, v)| d * v * v).sum();
    num / den
}

/// `‖(D − E) y − λ D y‖₂ / ‖D y‖₂`.
pub fn generalized_residual(graph: &AffinityGraph, y: &[f64], lambda: f64) -> f64 {
    let degrees = graph.degrees();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..graph.n() {
        let ey: f64 = graph.row(i).iter().zip(y).map(|(e, v)| e * v).sum();
        let dy = degrees[i] * y[i];
        let r = dy - ey - lambda * dy;
        num += r * r;
        den += dy * dy;
    }
    (num / den).sqrt()
}

/// Ncut energy `cut(A,B)/assoc(A,V) + cut(A,B)/assoc(B,V)`; `in_a[i]` marks side A.
pub fn ncut_energy(graph: &AffinityGraph, in_a: &[bool]) -> Result<f64> {
    let n = graph.n();
    if in_a.len() != n {
        return Err(Error::Input(format!(
            "labels cover {} nodes, graph has {n}",
            in_a.len()
        )));
    }
    let size_a = in_a.iter().filter(|&&a| a).count();
    if size_a == 0 || size_a == n {
        return Err(Error::Domain("both sides of the bipartition must be non-empty".into()));
    }
    let (mut cut, mut assoc_a, mut assoc_b) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let row = graph.row(i);
        for j in 0..n {
            let w = row[j];
            if in_a[i] {
                assoc_a += w;
                if !in_a[j] {
                    cut += w;
                }
            } else {
                assoc_b += w;
            }
        }
    }
    Ok(cut / assoc_a + cut / assoc_b)
}

/// Exact minimum Ncut by enumerating all non-trivial bipartitions (node 0 fixed in A).
pub fn brute_force_min_ncut(graph: &AffinityGraph) -> Result<(Vec<bool>, f64)> {
    let n = graph.n();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::Domain(format!(
            "brute-force Ncut refused for {n} nodes (limit {BRUTE_FORCE_LIMIT})"
        )));
    }
    let mut best: Option<(Vec<bool>, f64)> = None;
    // Bit i-1 of `mask` places node i in B.
    for mask in 1u32..(1u32 << (n - 1)) {
        let labels: Vec<bool> = (0..n)
            .map(|i| i == 0 || mask & (1 << (i - 1)) == 0)
            .collect();
        let energy = ncut_energy(graph, &labels)?;
        if best.as_ref().is_none_or(|(_, e)| energy < *e) {
            best = Some((labels, energy));
        }
    }
    best.ok_or_else(|| Error::Domain("graph has no bipartition".into()))
}
