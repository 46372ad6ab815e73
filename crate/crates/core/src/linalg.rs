//! Small dense linear-algebra helpers shared across modules.
//!
//! Vector fields on a grid of `n` nodes are flattened node-major:
//! `v[3p + d]` is component `d` of the 3-vector at node `p`. Scalar
//! operators (differentiation, resampling, quadrature) act per component
//! and are lifted to the flattened layout with [`lift3`].

use nalgebra::{DMatrix, DVector, Vector3};

/// Lift a scalar nodal operator `A` (m x n) to act blockwise on flattened
/// 3-vector fields: `lift3(A)[3i+d, 3j+e] = A[i,j] * delta_de`.
pub fn lift3(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = a.shape();
    let mut out = DMatrix::zeros(3 * m, 3 * n);
    for i in 0..m {
        for j in 0..n {
            let v = a[(i, j)];
            if v != 0.0 {
                for d in 0..3 {
                    out[(3 * i + d, 3 * j + d)] = v;
                }
            }
        }
    }
    out
}

/// Apply a scalar nodal operator to a flattened 3-vector field without
/// forming the lifted matrix.
pub fn apply_scalar3(a: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let (m, n) = a.shape();
    assert_eq!(3 * n, v.len(), "apply_scalar3 length mismatch");
    let mut out = DVector::zeros(3 * m);
    for i in 0..m {
        let mut acc = [0.0; 3];
        for j in 0..n {
            let w = a[(i, j)];
            if w != 0.0 {
                acc[0] += w * v[3 * j];
                acc[1] += w * v[3 * j + 1];
                acc[2] += w * v[3 * j + 2];
            }
        }
        out[3 * i] = acc[0];
        out[3 * i + 1] = acc[1];
        out[3 * i + 2] = acc[2];
    }
    out
}

/// View node `p` of a flattened field as a `Vector3`.
pub fn node3(v: &DVector<f64>, p: usize) -> Vector3<f64> {
    Vector3::new(v[3 * p], v[3 * p + 1], v[3 * p + 2])
}

/// Write a `Vector3` into node `p` of a flattened field.
pub fn set_node3(v: &mut DVector<f64>, p: usize, x: Vector3<f64>) {
    v[3 * p] = x.x;
    v[3 * p + 1] = x.y;
    v[3 * p + 2] = x.z;
}

/// Flatten a list of 3-vectors.
pub fn flatten3(vs: &[Vector3<f64>]) -> DVector<f64> {
    let mut out = DVector::zeros(3 * vs.len());
    for (p, v) in vs.iter().enumerate() {
        set_node3(&mut out, p, *v);
    }
    out
}

/// Unflatten into a list of 3-vectors.
pub fn unflatten3(v: &DVector<f64>) -> Vec<Vector3<f64>> {
    assert_eq!(v.len() % 3, 0);
    (0..v.len() / 3).map(|p| node3(v, p)).collect()
}

/// Symmetric eigendecomposition, eigenvalues ascending.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut vals = DVector::zeros(n);
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        vals[k] = eig.eigenvalues[i];
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Symmetric positive-semidefinite square root by eigendecomposition.
/// Eigenvalues below `cutoff_rel * max_eig` are treated as zero.
pub fn sym_sqrt(m: &DMatrix<f64>, cutoff_rel: f64) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen(m);
    let max = vals.iter().cloned().fold(0.0_f64, f64::max);
    let cut = cutoff_rel * max;
    let mut scaled = vecs.clone();
    for k in 0..vals.len() {
        let s = if vals[k] > cut { vals[k].sqrt() } else { 0.0 };
        scaled.column_mut(k).scale_mut(s);
    }
    &scaled * vecs.transpose()
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix via
/// eigendecomposition, relative eigenvalue cutoff. Returns the
/// pseudo-inverse and the numerical rank.
pub fn sym_pinv(m: &DMatrix<f64>, cutoff_rel: f64) -> (DMatrix<f64>, usize) {
    let (vals, vecs) = sym_eigen(m);
    let max = vals.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let cut = cutoff_rel * max;
    let mut rank = 0;
    let mut scaled = vecs.clone();
    for k in 0..vals.len() {
        let s = if vals[k].abs() > cut {
            rank += 1;
            1.0 / vals[k]
        } else {
            0.0
        };
        scaled.column_mut(k).scale_mut(s);
    }
    (&scaled * vecs.transpose(), rank)
}

/// Pseudo-inverse of a general matrix via SVD.
pub fn pinv(m: &DMatrix<f64>, cutoff_rel: f64) -> DMatrix<f64> {
    m.clone()
        .pseudo_inverse(cutoff_rel * m.norm())
        .expect("svd failed")
}

/// Frobenius-relative distance between two matrices.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Mean and standard error of a slice.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Ordinary least-squares slope and intercept of y against x.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}
