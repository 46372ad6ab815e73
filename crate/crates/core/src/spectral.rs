//! Chebyshev grids on `[0, L]` and the dense spectral operators built on
//! them: barycentric differentiation, integration pseudo-inverse,
//! resampling (interpolant evaluation), and Clenshaw-Curtis quadrature.
//!
//! Node ordering is ascending arclength everywhere. Differentiation
//! matrices use the barycentric form with the negative-sum trick on the
//! diagonal; this keeps the conditioning comfortable for N <= 40.

use crate::error::{Error, Result};
use crate::linalg;
use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

/// Chebyshev grid family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    /// Endpoints excluded: nodes are images of cos((2k-1)pi/(2n)).
    Type1,
    /// Endpoints included: nodes are images of cos(k pi/(n-1)).
    Type2,
}

/// A Chebyshev collocation grid on `[0, L]`, nodes ascending.
#[derive(Debug, Clone)]
pub struct ChebyshevGrid {
    pub kind: GridKind,
    pub n: usize,
    pub length: f64,
    pub nodes: Vec<f64>,
    /// Barycentric weights up to a common factor, matching `nodes` order.
    bary: Vec<f64>,
}

/// Build a grid of the requested kind.
pub fn build_grid(kind: GridKind, n: usize, length: f64) -> Result<ChebyshevGrid> {
    if n < 2 && kind == GridKind::Type2 {
        return Err(Error::invalid(format!("type 2 grid needs n >= 2, got {n}")));
    }
    if n < 1 {
        return Err(Error::invalid("grid needs n >= 1"));
    }
    if !(length > 0.0) {
        return Err(Error::invalid(format!("length must be positive, got {length}")));
    }
    let (nodes, bary) = match kind {
        GridKind::Type1 => {
            // ascending images of cos((2k-1)pi/(2n)), k = n..1
            let nodes: Vec<f64> = (0..n)
                .map(|r| {
                    let theta = (2.0 * (n - r) as f64 - 1.0) * PI / (2.0 * n as f64);
                    0.5 * length * (1.0 + theta.cos())
                })
                .collect();
            let bary: Vec<f64> = (0..n)
                .map(|r| {
                    let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
                    sign * ((2.0 * r as f64 + 1.0) * PI / (2.0 * n as f64)).sin()
                })
                .collect();
            (nodes, bary)
        }
        GridKind::Type2 => {
            let m = n - 1;
            let nodes: Vec<f64> = (0..n)
                .map(|j| {
                    // s_j = L sin^2(j pi / (2m)) is monotone ascending and hits
                    // the endpoints exactly.
                    let half = (j as f64 * PI / (2.0 * m as f64)).sin();
                    length * half * half
                })
                .collect();
            let bary: Vec<f64> = (0..n)
                .map(|j| {
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    let delta = if j == 0 || j == m { 0.5 } else { 1.0 };
                    sign * delta
                })
                .collect();
            (nodes, bary)
        }
    };
    Ok(ChebyshevGrid {
        kind,
        n,
        length,
        nodes,
        bary,
    })
}

impl ChebyshevGrid {
    /// Barycentric differentiation matrix: maps nodal values of a
    /// degree-(n-1) polynomial to nodal values of its derivative.
    pub fn differentiation_matrix(&self) -> DMatrix<f64> {
        let n = self.n;
        assert!(n >= 2, "differentiation needs at least 2 nodes");
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    d[(i, j)] =
                        (self.bary[j] / self.bary[i]) / (self.nodes[i] - self.nodes[j]);
                }
            }
        }
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                if j != i {
                    sum += d[(i, j)];
                }
            }
            d[(i, i)] = -sum;
        }
        d
    }

    /// Resampling matrix: each row evaluates the grid's polynomial
    /// interpolant at one target arclength. Exact node hits give unit rows.
    pub fn resampling_matrix(&self, targets: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let mut e = DMatrix::zeros(targets.len(), n);
        for (r, &t) in targets.iter().enumerate() {
            if let Some(j) = self.nodes.iter().position(|&s| s == t) {
                e[(r, j)] = 1.0;
                continue;
            }
            let mut denom = 0.0;
            let mut terms = vec![0.0; n];
            for j in 0..n {
                let w = self.bary[j] / (t - self.nodes[j]);
                terms[j] = w;
                denom += w;
            }
            for j in 0..n {
                e[(r, j)] = terms[j] / denom;
            }
        }
        e
    }

    /// Clenshaw-Curtis quadrature weights on `[0, L]`; type 2 grids only.
    pub fn clenshaw_curtis_weights(&self) -> Result<DVector<f64>> {
        if self.kind != GridKind::Type2 {
            return Err(Error::invalid(
                "Clenshaw-Curtis weights are defined for endpoint (type 2) grids",
            ));
        }
        let m = self.n - 1;
        let mut w = DVector::zeros(self.n);
        if m == 0 {
            w[0] = self.length;
            return Ok(w);
        }
        // Weights for nodes cos(j pi / m) on [-1, 1] (Trefethen's clencurt),
        // symmetric in j so ascending order needs no reindexing.
        let end = if m % 2 == 0 {
            1.0 / (m * m - 1) as f64
        } else {
            1.0 / (m * m) as f64
        };
        w[0] = end;
        w[m] = end;
        for j in 1..m {
            let theta = j as f64 * PI / m as f64;
            let mut v = 1.0;
            if m % 2 == 0 {
                for k in 1..m / 2 {
                    v -= 2.0 * (2.0 * k as f64 * theta).cos() / (4 * k * k - 1) as f64;
                }
                v -= (m as f64 * theta).cos() / (m * m - 1) as f64;
            } else {
                for k in 1..=(m - 1) / 2 {
                    v -= 2.0 * (2.0 * k as f64 * theta).cos() / (4 * k * k - 1) as f64;
                }
            }
            w[j] = 2.0 * v / m as f64;
        }
        // map [-1,1] -> [0,L]
        Ok(w * (self.length / 2.0))
    }
}

/// Integration pseudo-inverse of a differentiation matrix, computed once
/// by SVD and cached by the workspace.
pub fn integration_pseudoinverse(d: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::pinv(d, 1e-12)
}

/// Precomputed grids and operators for one `(N, L)` discretization.
///
/// `n_tau = N` tangent nodes live on the type 1 grid; positions live on the
/// `N+1` type 2 grid; energies are integrated on the `2(N+1)` grid.
#[derive(Debug, Clone)]
pub struct SpectralWorkspace {
    pub n_tau: usize,
    pub n_x: usize,
    pub length: f64,
    pub grid_tau: ChebyshevGrid,
    pub grid_x: ChebyshevGrid,
    pub grid_2x: ChebyshevGrid,
    /// Differentiation matrix on the N+1 grid.
    pub d_x: DMatrix<f64>,
    /// Pseudo-inverse of `d_x`.
    pub d_x_pinv: DMatrix<f64>,
    /// Upsampling N -> N+1.
    pub e_up: DMatrix<f64>,
    /// Downsampling N+1 -> N.
    pub e_down: DMatrix<f64>,
    /// Midpoint evaluation row on the N+1 grid.
    pub e_mp: DMatrix<f64>,
    /// Upsampling N+1 -> 2(N+1).
    pub e_2x: DMatrix<f64>,
    /// Clenshaw-Curtis weights on the 2(N+1) grid (diagonal).
    pub w_2x: DVector<f64>,
    /// Extended weights W~ = E^T W_2x E, scalar (N+1) x (N+1).
    pub w_tilde: DMatrix<f64>,
    pub w_tilde_inv: DMatrix<f64>,
    /// Symmetric square root of W~ and its inverse.
    pub w_tilde_half: DMatrix<f64>,
    pub w_tilde_inv_half: DMatrix<f64>,
}

impl SpectralWorkspace {
    pub fn new(n_tau: usize, length: f64) -> Result<Self> {
        if n_tau < 2 {
            return Err(Error::invalid("workspace needs N >= 2"));
        }
        let n_x = n_tau + 1;
        let grid_tau = build_grid(GridKind::Type1, n_tau, length)?;
        let grid_x = build_grid(GridKind::Type2, n_x, length)?;
        let grid_2x = build_grid(GridKind::Type2, 2 * n_x, length)?;
        let d_x = grid_x.differentiation_matrix();
        let d_x_pinv = integration_pseudoinverse(&d_x);
        let e_up = grid_tau.resampling_matrix(&grid_x.nodes);
        let e_down = grid_x.resampling_matrix(&grid_tau.nodes);
        let e_mp = grid_x.resampling_matrix(&[length / 2.0]);
        let e_2x = grid_x.resampling_matrix(&grid_2x.nodes);
        let w_2x = grid_2x.clenshaw_curtis_weights()?;
        let mut w_tilde = DMatrix::zeros(n_x, n_x);
        // W~ = E^T diag(w) E
        for i in 0..n_x {
            for j in 0..n_x {
                let mut acc = 0.0;
                for q in 0..2 * n_x {
                    acc += e_2x[(q, i)] * w_2x[q] * e_2x[(q, j)];
                }
                w_tilde[(i, j)] = acc;
            }
        }
        // symmetrize away roundoff so downstream eigensolves see an exactly
        // symmetric matrix
        w_tilde = (&w_tilde + w_tilde.transpose()) * 0.5;
        let w_tilde_inv = w_tilde
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::invalid("W~ not invertible"))?;
        let w_tilde_half = linalg::sym_sqrt(&w_tilde, 1e-14);
        let w_tilde_inv_half = linalg::sym_sqrt(&w_tilde_inv, 1e-14);
        Ok(SpectralWorkspace {
            n_tau,
            n_x,
            length,
            grid_tau,
            grid_x,
            grid_2x,
            d_x,
            d_x_pinv,
            e_up,
            e_down,
            e_mp,
            e_2x,
            w_2x,
            w_tilde,
            w_tilde_inv,
            w_tilde_half,
            w_tilde_inv_half,
        })
    }

    /// Uniform-site resampling matrix for `n_sites` binding sites on [0, L].
    pub fn uniform_site_matrix(&self, n_sites: usize) -> DMatrix<f64> {
        let sites = uniform_sites(self.length, n_sites);
        self.grid_x.resampling_matrix(&sites)
    }

    /// Upsampling matrix from the N+1 grid to a type 2 grid of size n_up.
    pub fn upsampling_to(&self, n_up: usize) -> Result<(ChebyshevGrid, DMatrix<f64>)> {
        let grid_up = build_grid(GridKind::Type2, n_up, self.length)?;
        let e = self.grid_x.resampling_matrix(&grid_up.nodes);
        Ok((grid_up, e))
    }
}

/// Uniformly spaced binding sites, endpoints included.
pub fn uniform_sites(length: f64, n_sites: usize) -> Vec<f64> {
    assert!(n_sites >= 2);
    (0..n_sites)
        .map(|k| length * k as f64 / (n_sites - 1) as f64)
        .collect()
}
