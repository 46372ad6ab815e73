//! The discrete fiber: tangent-vector state, the position map and its
//! inverse, kinematic matrices, the rotation update, and bending
//! energy/forces.
//!
//! Degrees of freedom are `N` unit tangent vectors on the type 1 grid plus
//! the fiber midpoint; positions on the `N+1` type 2 grid follow by exact
//! spectral integration. The same linear maps exist for the blob-link
//! chain (see [`crate::bloblink`]), so the integrators work on either
//! discretization through [`FiberMaps`].

use crate::error::{Error, Result};
use crate::linalg::{self, apply_scalar3, lift3, node3, set_node3};
use crate::spectral::SpectralWorkspace;
use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

/// Langevin degrees of freedom: unit tangents and the fiber midpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberState {
    pub tangents: Vec<Vector3<f64>>,
    pub midpoint: Vector3<f64>,
}

impl FiberState {
    /// Construct, normalizing each tangent. Rejects zero tangents.
    pub fn new(tangents: Vec<Vector3<f64>>, midpoint: Vector3<f64>) -> Result<Self> {
        let mut ts = tangents;
        for t in &mut ts {
            let n = t.norm();
            if !(n > 1e-14) || !n.is_finite() {
                return Err(Error::invalid("tangent vector has zero or non-finite norm"));
            }
            *t /= n;
        }
        Ok(FiberState {
            tangents: ts,
            midpoint,
        })
    }

    /// Straight fiber along `dir` with midpoint at the origin.
    pub fn straight(n: usize, dir: Vector3<f64>) -> Self {
        let d = dir.normalize();
        FiberState {
            tangents: vec![d; n],
            midpoint: Vector3::zeros(),
        }
    }

    pub fn n_tangents(&self) -> usize {
        self.tangents.len()
    }

    /// Flattened X-bar vector [tau_1 .. tau_N, X_MP], length 3N+3.
    pub fn flat(&self) -> DVector<f64> {
        let n = self.tangents.len();
        let mut v = DVector::zeros(3 * n + 3);
        for (p, t) in self.tangents.iter().enumerate() {
            set_node3(&mut v, p, *t);
        }
        set_node3(&mut v, n, self.midpoint);
        v
    }

    pub fn from_flat(v: &DVector<f64>) -> Self {
        let n = v.len() / 3 - 1;
        FiberState {
            tangents: (0..n).map(|p| node3(v, p)).collect(),
            midpoint: node3(v, n),
        }
    }

    /// Largest deviation of any tangent norm from 1.
    pub fn max_norm_deviation(&self) -> f64 {
        self.tangents
            .iter()
            .map(|t| (t.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Renormalize tangents if any norm drifted beyond `tol`. Returns how
    /// many tangents were repaired; rotation preserves norms analytically,
    /// so repairs signal bugs upstream.
    pub fn repair_norms(&mut self, tol: f64) -> usize {
        let mut count = 0;
        for t in &mut self.tangents {
            if (t.norm() - 1.0).abs() > tol {
                *t /= t.norm();
                count += 1;
            }
        }
        count
    }
}

/// Nodal positions on the `N+1` grid, flattened node-major.
#[derive(Debug, Clone)]
pub struct FiberShape {
    pub positions: DVector<f64>,
}

impl FiberShape {
    pub fn n_nodes(&self) -> usize {
        self.positions.len() / 3
    }

    pub fn node(&self, p: usize) -> Vector3<f64> {
        node3(&self.positions, p)
    }
}

/// The linear position map `X = Xs * Xbar` and its exact inverse for one
/// discretization. Both are `3(N+1) x (3N+3)` (square, since the counts
/// coincide).
#[derive(Debug, Clone)]
pub struct FiberMaps {
    pub n_tau: usize,
    pub length: f64,
    /// Scalar (N+1) x N block of Xs acting on tangents.
    pub xs_tau_scalar: DMatrix<f64>,
    pub xs: DMatrix<f64>,
    pub xs_inv: DMatrix<f64>,
}

impl FiberMaps {
    /// Spectral maps: integrate upsampled tangents, anchor the midpoint.
    pub fn spectral(ws: &SpectralWorkspace) -> Self {
        let n = ws.n_tau;
        let n_x = ws.n_x;
        // A = (I - 1 e_mp) D^dagger E_up : tangents -> positions with zero
        // interpolated midpoint
        let a0 = &ws.d_x_pinv * &ws.e_up;
        let mp_row = &ws.e_mp * &a0; // 1 x N
        let mut a = a0.clone();
        for i in 0..n_x {
            for j in 0..n {
                a[(i, j)] -= mp_row[(0, j)];
            }
        }
        let mut xs = DMatrix::zeros(3 * n_x, 3 * n + 3);
        xs.view_mut((0, 0), (3 * n_x, 3 * n)).copy_from(&lift3(&a));
        for i in 0..n_x {
            for d in 0..3 {
                xs[(3 * i + d, 3 * n + d)] = 1.0;
            }
        }
        // Xs^{-1} = [E_down D ; E_mp]
        let ed = &ws.e_down * &ws.d_x;
        let mut xs_inv = DMatrix::zeros(3 * n + 3, 3 * n_x);
        xs_inv
            .view_mut((0, 0), (3 * n, 3 * n_x))
            .copy_from(&lift3(&ed));
        xs_inv
            .view_mut((3 * n, 0), (3, 3 * n_x))
            .copy_from(&lift3(&ws.e_mp));
        FiberMaps {
            n_tau: n,
            length: ws.length,
            xs_tau_scalar: a,
            xs,
            xs_inv,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_tau + 1
    }

    /// Positions from state.
    pub fn positions_from_state(&self, state: &FiberState) -> Result<FiberShape> {
        if state.n_tangents() != self.n_tau {
            return Err(Error::dim(format!(
                "state has {} tangents, maps built for {}",
                state.n_tangents(),
                self.n_tau
            )));
        }
        Ok(FiberShape {
            positions: &self.xs * state.flat(),
        })
    }

    /// Inverse map: (tangents, midpoint) extracted from nodal positions.
    /// Tangents are not normalized; callers decide whether non-unit output
    /// is an error.
    pub fn state_from_positions(&self, shape: &FiberShape) -> Result<(Vec<Vector3<f64>>, Vector3<f64>)> {
        if shape.positions.len() != 3 * self.n_nodes() {
            return Err(Error::dim("shape size does not match maps"));
        }
        let v = &self.xs_inv * &shape.positions;
        let n = self.n_tau;
        Ok(((0..n).map(|p| node3(&v, p)).collect(), node3(&v, n)))
    }

    /// Kinematic matrix K = Xs Cbar and pseudo-inverse K^{-1} = Cbar^T Xs^{-1}.
    pub fn kinematic_matrices(&self, state: &FiberState) -> (DMatrix<f64>, DMatrix<f64>) {
        let cbar = cbar_matrix(&state.tangents);
        let k = &self.xs * &cbar;
        let kinv = cbar.transpose() * &self.xs_inv;
        (k, kinv)
    }

    /// Apply K to a rotation-rate/midpoint-velocity vector without forming K.
    pub fn apply_k(&self, state: &FiberState, alpha: &DVector<f64>) -> DVector<f64> {
        &self.xs * apply_cbar(&state.tangents, alpha)
    }
}

/// Cross-product matrix C[tau]: block-diagonal, block p is [tau_p]_x so
/// that C Omega = tau x Omega blockwise.
pub fn cross_product_matrix(tangents: &[Vector3<f64>]) -> DMatrix<f64> {
    let n = tangents.len();
    let mut c = DMatrix::zeros(3 * n, 3 * n);
    for (p, t) in tangents.iter().enumerate() {
        let b = t.cross_matrix();
        for i in 0..3 {
            for j in 0..3 {
                c[(3 * p + i, 3 * p + j)] = b[(i, j)];
            }
        }
    }
    c
}

/// Cbar = blockdiag(-C, I3): maps (Omega, U_MP) to (dtau/dt, U_MP).
pub fn cbar_matrix(tangents: &[Vector3<f64>]) -> DMatrix<f64> {
    let n = tangents.len();
    let mut cb = DMatrix::zeros(3 * n + 3, 3 * n + 3);
    for (p, t) in tangents.iter().enumerate() {
        let b = -t.cross_matrix();
        for i in 0..3 {
            for j in 0..3 {
                cb[(3 * p + i, 3 * p + j)] = b[(i, j)];
            }
        }
    }
    for d in 0..3 {
        cb[(3 * n + d, 3 * n + d)] = 1.0;
    }
    cb
}

/// Apply Cbar without forming it: (Omega, U) -> (Omega x tau blockwise, U).
pub fn apply_cbar(tangents: &[Vector3<f64>], alpha: &DVector<f64>) -> DVector<f64> {
    let n = tangents.len();
    assert_eq!(alpha.len(), 3 * n + 3);
    let mut out = DVector::zeros(3 * n + 3);
    for (p, t) in tangents.iter().enumerate() {
        let om = node3(alpha, p);
        set_node3(&mut out, p, om.cross(t));
    }
    set_node3(&mut out, n, node3(alpha, n));
    out
}

/// Right-handed Rodrigues rotation of `v` by the rotation vector `phi`
/// (axis phi-hat, angle |phi|). Series fallback below 1e-8 radians keeps
/// the zero-angle branch exact.
pub fn rodrigues(v: Vector3<f64>, phi: Vector3<f64>) -> Vector3<f64> {
    let theta = phi.norm();
    if theta < 1e-8 {
        // sin(t)/t and (1-cos t)/t^2 to O(t^4)
        let t2 = theta * theta;
        let a = 1.0 - t2 / 6.0;
        let b = 0.5 - t2 / 24.0;
        return v + phi.cross(&v) * a + phi.cross(&phi.cross(&v)) * b;
    }
    let axis = phi / theta;
    let (s, c) = theta.sin_cos();
    v * c + axis.cross(&v) * s + axis * (axis.dot(&v)) * (1.0 - c)
}

/// Rotate every tangent by its rotation rate over `dt`; midpoint unchanged.
pub fn rotate(state: &FiberState, omega: &[Vector3<f64>], dt: f64) -> FiberState {
    assert_eq!(omega.len(), state.tangents.len());
    FiberState {
        tangents: state
            .tangents
            .iter()
            .zip(omega)
            .map(|(t, om)| rodrigues(*t, om * dt))
            .collect(),
        midpoint: state.midpoint,
    }
}

/// Rotate tangents and translate the midpoint from a flat alpha
/// (rotation rates + midpoint velocity) over `dt`.
pub fn advance(state: &FiberState, alpha: &DVector<f64>, dt: f64) -> FiberState {
    let n = state.n_tangents();
    assert_eq!(alpha.len(), 3 * n + 3);
    let omega: Vec<Vector3<f64>> = (0..n).map(|p| node3(alpha, p)).collect();
    let mut out = rotate(state, &omega, dt);
    out.midpoint += node3(alpha, n) * dt;
    out
}

/// Discrete bending stiffness kappa (D^2)^T W~ D^2, optionally with the
/// penalty term P W~ that binds the fiber to a base shape.
#[derive(Debug, Clone)]
pub struct BendingOperator {
    pub kappa: f64,
    /// Scalar (N+1) x (N+1) stiffness; the full operator is its 3-lift.
    pub l_scalar: DMatrix<f64>,
    /// Full 3(N+1) stiffness matrix.
    pub l_full: DMatrix<f64>,
    /// Symmetric (pseudo-)root of the full stiffness.
    pub l_half: DMatrix<f64>,
    /// Scalar extended weights and inverse, shared with the workspace.
    pub w_tilde: DMatrix<f64>,
    pub w_tilde_inv: DMatrix<f64>,
    /// Penalty strength and base shape, if bound.
    pub penalty: Option<(f64, DVector<f64>)>,
}

impl BendingOperator {
    /// Assemble from a workspace. `penalty` supplies `(P, X0)` with X0 the
    /// flattened base positions.
    pub fn new(
        kappa: f64,
        ws: &SpectralWorkspace,
        penalty: Option<(f64, DVector<f64>)>,
    ) -> Result<Self> {
        if kappa < 0.0 {
            return Err(Error::invalid("kappa must be nonnegative"));
        }
        if let Some((p, ref x0)) = penalty {
            if p < 0.0 {
                return Err(Error::invalid("penalty strength must be nonnegative"));
            }
            if x0.len() != 3 * ws.n_x {
                return Err(Error::dim("penalty base shape size"));
            }
        }
        let d2 = &ws.d_x * &ws.d_x;
        let mut l_scalar = d2.transpose() * &ws.w_tilde * &d2 * kappa;
        if let Some((p, _)) = penalty {
            l_scalar += &ws.w_tilde * p;
        }
        l_scalar = (&l_scalar + l_scalar.transpose()) * 0.5;
        Self::from_scalar(kappa, l_scalar, ws.w_tilde.clone(), ws.w_tilde_inv.clone(), penalty)
    }

    /// Shared assembly path used by both the spectral and blob-link
    /// discretizations.
    pub fn from_scalar(
        kappa: f64,
        l_scalar: DMatrix<f64>,
        w_tilde: DMatrix<f64>,
        w_tilde_inv: DMatrix<f64>,
        penalty: Option<(f64, DVector<f64>)>,
    ) -> Result<Self> {
        let l_full = lift3(&l_scalar);
        // pseudo-root over the nonzero spectrum; cutoff separates the exact
        // null space (rigid + linear modes when P = 0) from bending modes
        let l_half_scalar = linalg::sym_sqrt(&l_scalar, 1e-10);
        let l_half = lift3(&l_half_scalar);
        Ok(BendingOperator {
            kappa,
            l_scalar,
            l_full,
            l_half,
            w_tilde,
            w_tilde_inv,
            penalty,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.l_scalar.nrows()
    }

    /// Displacement entering the energy: X - X0 when penalty-bound, X otherwise.
    fn displacement(&self, shape: &FiberShape) -> DVector<f64> {
        match &self.penalty {
            Some((_, x0)) => &shape.positions - x0,
            None => shape.positions.clone(),
        }
    }

    /// Elastic energy (1/2) dX^T L dX.
    pub fn energy(&self, shape: &FiberShape) -> f64 {
        let dx = self.displacement(shape);
        0.5 * (apply_scalar3(&self.l_scalar, &dx).dot(&dx))
    }

    /// Force F = -L dX and force density f = W~^{-1} F.
    pub fn force(&self, shape: &FiberShape) -> (DVector<f64>, DVector<f64>) {
        let dx = self.displacement(shape);
        let force = -apply_scalar3(&self.l_scalar, &dx);
        let density = apply_scalar3(&self.w_tilde_inv, &force);
        (force, density)
    }
}

/// Serializable fiber snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FiberSnapshot {
    pub n: usize,
    pub length: f64,
    pub tangents: Vec<[f64; 3]>,
    pub midpoint: [f64; 3],
}

impl FiberSnapshot {
    pub fn from_state(state: &FiberState, length: f64) -> Self {
        FiberSnapshot {
            n: state.n_tangents(),
            length,
            tangents: state.tangents.iter().map(|t| [t.x, t.y, t.z]).collect(),
            midpoint: [state.midpoint.x, state.midpoint.y, state.midpoint.z],
        }
    }

    pub fn to_state(&self) -> Result<FiberState> {
        FiberState::new(
            self.tangents
                .iter()
                .map(|t| Vector3::new(t[0], t[1], t[2]))
                .collect(),
            Vector3::new(self.midpoint[0], self.midpoint[1], self.midpoint[2]),
        )
    }
}

/// Flat CSV of nodal positions: one row per node `s,x,y,z`.
pub fn positions_csv(shape: &FiberShape, arclengths: &[f64]) -> String {
    let mut out = String::from("s,x,y,z\n");
    for (p, &s) in arclengths.iter().enumerate() {
        let x = shape.node(p);
        out.push_str(&format!("{s},{},{},{}\n", x.x, x.y, x.z));
    }
    out
}
