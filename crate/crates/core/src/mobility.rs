//! Force-to-velocity mobility matrices for a single fiber.
//!
//! The Rotne-Prager-Yamakawa kernel regularizes slender-body hydrodynamics
//! with radius `a_hat = (e^{3/2}/4) a`. Four constructions are provided:
//! an oversampled SPD reference quadrature, direct nodal RPY on the
//! spectral grid, a local drag approximation, and the pairwise blob
//! mobility (see [`crate::bloblink`]). Symmetrization plus eigenvalue
//! truncation at a floor `sigma` keeps every mobility SPD so square roots
//! and inverses are always well defined.

use crate::error::{Error, Result};
use crate::filament::FiberShape;
use crate::linalg::{self, lift3, node3};
use crate::spectral::SpectralWorkspace;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// RPY regularization parameters.
#[derive(Debug, Clone, Copy)]
pub struct RpyParams {
    /// Fluid viscosity (pN s / um^2).
    pub mu: f64,
    /// Regularization radius a_hat (um).
    pub a_hat: f64,
}

impl RpyParams {
    pub fn new(mu: f64, a_hat: f64) -> Result<Self> {
        if !(mu > 0.0) || !(a_hat > 0.0) {
            return Err(Error::invalid("mu and a_hat must be positive"));
        }
        Ok(RpyParams { mu, a_hat })
    }

    /// From slenderness eps_hat = a_hat / L.
    pub fn from_slenderness(mu: f64, eps_hat: f64, length: f64) -> Result<Self> {
        RpyParams::new(mu, eps_hat * length)
    }

    /// a_hat = (e^{3/2}/4) a for a true fiber radius a.
    pub fn a_hat_from_radius(a: f64) -> f64 {
        (1.5_f64).exp() / 4.0 * a
    }
}

/// Which construction produced a mobility matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum MobilityProvenance {
    OversampledReference,
    DirectNodal,
    LocalDrag,
    BlobPairwise,
    Constant,
}

impl std::fmt::Display for MobilityProvenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MobilityProvenance::OversampledReference => "oversampled-reference",
            MobilityProvenance::DirectNodal => "direct-nodal",
            MobilityProvenance::LocalDrag => "local-drag",
            MobilityProvenance::BlobPairwise => "blob-pairwise",
            MobilityProvenance::Constant => "constant",
        };
        f.write_str(s)
    }
}

/// SPD force to velocity map with stored eigendecomposition.
#[derive(Debug, Clone)]
pub struct MobilityMatrix {
    pub m: DMatrix<f64>,
    /// Eigenvalues ascending, all >= sigma after truncation.
    pub eigvals: DVector<f64>,
    pub eigvecs: DMatrix<f64>,
    pub sigma: f64,
    pub provenance: MobilityProvenance,
}

impl MobilityMatrix {
    /// Eigendecompose a symmetric matrix, floor eigenvalues at `sigma`,
    /// and rebuild.
    pub fn from_symmetric(
        m: DMatrix<f64>,
        sigma: f64,
        provenance: MobilityProvenance,
    ) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::dim("mobility matrix must be square"));
        }
        if !(sigma > 0.0) {
            return Err(Error::invalid("sigma floor must be positive"));
        }
        let sym = (&m + m.transpose()) * 0.5;
        let (mut vals, vecs) = linalg::sym_eigen(&sym);
        let mut truncated = false;
        for v in vals.iter_mut() {
            if *v < sigma {
                *v = sigma;
                truncated = true;
            }
        }
        let m_out = if truncated {
            let mut scaled = vecs.clone();
            for k in 0..vals.len() {
                scaled.column_mut(k).scale_mut(vals[k]);
            }
            &scaled * vecs.transpose()
        } else {
            sym
        };
        Ok(MobilityMatrix {
            m: m_out,
            eigvals: vals,
            eigvecs: vecs,
            sigma,
            provenance,
        })
    }

    /// Kernel-assembled matrices are SPD already; use the smallest
    /// eigenvalue as the recorded floor and reject non-positive spectra.
    pub fn from_spd(m: DMatrix<f64>, provenance: MobilityProvenance) -> Result<Self> {
        let sym = (&m + m.transpose()) * 0.5;
        let (vals, vecs) = linalg::sym_eigen(&sym);
        if vals[0] <= 0.0 {
            return Err(Error::invalid(format!(
                "{provenance} mobility is not positive definite (min eig {})",
                vals[0]
            )));
        }
        Ok(MobilityMatrix {
            m: sym,
            sigma: vals[0],
            eigvals: vals,
            eigvecs: vecs,
            provenance,
        })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn min_eig(&self) -> f64 {
        self.eigvals[0]
    }

    fn apply_filtered(&self, v: &DVector<f64>, f: impl Fn(f64) -> f64) -> DVector<f64> {
        let mut coeff = self.eigvecs.transpose() * v;
        for k in 0..coeff.len() {
            coeff[k] *= f(self.eigvals[k]);
        }
        &self.eigvecs * coeff
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.m * v
    }

    /// M^{1/2} v with the symmetric root V sqrt(L) V^T.
    pub fn apply_sqrt(&self, v: &DVector<f64>) -> DVector<f64> {
        self.apply_filtered(v, f64::sqrt)
    }

    pub fn apply_inv(&self, v: &DVector<f64>) -> DVector<f64> {
        self.apply_filtered(v, |l| 1.0 / l)
    }

    pub fn apply_inv_sqrt(&self, v: &DVector<f64>) -> DVector<f64> {
        self.apply_filtered(v, |l| 1.0 / l.sqrt())
    }

    fn matrix_filtered(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.eigvecs.clone();
        for k in 0..self.eigvals.len() {
            scaled.column_mut(k).scale_mut(f(self.eigvals[k]));
        }
        &scaled * self.eigvecs.transpose()
    }

    pub fn matrix_sqrt(&self) -> DMatrix<f64> {
        self.matrix_filtered(f64::sqrt)
    }

    pub fn matrix_inv(&self) -> DMatrix<f64> {
        self.matrix_filtered(|l| 1.0 / l)
    }

    pub fn matrix_inv_sqrt(&self) -> DMatrix<f64> {
        self.matrix_filtered(|l| 1.0 / l.sqrt())
    }
}

/// RPY kernel between two points: Stokeslet plus doublet far field, the
/// regularized overlap branch for r <= 2 a_hat.
pub fn rpy_kernel(x: Vector3<f64>, y: Vector3<f64>, p: &RpyParams) -> Matrix3<f64> {
    let pre = 1.0 / (8.0 * std::f64::consts::PI * p.mu);
    let rv = x - y;
    let r = rv.norm();
    let a = p.a_hat;
    if r > 2.0 * a {
        let rhat = rv / r;
        let outer = rhat * rhat.transpose();
        let stokeslet = (Matrix3::identity() + outer) / r;
        let doublet = (Matrix3::identity() - outer * 3.0) / (r * r * r);
        (stokeslet + doublet * (2.0 * a * a / 3.0)) * pre
    } else if r < 1e-14 * a {
        Matrix3::identity() * (pre * 4.0 / (3.0 * a))
    } else {
        let iso = 4.0 / (3.0 * a) - 3.0 * r / (8.0 * a * a);
        (Matrix3::identity() * iso + rv * rv.transpose() / (8.0 * a * a * r)) * pre
    }
}

/// Pairwise RPY mobility over a list of points (3n x 3n).
pub fn rpy_matrix(points: &[Vector3<f64>], p: &RpyParams) -> DMatrix<f64> {
    let n = points.len();
    let mut m = DMatrix::zeros(3 * n, 3 * n);
    for i in 0..n {
        for j in i..n {
            let block = rpy_kernel(points[i], points[j], p);
            for a in 0..3 {
                for b in 0..3 {
                    m[(3 * i + a, 3 * j + b)] = block[(a, b)];
                    m[(3 * j + b, 3 * i + a)] = block[(a, b)];
                }
            }
        }
    }
    m
}

/// Symmetrize a raw mobility and floor its eigenvalues at `sigma`.
///
/// When `w_tilde_inv` is supplied the input maps force density to velocity
/// and is first converted: M~ = (M W~^{-1} + W~^{-1} M^T)/2. Otherwise the
/// input already maps force to velocity and is symmetrized in place.
pub fn symmetrize_and_truncate(
    m_raw: &DMatrix<f64>,
    w_tilde_inv: Option<&DMatrix<f64>>,
    sigma: f64,
    provenance: MobilityProvenance,
) -> Result<MobilityMatrix> {
    if m_raw.nrows() != m_raw.ncols() {
        return Err(Error::dim("mobility input must be square"));
    }
    let sym = match w_tilde_inv {
        Some(wi) => {
            let wi_full = lift3(wi);
            (m_raw * &wi_full + &wi_full * m_raw.transpose()) * 0.5
        }
        None => (m_raw + m_raw.transpose()) * 0.5,
    };
    MobilityMatrix::from_symmetric(sym, sigma, provenance)
}

/// Evaluate `M_rpy * Y` over points without storing the full kernel matrix.
fn rpy_apply(points: &[Vector3<f64>], p: &RpyParams, y: &DMatrix<f64>) -> DMatrix<f64> {
    let n = points.len();
    assert_eq!(y.nrows(), 3 * n);
    let cols = y.ncols();
    let mut z = DMatrix::zeros(3 * n, cols);
    for i in 0..n {
        for j in i..n {
            let block = rpy_kernel(points[i], points[j], p);
            for c in 0..cols {
                let yj = Vector3::new(y[(3 * j, c)], y[(3 * j + 1, c)], y[(3 * j + 2, c)]);
                let zi = block * yj;
                z[(3 * i, c)] += zi.x;
                z[(3 * i + 1, c)] += zi.y;
                z[(3 * i + 2, c)] += zi.z;
                if i != j {
                    let yi = Vector3::new(y[(3 * i, c)], y[(3 * i + 1, c)], y[(3 * i + 2, c)]);
                    // kernel blocks are symmetric
                    let zj = block * yi;
                    z[(3 * j, c)] += zj.x;
                    z[(3 * j + 1, c)] += zj.y;
                    z[(3 * j + 2, c)] += zj.z;
                }
            }
        }
    }
    z
}

/// Precomputed pieces for repeatedly building the oversampled reference
/// mobility on one workspace.
#[derive(Debug, Clone)]
pub struct OversampledQuadrature {
    pub n_up: usize,
    /// Upsampling N+1 -> n_up (scalar).
    pub e_up: DMatrix<f64>,
    /// Y = W_u E_up W~^{-1} lifted to 3 components.
    pub y: DMatrix<f64>,
}

impl OversampledQuadrature {
    pub fn new(ws: &SpectralWorkspace, n_up: usize) -> Result<Self> {
        if n_up < ws.n_x {
            return Err(Error::invalid(format!(
                "oversampling needs n_up >= {}, got {n_up}",
                ws.n_x
            )));
        }
        let (grid_up, e_up) = ws.upsampling_to(n_up)?;
        let w_up = grid_up.clenshaw_curtis_weights()?;
        let mut y_scalar = &e_up * &ws.w_tilde_inv;
        for i in 0..n_up {
            for j in 0..ws.n_x {
                y_scalar[(i, j)] *= w_up[i];
            }
        }
        Ok(OversampledQuadrature {
            n_up,
            e_up,
            y: lift3(&y_scalar),
        })
    }

    /// Raw reference mobility Y^T M_rpy(X_up) Y, symmetric by construction.
    pub fn raw_mobility(&self, shape: &FiberShape, p: &RpyParams) -> DMatrix<f64> {
        let n_x = shape.n_nodes();
        assert_eq!(self.e_up.ncols(), n_x);
        let up_points: Vec<Vector3<f64>> = (0..self.n_up)
            .map(|i| {
                let mut x = Vector3::zeros();
                for j in 0..n_x {
                    x += shape.node(j) * self.e_up[(i, j)];
                }
                x
            })
            .collect();
        let z = rpy_apply(&up_points, p, &self.y);
        let m = self.y.transpose() * z;
        (&m + m.transpose()) * 0.5
    }
}

/// Oversampled SPD reference mobility, floored at the cached straight-fiber
/// threshold.
pub fn oversampled_mobility(
    shape: &FiberShape,
    ws: &SpectralWorkspace,
    p: &RpyParams,
    n_up: usize,
) -> Result<MobilityMatrix> {
    let quad = OversampledQuadrature::new(ws, n_up)?;
    let m = quad.raw_mobility(shape, p);
    let sigma = sigma_threshold(ws.n_tau, ws.length, p.a_hat, p.mu)?;
    MobilityMatrix::from_symmetric(m, sigma, MobilityProvenance::OversampledReference)
}

/// Direct pairwise RPY on the N+1 spectral nodes; SPD as a kernel matrix.
pub fn direct_nodal_mobility(
    shape: &FiberShape,
    _ws: &SpectralWorkspace,
    p: &RpyParams,
) -> Result<MobilityMatrix> {
    let points: Vec<Vector3<f64>> = (0..shape.n_nodes()).map(|i| shape.node(i)).collect();
    MobilityMatrix::from_spd(rpy_matrix(&points, p), MobilityProvenance::DirectNodal)
}

/// Local drag coefficients a_S, a_D, a_CLI, a_CLT at arclength s.
pub fn local_drag_coefficients(s: f64, length: f64, a_hat: f64) -> (f64, f64, f64, f64) {
    let l = length;
    let a = a_hat;
    let interior = s > 2.0 * a && s < l - 2.0 * a;
    let a_s = if interior {
        ((l - s) * s / (4.0 * a * a)).ln()
    } else if s <= 2.0 * a {
        ((l - s) / (2.0 * a)).ln()
    } else {
        (s / (2.0 * a)).ln()
    };
    let a_d = if interior {
        1.0 / (4.0 * a * a) - 0.5 / (s * s) - 0.5 / ((l - s) * (l - s))
    } else if s <= 2.0 * a {
        1.0 / (8.0 * a * a) - 0.5 / ((l - s) * (l - s))
    } else {
        1.0 / (8.0 * a * a) - 0.5 / (s * s)
    };
    let a_cli = if interior {
        23.0 / 6.0
    } else {
        let d = if s <= 2.0 * a { s } else { l - s };
        23.0 / 12.0 + 4.0 * d / (3.0 * a) - 3.0 * d * d / (16.0 * a * a)
    };
    let a_clt = if interior {
        0.5
    } else {
        let d = if s <= 2.0 * a { s } else { l - s };
        0.25 + d * d / (16.0 * a * a)
    };
    (a_s, a_d, a_cli, a_clt)
}

/// Local drag approximation: block-diagonal force-density mobility from
/// the slender-body coefficients, then symmetrized against W~ and floored.
pub fn local_drag_mobility(
    shape: &FiberShape,
    ws: &SpectralWorkspace,
    p: &RpyParams,
) -> Result<MobilityMatrix> {
    if ws.length < 4.0 * p.a_hat {
        return Err(Error::invalid(
            "local drag unsupported for L < 4 a_hat (both ends overlap)",
        ));
    }
    let n_x = ws.n_x;
    // tangents from D_{N+1} X, possibly non-unit
    let dx = crate::linalg::apply_scalar3(&ws.d_x, &shape.positions);
    let pre = 1.0 / (8.0 * std::f64::consts::PI * p.mu);
    let mut m = DMatrix::zeros(3 * n_x, 3 * n_x);
    for i in 0..n_x {
        let s = ws.grid_x.nodes[i];
        let t = node3(&dx, i);
        let tn = t.norm();
        let that = t / tn;
        let (a_s, a_d, a_cli, a_clt) = local_drag_coefficients(s, ws.length, p.a_hat);
        let a2 = p.a_hat * p.a_hat;
        let iso = (a_s + a_cli) / tn + 2.0 * a2 / 3.0 * a_d / (tn * tn * tn);
        let par = (a_s + a_clt) / tn - 2.0 * a2 * a_d / (tn * tn * tn);
        let block = (Matrix3::identity() * iso + that * that.transpose() * par) * pre;
        for a in 0..3 {
            for b in 0..3 {
                m[(3 * i + a, 3 * i + b)] = block[(a, b)];
            }
        }
    }
    let sigma = sigma_threshold(ws.n_tau, ws.length, p.a_hat, p.mu)?;
    symmetrize_and_truncate(
        &m,
        Some(&ws.w_tilde_inv),
        sigma,
        MobilityProvenance::LocalDrag,
    )
}

fn sigma_cache() -> &'static Mutex<HashMap<(usize, u64, u64, u64), f64>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, u64, u64, u64), f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Truncation floor: the smallest eigenvalue of the oversampled reference
/// mobility for a straight fiber with ceil(1/eps_hat) upsampling points.
/// Cached per parameter tuple.
pub fn sigma_threshold(n_tau: usize, length: f64, a_hat: f64, mu: f64) -> Result<f64> {
    let key = (
        n_tau,
        length.to_bits(),
        a_hat.to_bits(),
        mu.to_bits(),
    );
    if let Some(&v) = sigma_cache().lock().unwrap().get(&key) {
        return Ok(v);
    }
    let ws = SpectralWorkspace::new(n_tau, length)?;
    let p = RpyParams::new(mu, a_hat)?;
    let n_up = ((length / a_hat).ceil() as usize).max(ws.n_x);
    let quad = OversampledQuadrature::new(&ws, n_up)?;
    let maps = crate::filament::FiberMaps::spectral(&ws);
    let straight = maps
        .positions_from_state(&crate::filament::FiberState::straight(
            n_tau,
            Vector3::z(),
        ))?;
    let m = quad.raw_mobility(&straight, &p);
    let (vals, _) = linalg::sym_eigen(&m);
    let sigma = vals[0];
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!(
            "reference mobility not SPD: min eig {sigma}"
        )));
    }
    sigma_cache().lock().unwrap().insert(key, sigma);
    Ok(sigma)
}

/// A reusable mobility builder bound to one discretization.
#[derive(Debug, Clone)]
pub enum MobilityModel {
    Oversampled {
        params: RpyParams,
        quad: OversampledQuadrature,
        sigma: f64,
    },
    DirectNodal {
        params: RpyParams,
    },
    LocalDrag {
        params: RpyParams,
    },
    BlobPairwise {
        params: RpyParams,
    },
    /// Fixed matrix, e.g. the configuration-independent W~^{-1}/(8 pi mu).
    Constant {
        matrix: MobilityMatrix,
    },
}

impl MobilityModel {
    pub fn oversampled(ws: &SpectralWorkspace, params: RpyParams, n_up: usize) -> Result<Self> {
        let quad = OversampledQuadrature::new(ws, n_up)?;
        let sigma = sigma_threshold(ws.n_tau, ws.length, params.a_hat, params.mu)?;
        Ok(MobilityModel::Oversampled {
            params,
            quad,
            sigma,
        })
    }

    /// Recommended oversampling count 0.4 / eps_hat, at least N+1.
    pub fn recommended_n_up(ws: &SpectralWorkspace, params: &RpyParams) -> usize {
        let eps_hat = params.a_hat / ws.length;
        ((0.4 / eps_hat).ceil() as usize).max(ws.n_x)
    }

    /// Constant force-density mobility I/(8 pi mu), symmetrized to
    /// W~^{-1}/(8 pi mu) as a force mobility.
    pub fn constant_isotropic(ws: &SpectralWorkspace, mu: f64) -> Result<Self> {
        let m = lift3(&ws.w_tilde_inv) / (8.0 * std::f64::consts::PI * mu);
        let (vals, _) = linalg::sym_eigen(&m);
        let matrix = MobilityMatrix::from_symmetric(m, vals[0], MobilityProvenance::Constant)?;
        Ok(MobilityModel::Constant { matrix })
    }

    pub fn provenance(&self) -> MobilityProvenance {
        match self {
            MobilityModel::Oversampled { .. } => MobilityProvenance::OversampledReference,
            MobilityModel::DirectNodal { .. } => MobilityProvenance::DirectNodal,
            MobilityModel::LocalDrag { .. } => MobilityProvenance::LocalDrag,
            MobilityModel::BlobPairwise { .. } => MobilityProvenance::BlobPairwise,
            MobilityModel::Constant { .. } => MobilityProvenance::Constant,
        }
    }

    /// Build the mobility at a configuration. `ws` is required for the
    /// spectral constructions and ignored by pairwise/constant ones.
    pub fn build(&self, shape: &FiberShape, ws: Option<&SpectralWorkspace>) -> Result<MobilityMatrix> {
        match self {
            MobilityModel::Oversampled { params, quad, sigma } => {
                let m = quad.raw_mobility(shape, params);
                MobilityMatrix::from_symmetric(m, *sigma, MobilityProvenance::OversampledReference)
            }
            MobilityModel::DirectNodal { params } => {
                let points: Vec<Vector3<f64>> =
                    (0..shape.n_nodes()).map(|i| shape.node(i)).collect();
                MobilityMatrix::from_spd(rpy_matrix(&points, params), MobilityProvenance::DirectNodal)
            }
            MobilityModel::LocalDrag { params } => {
                let ws = ws.ok_or_else(|| Error::invalid("local drag needs a workspace"))?;
                local_drag_mobility(shape, ws, params)
            }
            MobilityModel::BlobPairwise { params } => {
                let points: Vec<Vector3<f64>> =
                    (0..shape.n_nodes()).map(|i| shape.node(i)).collect();
                MobilityMatrix::from_spd(rpy_matrix(&points, params), MobilityProvenance::BlobPairwise)
            }
            MobilityModel::Constant { matrix } => Ok(matrix.clone()),
        }
    }
}
