//! Temporal integration of the overdamped Langevin equation.
//!
//! The saddle-point solve enforces inextensibility through a constraint
//! force; the midpoint scheme of the main integrator moves the fiber to a
//! half-step configuration so the mobility-gradient drift appears in
//! expectation with a single solve per step. A reference scheme generates
//! the same drift with an explicit random finite difference (RFD) and can
//! switch it off entirely, which is what breaks equilibrium statistics.

use crate::error::{Error, Result};
use crate::filament::{advance, BendingOperator, FiberMaps, FiberShape, FiberState};
use crate::linalg;
use crate::mobility::{MobilityMatrix, MobilityModel};
use crate::rng::{normals, RngFactory, StreamKind};
use crate::spectral::SpectralWorkspace;
use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

/// Which estimator supplies the stochastic drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftMode {
    /// Resistance-based midpoint difference (Brownian velocity reuse).
    MidpointUmd,
    /// Apply-only RFD variant of the midpoint drift.
    MidpointRfdApply,
    /// Explicit RFD added to a time-n solve (reference scheme).
    NaiveRfd,
    /// Reference scheme with the drift term switched off.
    NoDrift,
}

/// Time stepping configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepperConfig {
    /// Time step (s).
    pub dt: f64,
    /// Thermal energy (pN um); 0 gives deterministic dynamics.
    pub kbt: f64,
    /// Implicit coefficient c in [0,1]; 1 is backward Euler.
    pub implicit_c: f64,
    /// Dimensionless delta for explicit RFDs.
    pub rfd_delta: f64,
    pub drift_mode: DriftMode,
    pub rng_seed: u64,
}

impl StepperConfig {
    pub fn new(dt: f64, kbt: f64, seed: u64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::invalid("dt must be positive"));
        }
        if kbt < 0.0 {
            return Err(Error::invalid("kBT must be nonnegative"));
        }
        Ok(StepperConfig {
            dt,
            kbt,
            implicit_c: 1.0,
            rfd_delta: 1e-5,
            drift_mode: DriftMode::MidpointUmd,
            rng_seed: seed,
        })
    }
}

/// Solution of the constrained mobility problem.
#[derive(Debug, Clone)]
pub struct SaddleSolution {
    /// Rotation rates and midpoint velocity, flattened (3N+3).
    pub alpha: DVector<f64>,
    /// Constraint force (pN), length 3(N+1).
    pub lambda: DVector<f64>,
}

impl SaddleSolution {
    pub fn omega(&self, n_tau: usize) -> Vec<Vector3<f64>> {
        (0..n_tau).map(|p| linalg::node3(&self.alpha, p)).collect()
    }

    pub fn u_mp(&self, n_tau: usize) -> Vector3<f64> {
        linalg::node3(&self.alpha, n_tau)
    }
}

/// Solve the saddle-point system
///   [-M~, (I + c dt M~ L) K; K^T, 0] (Lambda, alpha) = (rhs, 0)
/// by Schur complement: alpha = (K^T (M~^{-1} + c dt L) K)^+ K^T M~^{-1} rhs.
/// The pseudo-inverse removes the exact null space of K (parallel
/// rotations); a rank below 2N+3 flags a degenerate kinematic matrix.
pub fn saddle_solve(
    mob: &MobilityMatrix,
    k: &DMatrix<f64>,
    l_full: &DMatrix<f64>,
    rhs_velocity: &DVector<f64>,
    c: f64,
    dt: f64,
) -> Result<SaddleSolution> {
    let dim = k.nrows();
    if mob.dim() != dim || l_full.nrows() != dim || rhs_velocity.len() != dim {
        return Err(Error::dim("saddle solve operands disagree"));
    }
    let m_inv = mob.matrix_inv();
    let a = if c != 0.0 {
        &m_inv + l_full * (c * dt)
    } else {
        m_inv.clone()
    };
    let g = k.transpose() * &a * k;
    let (g_pinv, rank) = linalg::sym_pinv(&g, 1e-12);
    let n_tau = dim / 3 - 1;
    let expected = 2 * n_tau + 3;
    if rank < expected {
        return Err(Error::SingularSaddle(format!(
            "resistance rank {rank} < {expected}; kinematic matrix degenerate"
        )));
    }
    let m_inv_rhs = &m_inv * rhs_velocity;
    let alpha = &g_pinv * (k.transpose() * &m_inv_rhs);
    let lambda = &a * (k * &alpha) - m_inv_rhs;
    Ok(SaddleSolution { alpha, lambda })
}

/// Modified backward-Euler Brownian velocity
///   U_B = sqrt(2 kBT / dt) (M~^{1/2} eta + sqrt(dt/2) M~ L^{1/2} eta~),
/// whose covariance is (2 kBT/dt) M~ + kBT M~ L M~.
pub fn brownian_velocity(
    mob: &MobilityMatrix,
    bend: &BendingOperator,
    cfg: &StepperConfig,
    eta: &DVector<f64>,
    eta_tilde: &DVector<f64>,
) -> DVector<f64> {
    if cfg.kbt == 0.0 {
        return DVector::zeros(mob.dim());
    }
    let pre = (2.0 * cfg.kbt / cfg.dt).sqrt();
    let part1 = mob.apply_sqrt(eta);
    let part2 = mob.apply(&(&bend.l_half * eta_tilde)) * (cfg.dt / 2.0).sqrt();
    (part1 + part2) * pre
}

/// Single-fiber integrator bound to one discretization.
pub struct Integrator<'a> {
    pub maps: &'a FiberMaps,
    pub bend: &'a BendingOperator,
    pub mobility: &'a MobilityModel,
    /// Workspace for the spectral mobility constructions; None for blob chains.
    pub ws: Option<&'a SpectralWorkspace>,
    pub cfg: StepperConfig,
    pub rng: RngFactory,
    pub fiber_id: u64,
    /// Count of tangent renormalizations (should stay zero).
    pub norm_repairs: u64,
}

impl<'a> Integrator<'a> {
    pub fn new(
        maps: &'a FiberMaps,
        bend: &'a BendingOperator,
        mobility: &'a MobilityModel,
        ws: Option<&'a SpectralWorkspace>,
        cfg: StepperConfig,
    ) -> Self {
        let rng = RngFactory::new(cfg.rng_seed);
        Integrator {
            maps,
            bend,
            mobility,
            ws,
            cfg,
            rng,
            fiber_id: 0,
            norm_repairs: 0,
        }
    }

    pub fn mobility_at(&self, shape: &FiberShape) -> Result<MobilityMatrix> {
        self.mobility.build(shape, self.ws)
    }

    fn apply_kinv(&self, state: &FiberState, v: &DVector<f64>) -> DVector<f64> {
        let xb = &self.maps.xs_inv * v;
        // Cbar^T = blockdiag(C, I)
        let n = state.n_tangents();
        let mut out = DVector::zeros(3 * n + 3);
        for (p, t) in state.tangents.iter().enumerate() {
            let w = linalg::node3(&xb, p);
            linalg::set_node3(&mut out, p, t.cross(&w));
        }
        linalg::set_node3(&mut out, n, linalg::node3(&xb, n));
        out
    }

    fn dim(&self) -> usize {
        3 * self.maps.n_nodes()
    }

    fn check_finite(&self, state: &FiberState, step: u64) -> Result<()> {
        let ok = state
            .tangents
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
            && state.midpoint.iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Numerical {
                step,
                message: "non-finite fiber state".into(),
            })
        }
    }

    fn repair(&mut self, state: &mut FiberState) {
        self.norm_repairs += state.repair_norms(1e-10) as u64;
    }

    /// One step of the drift-correct midpoint scheme.
    ///
    /// (1) predictor rotation rates from M~^{1/2} eta, (2) half-step
    /// configuration, (3) mobility-difference drift velocity, (4) implicit
    /// saddle solve at the midpoint with the time-n elastic force,
    /// (5) rotation update from the time-n state. The same `eta` feeds
    /// steps 1, 3 and 4.
    pub fn midpoint_step(
        &mut self,
        state: &FiberState,
        step_index: u64,
        ext_force: Option<&DVector<f64>>,
    ) -> Result<FiberState> {
        let cfg = self.cfg;
        let dim = self.dim();
        let shape_n = self.maps.positions_from_state(state)?;
        let mob_n = self.mobility_at(&shape_n)?;
        let mut rng = self.rng.stream(StreamKind::Fiber, self.fiber_id, step_index);

        let (state_mid, mob_mid, u_b, u_md) = if cfg.kbt > 0.0 {
            let eta = normals(&mut rng, dim);
            let eta_tilde = normals(&mut rng, dim);
            let half_eta = mob_n.apply_sqrt(&eta);
            let alpha_star = self.apply_kinv(state, &half_eta) * (2.0 * cfg.kbt / cfg.dt).sqrt();
            let state_mid = advance(state, &alpha_star, cfg.dt / 2.0);
            let shape_mid = self.maps.positions_from_state(&state_mid)?;
            let mob_mid = self.mobility_at(&shape_mid)?;
            let u_b = brownian_velocity(&mob_n, self.bend, &cfg, &eta, &eta_tilde);
            let u_md = match cfg.drift_mode {
                DriftMode::MidpointUmd => {
                    // sqrt(2kBT/dt) (M~^{n+1/2,*} - M~^n) (M~^n)^{-1/2} eta
                    let x = mob_n.apply_inv_sqrt(&eta);
                    (mob_mid.apply(&x) - mob_n.apply(&x)) * (2.0 * cfg.kbt / cfg.dt).sqrt()
                }
                DriftMode::MidpointRfdApply => {
                    let eta_rfd = normals(&mut rng, dim);
                    self.mobility_drift_rfd_apply(state, &mob_n, &eta_rfd)?
                }
                DriftMode::NoDrift => DVector::zeros(dim),
                DriftMode::NaiveRfd => {
                    return Err(Error::invalid(
                        "NaiveRfd drift belongs to rfd_step, not the midpoint scheme",
                    ))
                }
            };
            (state_mid, mob_mid, u_b, u_md)
        } else {
            (
                state.clone(),
                mob_n.clone(),
                DVector::zeros(dim),
                DVector::zeros(dim),
            )
        };

        let (mut force, _) = self.bend.force(&shape_n);
        if let Some(f) = ext_force {
            if f.len() != dim {
                return Err(Error::dim("external force size"));
            }
            force += f;
        }
        let rhs = mob_mid.apply(&force) + u_b + u_md;
        let k_mid = &self.maps.xs * crate::filament::cbar_matrix(&state_mid.tangents);
        let sol = saddle_solve(&mob_mid, &k_mid, &self.bend.l_full, &rhs, cfg.implicit_c, cfg.dt)
            .map_err(|e| match e {
                Error::SingularSaddle(m) => Error::Numerical {
                    step: step_index,
                    message: m,
                },
                other => other,
            })?;
        let mut next = advance(state, &sol.alpha, cfg.dt);
        self.check_finite(&next, step_index)?;
        self.repair(&mut next);
        Ok(next)
    }

    /// Apply-only RFD for the mobility-gradient drift: perturb the
    /// configuration along K^{-1} eta and difference the mobility action.
    pub fn mobility_drift_rfd_apply(
        &self,
        state: &FiberState,
        mob_n: &MobilityMatrix,
        eta_rfd: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let delta = self.cfg.rfd_delta;
        let scale = delta * self.maps.length;
        let mu = self.apply_kinv(state, eta_rfd);
        let state_rfd = advance(state, &mu, scale);
        let shape_rfd = self.maps.positions_from_state(&state_rfd)?;
        let mob_rfd = self.mobility_at(&shape_rfd)?;
        Ok((mob_rfd.apply(eta_rfd) - mob_n.apply(eta_rfd)) * (self.cfg.kbt / scale))
    }

    /// Projected mobility N = (K^T M~^{-1} K)^+ at a state.
    pub fn projected_mobility(&self, state: &FiberState) -> Result<DMatrix<f64>> {
        let shape = self.maps.positions_from_state(state)?;
        let mob = self.mobility_at(&shape)?;
        let (k, _) = self.maps.kinematic_matrices(state);
        let g = k.transpose() * mob.matrix_inv() * &k;
        let (n, _) = linalg::sym_pinv(&g, 1e-12);
        Ok(n)
    }

    /// Explicit RFD drift rotation rates (kBT/delta)(N(Xbar + d) - N(Xbar)) xi.
    pub fn naive_rfd_drift(
        &self,
        state: &FiberState,
        eta_rfd: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let n = state.n_tangents();
        let delta = self.cfg.rfd_delta;
        let length = self.maps.length;
        // rotate tangents by delta * eta, shift midpoint by delta * L * eta
        let omega: Vec<Vector3<f64>> = (0..n).map(|p| linalg::node3(eta_rfd, p)).collect();
        let mut state_rfd = crate::filament::rotate(state, &omega, delta);
        state_rfd.midpoint += linalg::node3(eta_rfd, n) * (delta * length);
        let n_base = self.projected_mobility(state)?;
        let n_pert = self.projected_mobility(&state_rfd)?;
        let mut xi = eta_rfd.clone();
        for d in 0..3 {
            xi[3 * n + d] /= length;
        }
        Ok((&n_pert - &n_base) * xi * (self.cfg.kbt / delta))
    }

    /// Weakly first-order reference integrator: time-n saddle solve with
    /// U_B, plus (optionally) the explicit RFD drift pair.
    pub fn rfd_step(
        &mut self,
        state: &FiberState,
        step_index: u64,
        drift_on: bool,
    ) -> Result<FiberState> {
        let cfg = self.cfg;
        let dim = self.dim();
        let shape_n = self.maps.positions_from_state(state)?;
        let mob_n = self.mobility_at(&shape_n)?;
        let mut rng = self.rng.stream(StreamKind::Fiber, self.fiber_id, step_index);
        let u_b = if cfg.kbt > 0.0 {
            let eta = normals(&mut rng, dim);
            let eta_tilde = normals(&mut rng, dim);
            brownian_velocity(&mob_n, self.bend, &cfg, &eta, &eta_tilde)
        } else {
            DVector::zeros(dim)
        };
        let (force, _) = self.bend.force(&shape_n);
        let rhs = mob_n.apply(&force) + u_b;
        let (k_n, _) = self.maps.kinematic_matrices(state);
        let sol = saddle_solve(&mob_n, &k_n, &self.bend.l_full, &rhs, cfg.implicit_c, cfg.dt)?;
        let mut alpha = sol.alpha;
        if drift_on && cfg.kbt > 0.0 {
            let eta_rfd = normals(&mut rng, 3 * state.n_tangents() + 3);
            alpha += self.naive_rfd_drift(state, &eta_rfd)?;
        }
        let mut next = advance(state, &alpha, cfg.dt);
        self.check_finite(&next, step_index)?;
        self.repair(&mut next);
        Ok(next)
    }

    /// Deterministic relaxation dX/dt = -(K N K^T) L X via implicit steps;
    /// returns the final state and (time, energy) samples.
    pub fn deterministic_relax(
        &mut self,
        state: &FiberState,
        n_steps: u64,
    ) -> Result<(FiberState, Vec<(f64, f64)>)> {
        let saved = self.cfg;
        self.cfg.kbt = 0.0;
        let mut cur = state.clone();
        let mut series = Vec::with_capacity(n_steps as usize + 1);
        let shape0 = self.maps.positions_from_state(&cur)?;
        series.push((0.0, self.bend.energy(&shape0)));
        let mut out = Ok(());
        for step in 0..n_steps {
            match self.midpoint_step(&cur, step, None) {
                Ok(next) => cur = next,
                Err(e) => {
                    out = Err(e);
                    break;
                }
            }
            let shape = self.maps.positions_from_state(&cur)?;
            series.push(((step + 1) as f64 * self.cfg.dt, self.bend.energy(&shape)));
        }
        self.cfg = saved;
        out?;
        Ok((cur, series))
    }
}

/// Sample covariance of the unconstrained linearized SDE
///   dX/dt = -M~ L X + U_B
/// integrated with the implicit-explicit method at coefficient `c`.
/// Returns the sample covariance over `n_samples` post-burn-in steps.
pub fn unconstrained_equilibrium_covariance(
    mob: &MobilityMatrix,
    bend: &BendingOperator,
    cfg: &StepperConfig,
    n_samples: usize,
    burn_in: usize,
    rng: &mut rand_chacha::ChaCha12Rng,
) -> DMatrix<f64> {
    let dim = mob.dim();
    let step_mat = (DMatrix::identity(dim, dim)
        + &mob.m * &bend.l_full * (cfg.implicit_c * cfg.dt))
        .try_inverse()
        .expect("implicit operator invertible");
    let explicit = if cfg.implicit_c < 1.0 {
        Some(&mob.m * &bend.l_full * ((1.0 - cfg.implicit_c) * cfg.dt))
    } else {
        None
    };
    let mut x = DVector::zeros(dim);
    let mut cov = DMatrix::zeros(dim, dim);
    for step in 0..(burn_in + n_samples) {
        let eta = normals(rng, dim);
        let eta_tilde = normals(rng, dim);
        let u_b = brownian_velocity(mob, bend, cfg, &eta, &eta_tilde);
        let mut rhs = &x + u_b * cfg.dt;
        if let Some(ex) = &explicit {
            rhs -= ex * &x;
        }
        x = &step_mat * rhs;
        if step >= burn_in {
            cov.syger(1.0 / n_samples as f64, &x, &x, 1.0);
        }
    }
    // syger fills the lower triangle
    for i in 0..dim {
        for j in i + 1..dim {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    cov
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filament::{cbar_matrix, FiberMaps, FiberState};
    use crate::mobility::{direct_nodal_mobility, MobilityModel, RpyParams};
    use crate::rng::{RngFactory, StreamKind};
    use crate::spectral::SpectralWorkspace;

    fn setup(
        n: usize,
        kappa: f64,
    ) -> (SpectralWorkspace, FiberMaps, BendingOperator, MobilityModel) {
        let ws = SpectralWorkspace::new(n, 2.0).unwrap();
        let maps = FiberMaps::spectral(&ws);
        let bend = BendingOperator::new(kappa, &ws, None).unwrap();
        let p = RpyParams::from_slenderness(1.0, 1e-2, 2.0).unwrap();
        let mob = MobilityModel::DirectNodal { params: p };
        (ws, maps, bend, mob)
    }

    fn random_state(n: usize, seed: u64) -> FiberState {
        let f = RngFactory::new(seed);
        let mut rng = f.stream(StreamKind::Aux, 40, seed);
        let g = normals(&mut rng, 3 * n);
        FiberState::new(
            (0..n)
                .map(|p| Vector3::new(g[3 * p], g[3 * p + 1], g[3 * p + 2]))
                .collect(),
            Vector3::zeros(),
        )
        .unwrap()
    }

    #[test]
    fn saddle_zero_rhs_and_residual() {
        let (ws, maps, bend, mobm) = setup(8, 0.0082);
        let state = random_state(8, 1);
        let shape = maps.positions_from_state(&state).unwrap();
        let mob = mobm.build(&shape, Some(&ws)).unwrap();
        let (k, _) = maps.kinematic_matrices(&state);
        // zero rhs -> zero solution
        let zero = DVector::zeros(27);
        let sol = saddle_solve(&mob, &k, &bend.l_full, &zero, 1.0, 1e-3).unwrap();
        assert!(sol.alpha.norm() < 1e-12);
        assert!(sol.lambda.norm() < 1e-12);
        // random rhs: both block equations satisfied
        let f = RngFactory::new(3);
        let rhs = normals(&mut f.stream(StreamKind::Aux, 41, 0), 27);
        let dt = 1e-3;
        let sol = saddle_solve(&mob, &k, &bend.l_full, &rhs, 1.0, dt).unwrap();
        let lhs1 = -mob.apply(&sol.lambda)
            + (&k * &sol.alpha)
            + &mob.m * &bend.l_full * (&k * &sol.alpha) * dt;
        assert!(
            (lhs1 - &rhs).norm() <= 1e-9 * rhs.norm(),
            "first block residual"
        );
        let kt_lam = k.transpose() * &sol.lambda;
        assert!(
            kt_lam.norm() <= 1e-9 * sol.lambda.norm().max(1e-30),
            "constraint-force orthogonality"
        );
    }

    #[test]
    fn saddle_deterministic_equilibrium() {
        let (ws, maps, bend, mobm) = setup(8, 0.0082);
        let state = FiberState::straight(8, Vector3::z());
        let shape = maps.positions_from_state(&state).unwrap();
        let mob = mobm.build(&shape, Some(&ws)).unwrap();
        let (k, _) = maps.kinematic_matrices(&state);
        let (force, _) = bend.force(&shape);
        let rhs = mob.apply(&force);
        let sol = saddle_solve(&mob, &k, &bend.l_full, &rhs, 1.0, 1e-3).unwrap();
        assert!(sol.alpha.norm() < 1e-9);
    }

    #[test]
    fn brownian_velocity_zero_temperature() {
        let (ws, maps, bend, mobm) = setup(6, 0.0082);
        let state = FiberState::straight(6, Vector3::z());
        let shape = maps.positions_from_state(&state).unwrap();
        let mob = mobm.build(&shape, Some(&ws)).unwrap();
        let cfg = StepperConfig::new(1e-3, 0.0, 7).unwrap();
        let f = RngFactory::new(7);
        let mut rng = f.stream(StreamKind::Aux, 42, 0);
        let eta = normals(&mut rng, 21);
        let eta_tilde = normals(&mut rng, 21);
        let u = brownian_velocity(&mob, &bend, &cfg, &eta, &eta_tilde);
        assert!(u.norm() == 0.0);
    }

    #[test]
    fn brownian_velocity_covariance() {
        // sample covariance of U_B matches (2kBT/dt) M~ + kBT M~ L M~
        let (ws, maps, bend, mobm) = setup(6, 0.0082);
        let state = random_state(6, 5);
        let shape = maps.positions_from_state(&state).unwrap();
        let mob = mobm.build(&shape, Some(&ws)).unwrap();
        let kbt = 4.1e-3;
        let dt = 0.05;
        let cfg = StepperConfig::new(dt, kbt, 11).unwrap();
        let dim = 21;
        let want = &mob.m * (2.0 * kbt / dt) + &mob.m * &bend.l_full * &mob.m * kbt;
        let f = RngFactory::new(11);
        let mut rng = f.stream(StreamKind::Aux, 43, 0);
        let n_draws = 100_000;
        let mut cov = DMatrix::zeros(dim, dim);
        for _ in 0..n_draws {
            let eta = normals(&mut rng, dim);
            let eta_tilde = normals(&mut rng, dim);
            let u = brownian_velocity(&mob, &bend, &cfg, &eta, &eta_tilde);
            cov.syger(1.0 / n_draws as f64, &u, &u, 1.0);
        }
        for i in 0..dim {
            for j in i + 1..dim {
                cov[(i, j)] = cov[(j, i)];
            }
        }
        // entrywise 3-standard-error agreement (Wick variance estimate)
        let mut worst: f64 = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                let se = ((want[(i, i)] * want[(j, j)] + want[(i, j)].powi(2))
                    / n_draws as f64)
                    .sqrt();
                worst = worst.max((cov[(i, j)] - want[(i, j)]).abs() / se);
            }
        }
        assert!(worst < 3.0, "worst z-score {worst}");
    }

    #[test]
    fn unconstrained_backward_euler_exact_covariance() {
        // kBT L^{-1} reproduced for dt spanning two decades
        let ws = SpectralWorkspace::new(6, 2.0).unwrap();
        let maps = FiberMaps::spectral(&ws);
        let x0 = maps
            .positions_from_state(&FiberState::straight(6, Vector3::z()))
            .unwrap();
        let bend =
            BendingOperator::new(0.0082, &ws, Some((8.2, x0.positions.clone()))).unwrap();
        let p = RpyParams::from_slenderness(1.0, 1e-2, 2.0).unwrap();
        let mob = direct_nodal_mobility(&x0, &ws, &p).unwrap();
        let kbt = 4.1e-3;
        let l_inv = bend.l_full.clone().try_inverse().unwrap() * kbt;
        // slowest relaxation time of M~ L
        let ml = &mob.m * &bend.l_full;
        let tau = 1.0
            / ml.complex_eigenvalues()
                .iter()
                .map(|z| z.re)
                .fold(f64::INFINITY, f64::min);
        let f = RngFactory::new(123);
        for (i, dt_rel) in [0.05, 0.5, 5.0].iter().enumerate() {
            let mut cfg = StepperConfig::new(dt_rel * tau, kbt, 123).unwrap();
            cfg.implicit_c = 1.0;
            let mut rng = f.stream(StreamKind::Aux, 44, i as u64);
            let n = if *dt_rel < 0.1 { 400_000 } else { 100_000 };
            let cov =
                unconstrained_equilibrium_covariance(&mob, &bend, &cfg, n, n / 10, &mut rng);
            let rel = (&cov - &l_inv).norm() / l_inv.norm();
            assert!(rel < 0.05, "dt = {dt_rel} tau: rel err {rel}");
        }
    }

    #[test]
    fn midpoint_deterministic_fixed_point_and_dissipation() {
        // stiff enough that the slowest mode relaxes well inside the run
        let (ws, maps, bend, mobm) = setup(8, 2.0);
        let cfg = StepperConfig::new(1e-3, 0.0, 5).unwrap();
        let mut integ = Integrator::new(&maps, &bend, &mobm, Some(&ws), cfg);
        // straight fiber with no force is a fixed point
        let straight = FiberState::straight(8, Vector3::z());
        let next = integ.midpoint_step(&straight, 0, None).unwrap();
        for p in 0..8 {
            assert!((next.tangents[p] - straight.tangents[p]).norm() < 1e-10);
        }
        // bent fiber: energy decreases monotonically
        let state = random_state(8, 2);
        let (_, series) = integ.deterministic_relax(&state, 1500).unwrap();
        let floor = 1e-12 * series[0].1;
        for w in series.windows(2) {
            assert!(
                w[1].1 <= w[0].1 * (1.0 + 1e-12) + floor,
                "energy rose: {} -> {}",
                w[0].1,
                w[1].1
            );
        }
        // approaches a zero-force configuration
        assert!(series.last().unwrap().1 < 1e-6 * series[0].1);
    }

    #[test]
    fn midpoint_preserves_norms() {
        let (ws, maps, bend, mobm) = setup(6, 0.0082);
        let mut cfg = StepperConfig::new(5e-4, 4.1e-3, 9).unwrap();
        cfg.drift_mode = DriftMode::MidpointUmd;
        let mut integ = Integrator::new(&maps, &bend, &mobm, Some(&ws), cfg);
        let mut state = FiberState::straight(6, Vector3::z());
        for step in 0..2000 {
            state = integ.midpoint_step(&state, step, None).unwrap();
        }
        assert!(state.max_norm_deviation() < 1e-12);
        assert_eq!(integ.norm_repairs, 0);
    }

    #[test]
    fn nhalf_identity_saddle_noise() {
        // solving the time-n saddle system with rhs M~^{1/2} eta gives
        // alpha with covariance N = (K^T M~^{-1} K)^+
        let (ws, maps, bend, mobm) = setup(5, 0.0);
        let state = random_state(5, 3);
        let shape = maps.positions_from_state(&state).unwrap();
        let mob = mobm.build(&shape, Some(&ws)).unwrap();
        let (k, _) = maps.kinematic_matrices(&state);
        let g = k.transpose() * mob.matrix_inv() * &k;
        let (n_mat, _) = linalg::sym_pinv(&g, 1e-12);
        let dim = 18;
        let f = RngFactory::new(31);
        let mut rng = f.stream(StreamKind::Aux, 45, 0);
        let n_draws = 200_000;
        let mut cov = DMatrix::zeros(dim, dim);
        for _ in 0..n_draws {
            let eta = normals(&mut rng, dim);
            let rhs = mob.apply_sqrt(&eta);
            let sol = saddle_solve(&mob, &k, &bend.l_full, &rhs, 0.0, 1.0).unwrap();
            cov.syger(1.0 / n_draws as f64, &sol.alpha, &sol.alpha, 1.0);
        }
        for i in 0..dim {
            for j in i + 1..dim {
                cov[(i, j)] = cov[(j, i)];
            }
        }
        // Frobenius-level 3-sigma bound from Wick variances
        let mut var_sum = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                var_sum +=
                    (n_mat[(i, i)] * n_mat[(j, j)] + n_mat[(i, j)].powi(2)) / n_draws as f64;
            }
        }
        let err = (&cov - &n_mat).norm();
        assert!(
            err <= 3.0 * var_sum.sqrt(),
            "covariance error {err} vs 3se {}",
            3.0 * var_sum.sqrt()
        );
    }

    #[test]
    fn drift_identity_finite_difference() {
        // N_ik K^T_kp d_j(Cbar_jr Kinv_rp) = 0
        let (ws, maps, _bend, mobm) = setup(5, 0.0082);
        let state = random_state(5, 12);
        let dim = 18;
        let h = 1e-5;
        let build = |flat: &DVector<f64>| -> DMatrix<f64> {
            let st = FiberState::from_flat(flat);
            let cbar = cbar_matrix(&st.tangents);
            let kinv = cbar.transpose() * &maps.xs_inv;
            &cbar * &kinv
        };
        let flat = state.flat();
        // divergence over the first index: F_p = sum_j d_j (Cbar Kinv)_{jp}
        let mut f_vec: DVector<f64> = DVector::zeros(dim);
        for j in 0..dim {
            let mut plus = flat.clone();
            plus[j] += h;
            let mut minus = flat.clone();
            minus[j] -= h;
            let bp = build(&plus);
            let bm = build(&minus);
            for p in 0..dim {
                f_vec[p] += (bp[(j, p)] - bm[(j, p)]) / (2.0 * h);
            }
        }
        let shape = maps.positions_from_state(&state).unwrap();
        let mob = mobm.build(&shape, Some(&ws)).unwrap();
        let (k, _) = maps.kinematic_matrices(&state);
        let g = k.transpose() * mob.matrix_inv() * &k;
        let (n_mat, _) = linalg::sym_pinv(&g, 1e-12);
        let nkt = &n_mat * k.transpose();
        let resid = &nkt * &f_vec;
        let scale = nkt.norm() * f_vec.norm().max(1.0);
        for i in 0..dim {
            assert!(
                resid[i].abs() <= 1e-4 * scale,
                "component {i}: {} vs scale {scale}",
                resid[i]
            );
        }
    }

    #[test]
    fn rfd_apply_variant_properties() {
        let (ws, maps, bend, _) = setup(6, 0.0);
        // constant mobility: drift vanishes identically
        let constm = MobilityModel::constant_isotropic(&ws, 1.0).unwrap();
        let cfg = StepperConfig::new(1e-3, 4.1e-3, 13).unwrap();
        let integ = Integrator::new(&maps, &bend, &constm, Some(&ws), cfg);
        let state = random_state(6, 6);
        let shape = maps.positions_from_state(&state).unwrap();
        let mob = constm.build(&shape, Some(&ws)).unwrap();
        let f = RngFactory::new(17);
        let eta = normals(&mut f.stream(StreamKind::Aux, 46, 0), 21);
        let u = integ.mobility_drift_rfd_apply(&state, &mob, &eta).unwrap();
        assert!(u.norm() < 1e-10);
        // magnitude scales with kBT for a configuration-dependent mobility
        let p = RpyParams::from_slenderness(1.0, 1e-2, 2.0).unwrap();
        let mobm = MobilityModel::DirectNodal { params: p };
        let mob = mobm.build(&shape, Some(&ws)).unwrap();
        let mut cfg2 = cfg;
        cfg2.kbt *= 2.0;
        let integ1 = Integrator::new(&maps, &bend, &mobm, Some(&ws), cfg);
        let integ2 = Integrator::new(&maps, &bend, &mobm, Some(&ws), cfg2);
        let u1 = integ1.mobility_drift_rfd_apply(&state, &mob, &eta).unwrap();
        let u2 = integ2.mobility_drift_rfd_apply(&state, &mob, &eta).unwrap();
        assert!((u2 - &u1 * 2.0).norm() < 1e-12 * u1.norm());
    }

    #[test]
    fn rfd_step_deterministic_matches_midpoint() {
        // kBT = 0: the predictor does not move, so the midpoint scheme and
        // the reference scheme solve the same implicit system
        let (ws, maps, bend, mobm) = setup(8, 0.0082);
        let state = random_state(8, 14);
        let cfg = StepperConfig::new(1e-3, 0.0, 3).unwrap();
        let mut a = Integrator::new(&maps, &bend, &mobm, Some(&ws), cfg);
        let mut b = Integrator::new(&maps, &bend, &mobm, Some(&ws), cfg);
        let s1 = a.midpoint_step(&state, 0, None).unwrap();
        let s2 = b.rfd_step(&state, 0, false).unwrap();
        assert!((s1.flat() - s2.flat()).norm() < 1e-12);
    }
}
