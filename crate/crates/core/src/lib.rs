//! Coarse-grained Brownian dynamics of inextensible semiflexible filaments.
//!
//! The library tracks a filament by `N` unit tangent vectors on a type 1
//! Chebyshev grid plus the fiber midpoint. Positions live on the
//! endpoints-included grid of size `N+1`, obtained by spectral integration of
//! the tangents. Hydrodynamics is single-fiber Rotne-Prager-Yamakawa, with an
//! oversampled SPD reference mobility, direct nodal RPY, and a local drag
//! approximation. Overdamped Langevin dynamics is integrated with a
//! drift-correct midpoint scheme; equilibrium statistics can be checked
//! against Markov chain Monte Carlo on either the spectral chain or a
//! uniformly discretized blob-link chain.
//!
//! Modules mirror the pieces of the method:
//! - [`spectral`]: Chebyshev grids and dense spectral operators
//! - [`filament`]: fiber state, kinematics, rotation update, bending energy
//! - [`mobility`]: RPY kernel and the force-to-velocity mobility matrices
//! - [`dynamics`]: saddle-point solves and stochastic temporal integrators
//! - [`bloblink`]: the uniformly discretized bead-rod reference chain
//! - [`sampling`]: MCMC samplers and equilibrium/relaxation observables
//! - [`linearized`]: small-fluctuation analysis around a curved base state
//! - [`crosslink`]: transient cross-linker kinetics and multi-fiber stepping
//! - [`runner`]: configuration-driven experiments behind the `semiflex` CLI

pub mod bloblink;
pub mod crosslink;
pub mod dynamics;
pub mod error;
pub mod filament;
pub mod linalg;
pub mod linearized;
pub mod mobility;
pub mod rng;
pub mod runner;
pub mod sampling;
pub mod spectral;

pub use error::{Error, Result};

/// Library version string reported in run metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
