//! Quasi-stationary distributions of symmetric killed Markov processes.
//!
//! The crate is organised as a verification ladder:
//!
//! * [`spectral`]: exact linear algebra on finite reversible sub-Markovian
//!   generators (ground state, semigroup, resolvents, Doob transform, QSD).
//! * [`diffusion`]: one-dimensional killed diffusions, Feller boundary
//!   classification, and finite-volume discretization onto a generator.
//! * [`montecarlo`]: killed-path simulation and estimators cross-checked
//!   against the spectral quantities.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod expr;
pub mod linalg;
pub mod montecarlo;
pub mod quad;
pub mod report;
pub mod spectral;
pub mod stats;
pub mod sweep;

pub use diffusion::{BoundaryClass, Diffusion1D, Grid};
pub use spectral::{DoobGenerator, PrincipalEigenpair, QsdVector, ReversibleGenerator};
