//! Exact linear algebra for finite reversible sub-Markovian generators.
//!
//! A [`ReversibleGenerator`] is a rate matrix `Q` that is symmetric with
//! respect to a positive measure `m` (detailed balance) and whose row deficit
//! is a killing rate. Everything here is computed through the symmetrized
//! matrix `S = M^{1/2}(−Q)M^{−1/2}`, which has a real spectrum.

mod doob;
mod eigen;
mod generator;
mod qsd;
mod semigroup;

pub use doob::{
    doob_transform, ergodic_limit, semigroup_intertwining_check, DoobGenerator, ErgodicLimit,
};
pub use eigen::{
    lowest_eigenvalues, perturbed_principal_eigenvalue, principal_eigenpair, rayleigh_quotient,
    PrincipalEigenpair,
};
pub use generator::{validate_generator, GeneratorJson, ReversibleGenerator};
pub use qsd::{
    conditional_law, qsd, survival_probability, uniqueness_check, QsdVector, UniquenessReport,
};
pub use semigroup::{
    exp_lifetime_moment, exp_lifetime_moments, feynman_kac_resolvent, resolvent, semigroup_apply,
};

use thiserror::Error;

/// Row-sum and detailed-balance tolerance (relative).
pub const STRUCTURAL_TOL: f64 = 1e-12;
/// Eigen-residual tolerance (relative).
pub const SPECTRAL_TOL: f64 = 1e-10;
/// Gaps below this are flagged as near-degenerate.
pub const DEGENERATE_GAP: f64 = 1e-8;
/// Mass below which a conditioned law is considered extinct.
pub const EXTINCTION_FLOOR: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("reference mass at state {state} is not strictly positive ({value})")]
    NonPositiveMass { state: usize, value: f64 },
    #[error("detailed balance violated at ({i}, {j}): m_i Q_ij = {lhs:e} but m_j Q_ji = {rhs:e}")]
    NonSymmetric {
        i: usize,
        j: usize,
        lhs: f64,
        rhs: f64,
    },
    #[error("negative off-diagonal rate Q[{i}][{j}] = {value:e}")]
    NegativeRate { i: usize, j: usize, value: f64 },
    #[error("row {row} has positive sum {sum:e}")]
    PositiveRowSum { row: usize, sum: f64 },
    #[error("generator is reducible: state {unreachable} cannot be reached from state 0")]
    Reducible { unreachable: usize },
    #[error("eigen iteration did not converge (relative residual {residual:e})")]
    ConvergenceFailure { residual: f64 },
    #[error("ground state is not positive at state {state} (value {value:e})")]
    NonPositiveGroundState { state: usize, value: f64 },
    #[error("matrix exponential overflowed at t = {t}")]
    OverflowAtHorizon { t: f64 },
    #[error("linear system is singular")]
    SingularSystem,
    #[error("Feynman–Kac operator is not positive definite (smallest eigenvalue {smallest:e})")]
    NotPositiveDefinite { smallest: f64 },
    #[error("gamma = {gamma} is not below lambda0 = {lambda0}: E(exp(gamma * lifetime)) diverges")]
    GammaAtOrAboveLambda0 { gamma: f64, lambda0: f64 },
    #[error("chain has no killing; a quasi-stationary distribution does not exist")]
    ConservativeChain,
    #[error("surviving mass {mass:e} fell below the underflow guard")]
    ExtinctMass { mass: f64 },
    #[error("eigenpair inconsistent with generator (relative residual {residual:e})")]
    InconsistentEigenpair { residual: f64 },
    #[error("generator is not conservative (max |row sum| = {max_row_sum:e})")]
    NotConservative { max_row_sum: f64 },
    #[error("expected exactly one nonnegative left eigenvector, found {count}")]
    MultipleNonnegativeEigenvectors { count: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl SpectralError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Dimension(_) => "Dimension",
            Self::NonPositiveMass { .. } => "NonPositiveMass",
            Self::NonSymmetric { .. } => "NonSymmetric",
            Self::NegativeRate { .. } => "NegativeRate",
            Self::PositiveRowSum { .. } => "PositiveRowSum",
            Self::Reducible { .. } => "Reducible",
            Self::ConvergenceFailure { .. } => "ConvergenceFailure",
            Self::NonPositiveGroundState { .. } => "NonPositiveGroundState",
            Self::OverflowAtHorizon { .. } => "OverflowAtHorizon",
            Self::SingularSystem => "SingularSystem",
            Self::NotPositiveDefinite { .. } => "NotPositiveDefinite",
            Self::GammaAtOrAboveLambda0 { .. } => "GammaAtOrAboveLambda0",
            Self::ConservativeChain => "ConservativeChain",
            Self::ExtinctMass { .. } => "ExtinctMass",
            Self::InconsistentEigenpair { .. } => "InconsistentEigenpair",
            Self::NotConservative { .. } => "NotConservative",
            Self::MultipleNonnegativeEigenvectors { .. } => "MultipleNonnegativeEigenvectors",
            Self::InvalidArgument(_) => "InvalidArgument",
        }
    }
}

pub type Result<T> = std::result::Result<T, SpectralError>;

/// Indicator vector of a state subset; rejects out-of-range indices.
pub fn indicator(n: usize, states: &[usize]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    for &s in states {
        if s >= n {
            return Err(SpectralError::InvalidArgument(format!(
                "state {s} out of range for {n} states"
            )));
        }
        out[s] = 1.0;
    }
    Ok(out)
}
