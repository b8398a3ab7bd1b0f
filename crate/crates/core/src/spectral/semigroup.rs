use nalgebra::{DMatrix, DVector};

use super::eigen::smallest_shifted;
use super::{indicator, principal_eigenpair, Result, ReversibleGenerator, SpectralError};
use crate::linalg::{expm, expm_action_tridiagonal};

/// Banded chains above this size use the contour-integral action instead of
/// forming the dense exponential.
const DENSE_EXPM_LIMIT: usize = 128;

/// `p_t f = exp(tQ) f`.
pub fn semigroup_apply(g: &ReversibleGenerator, t: f64, f: &[f64]) -> Result<Vec<f64>> {
    semigroup_apply_shifted(g, t, f, 0.0)
}

/// `exp(t(Q + cI)) f`. With `c ≤ λ₀` the spectrum stays non-positive and
/// the result keeps its scale when `e^{−λ₀t}` alone would underflow.
pub(crate) fn semigroup_apply_shifted(
    g: &ReversibleGenerator,
    t: f64,
    f: &[f64],
    c: f64,
) -> Result<Vec<f64>> {
    check_len(g, f)?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(SpectralError::InvalidArgument(format!(
            "time must be finite and ≥ 0, got {t}"
        )));
    }
    if t == 0.0 {
        return Ok(f.to_vec());
    }
    let n = g.n();
    let out = match g.band() {
        Some(band) if n > DENSE_EXPM_LIMIT => {
            expm_action_tridiagonal(&band.shifted(&vec![c; n]).scaled(t), f)
        }
        _ => {
            let a = (g.q() + DMatrix::<f64>::identity(n, n) * c) * t;
            expm(&a).map(|e| {
                (e * DVector::from_column_slice(f))
                    .iter()
                    .copied()
                    .collect()
            })
        }
    };
    out.ok_or(SpectralError::OverflowAtHorizon { t })
}

/// `R_α f = (αI − Q)⁻¹ f`.
pub fn resolvent(g: &ReversibleGenerator, alpha: f64, f: &[f64]) -> Result<Vec<f64>> {
    check_len(g, f)?;
    if !(alpha > 0.0) {
        return Err(SpectralError::InvalidArgument(format!(
            "alpha must be > 0, got {alpha}"
        )));
    }
    g.solve_shifted(&vec![alpha; g.n()], f)
}

/// `R^{λ₀,K}_β f = ((β − λ₀)I + diag(1_K) − Q)⁻¹ f`, the resolvent of the
/// process killed at unit rate on `K` and tilted by `e^{λ₀ t}`.
pub fn feynman_kac_resolvent(
    g: &ReversibleGenerator,
    k: &[usize],
    lambda0: f64,
    beta: f64,
    f: &[f64],
) -> Result<Vec<f64>> {
    check_len(g, f)?;
    if !(beta >= 0.0) {
        return Err(SpectralError::InvalidArgument(format!(
            "beta must be ≥ 0, got {beta}"
        )));
    }
    let shift: Vec<f64> = indicator(g.n(), k)?
        .into_iter()
        .map(|s| s + beta - lambda0)
        .collect();
    let smallest = smallest_shifted(g, &shift)?;
    if !(smallest > 0.0) {
        return Err(SpectralError::NotPositiveDefinite { smallest });
    }
    g.solve_shifted(&shift, f)
}

/// `E_x(e^{γζ})` for every starting state: `1 + γ (−Q − γI)⁻¹ 1`.
pub fn exp_lifetime_moments(g: &ReversibleGenerator, gamma: f64) -> Result<Vec<f64>> {
    if !(gamma >= 0.0) {
        return Err(SpectralError::InvalidArgument(format!(
            "gamma must be ≥ 0, got {gamma}"
        )));
    }
    let lambda0 = principal_eigenpair(g)?.lambda0;
    if gamma >= lambda0 {
        return Err(SpectralError::GammaAtOrAboveLambda0 { gamma, lambda0 });
    }
    let n = g.n();
    if gamma == 0.0 {
        return Ok(vec![1.0; n]);
    }
    let sol = g.solve_shifted(&vec![-gamma; n], &vec![1.0; n])?;
    Ok(sol.into_iter().map(|v| 1.0 + gamma * v).collect())
}

/// `E_x(e^{γζ})` from state `x`; rejects `γ ≥ λ₀`.
pub fn exp_lifetime_moment(g: &ReversibleGenerator, gamma: f64, x: usize) -> Result<f64> {
    if x >= g.n() {
        return Err(SpectralError::InvalidArgument(format!(
            "state {x} out of range"
        )));
    }
    exp_lifetime_moments(g, gamma).map(|v| v[x])
}

fn check_len(g: &ReversibleGenerator, f: &[f64]) -> Result<()> {
    if f.len() == g.n() {
        Ok(())
    } else {
        Err(SpectralError::Dimension(format!(
            "vector has {} entries, generator has {} states",
            f.len(),
            g.n()
        )))
    }
}
