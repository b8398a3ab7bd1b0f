use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{indicator, Result, ReversibleGenerator, SpectralError, DEGENERATE_GAP, SPECTRAL_TOL};
use crate::linalg::SymTridiagonal;

/// Above this size dense decomposition gives way to shift-and-invert iteration.
pub(crate) const DENSE_LIMIT: usize = 2000;

/// Bottom of the spectrum of `−Q` and its positive, m-normalized eigenvector.
#[derive(Debug, Clone, Serialize)]
pub struct PrincipalEigenpair {
    pub lambda0: f64,
    pub phi0: Vec<f64>,
    /// Second eigenvalue, when the solver produced it.
    pub lambda1: Option<f64>,
    /// `‖−Qφ₀ − λ₀φ₀‖∞ / (‖Q‖_max ‖φ₀‖∞)`.
    pub residual: f64,
}

impl PrincipalEigenpair {
    pub fn gap(&self) -> Option<f64> {
        self.lambda1.map(|l1| l1 - self.lambda0)
    }

    /// Gap too small for conditional-law convergence to be observable.
    pub fn near_degenerate(&self) -> bool {
        self.gap().is_some_and(|g| g < DEGENERATE_GAP)
    }
}

/// Computes `(λ₀, φ₀)` from the symmetrized matrix. Nearest-neighbour chains
/// use Sturm bisection plus inverse iteration; other chains up to
/// [`DENSE_LIMIT`] states use a dense symmetric decomposition, and larger
/// ones shift-and-invert iteration.
pub fn principal_eigenpair(g: &ReversibleGenerator) -> Result<PrincipalEigenpair> {
    principal_eigenpair_with_limit(g, DENSE_LIMIT)
}

pub(crate) fn principal_eigenpair_with_limit(
    g: &ReversibleGenerator,
    dense_limit: usize,
) -> Result<PrincipalEigenpair> {
    let n = g.n();
    let m = g.m();
    let (lambda0, lambda1, u) = if n == 1 {
        (-g.q()[(0, 0)], None, vec![1.0])
    } else if let Some(tri) = g.symmetrized_tridiagonal() {
        let l0 = tri.eigenvalue(0);
        let l1 = tri.eigenvalue(1);
        let start: Vec<f64> = m.iter().map(|x| x.sqrt()).collect();
        let u = tri
            .eigenvector(l0, &start)
            .ok_or(SpectralError::ConvergenceFailure { residual: f64::NAN })?;
        (l0, Some(l1), u)
    } else if n <= dense_limit {
        let eig = g.symmetrized().symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let u = eig.eigenvectors.column(order[0]).iter().copied().collect();
        (
            eig.eigenvalues[order[0]],
            Some(eig.eigenvalues[order[1]]),
            u,
        )
    } else {
        let (l0, u) = shift_invert(&g.symmetrized())?;
        (l0, None, u)
    };

    let mut phi0: Vec<f64> = u.iter().zip(m).map(|(ui, mi)| ui / mi.sqrt()).collect();
    let norm = phi0
        .iter()
        .zip(m)
        .map(|(p, w)| p * p * w)
        .sum::<f64>()
        .sqrt();
    let sign = if phi0.iter().sum::<f64>() < 0.0 {
        -1.0
    } else {
        1.0
    };
    phi0.iter_mut().for_each(|p| *p *= sign / norm);

    let residual = relative_residual(g, lambda0, &phi0);
    if !(residual <= SPECTRAL_TOL) {
        return Err(SpectralError::ConvergenceFailure { residual });
    }
    if let Some((state, &value)) = phi0.iter().enumerate().find(|(_, &p)| !(p > 0.0)) {
        return Err(SpectralError::NonPositiveGroundState { state, value });
    }
    Ok(PrincipalEigenpair {
        lambda0,
        phi0,
        lambda1,
        residual,
    })
}

pub(crate) fn relative_residual(g: &ReversibleGenerator, lambda: f64, phi: &[f64]) -> f64 {
    let qphi = g.apply(phi);
    let num = qphi
        .iter()
        .zip(phi)
        .fold(0.0_f64, |acc, (a, p)| acc.max((-a - lambda * p).abs()));
    let denom = g.scale().max(lambda.abs()) * phi.iter().fold(0.0_f64, |a, p| a.max(p.abs()));
    if denom == 0.0 {
        num
    } else {
        num / denom
    }
}

/// Inverse iteration with shift just below zero (S is positive semidefinite),
/// finished by Rayleigh-quotient iteration.
fn shift_invert(s: &DMatrix<f64>) -> Result<(f64, Vec<f64>)> {
    let n = s.nrows();
    let scale = s.amax().max(f64::MIN_POSITIVE);
    let mut sigma = -1e-8 * scale;
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for iter in 0..500 {
        let mut shifted = s.clone();
        for i in 0..n {
            shifted[(i, i)] -= sigma;
        }
        let w = match shifted.lu().solve(&v) {
            Some(w) => w,
            None => break,
        };
        let norm = w.norm();
        if !(norm.is_finite() && norm > 0.0) {
            break;
        }
        v = w / norm;
        lambda = v.dot(&(s * &v));
        let res = (s * &v - &v * lambda).amax() / scale;
        if res < 1e-14 {
            return Ok((lambda, v.iter().copied().collect()));
        }
        // once the iterate is close, switch to Rayleigh shifts
        if iter > 20 && res < 1e-6 {
            sigma = lambda - 1e-12 * scale;
        }
    }
    let res = (s * &v - &v * lambda).amax() / scale;
    if res <= SPECTRAL_TOL {
        Ok((lambda, v.iter().copied().collect()))
    } else {
        Err(SpectralError::ConvergenceFailure { residual: res })
    }
}

/// Smallest eigenvalue of `−Q + diag(1_B)` in the m-inner product.
pub fn perturbed_principal_eigenvalue(g: &ReversibleGenerator, b: &[usize]) -> Result<f64> {
    let shift = indicator(g.n(), b)?;
    smallest_shifted(g, &shift)
}

/// Smallest eigenvalue of `S + diag(shift)`.
pub(crate) fn smallest_shifted(g: &ReversibleGenerator, shift: &[f64]) -> Result<f64> {
    if g.n() == 1 {
        return Ok(-g.q()[(0, 0)] + shift[0]);
    }
    if let Some(tri) = g.symmetrized_tridiagonal() {
        let shifted = SymTridiagonal {
            diag: tri.diag.iter().zip(shift).map(|(d, s)| d + s).collect(),
            off: tri.off,
        };
        return Ok(shifted.eigenvalue(0));
    }
    let mut s = g.symmetrized();
    for (i, v) in shift.iter().enumerate() {
        s[(i, i)] += v;
    }
    if g.n() <= DENSE_LIMIT {
        Ok(s.symmetric_eigenvalues().min())
    } else {
        shift_invert(&s).map(|(l, _)| l)
    }
}

/// The `k` smallest eigenvalues of `−Q`, ascending.
pub fn lowest_eigenvalues(g: &ReversibleGenerator, k: usize) -> Vec<f64> {
    let n = g.n();
    let k = k.min(n);
    if let Some(tri) = g.symmetrized_tridiagonal() {
        return (0..k).map(|i| tri.eigenvalue(i)).collect();
    }
    let mut all: Vec<f64> = g
        .symmetrized()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    all.sort_by(f64::total_cmp);
    all.truncate(k);
    all
}

/// `⟨−Qu, u⟩_m / ⟨u, u⟩_m`.
pub fn rayleigh_quotient(g: &ReversibleGenerator, u: &[f64]) -> f64 {
    let qu = g.apply(u);
    let m = g.m();
    let num: f64 = qu.iter().zip(u).zip(m).map(|((a, b), w)| -a * b * w).sum();
    let den: f64 = u.iter().zip(m).map(|(a, w)| a * a * w).sum();
    num / den
}
