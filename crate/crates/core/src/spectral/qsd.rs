use serde::Serialize;

use super::{
    principal_eigenpair, semigroup::semigroup_apply_shifted, semigroup_apply, Result,
    ReversibleGenerator, SpectralError, EXTINCTION_FLOOR, SPECTRAL_TOL, STRUCTURAL_TOL,
};
use crate::linalg::sup_distance;

/// Probability vector over states.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QsdVector {
    nu: Vec<f64>,
}

impl QsdVector {
    /// Validates nonnegativity and unit total mass.
    pub fn new(nu: Vec<f64>) -> Result<Self> {
        if nu.is_empty() {
            return Err(SpectralError::Dimension("empty distribution".into()));
        }
        if let Some(bad) = nu.iter().find(|&&p| !(p >= 0.0)) {
            return Err(SpectralError::InvalidArgument(format!(
                "negative or NaN mass {bad}"
            )));
        }
        let total: f64 = nu.iter().sum();
        if (total - 1.0).abs() > STRUCTURAL_TOL * nu.len() as f64 {
            return Err(SpectralError::InvalidArgument(format!(
                "masses sum to {total}, not 1"
            )));
        }
        Ok(Self { nu })
    }

    /// Normalizes a nonnegative weight vector.
    pub fn from_weights(w: Vec<f64>) -> Result<Self> {
        let total: f64 = w.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(SpectralError::InvalidArgument(format!(
                "weights sum to {total}"
            )));
        }
        Self::new(w.into_iter().map(|x| x / total).collect())
    }

    /// Point mass at state `x` of `n`.
    pub fn dirac(n: usize, x: usize) -> Self {
        let mut nu = vec![0.0; n];
        nu[x] = 1.0;
        Self { nu }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.nu
    }

    pub fn len(&self) -> usize {
        self.nu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nu.is_empty()
    }

    pub fn tv_distance(&self, other: &QsdVector) -> f64 {
        0.5 * self
            .nu
            .iter()
            .zip(&other.nu)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// `ν_i ∝ φ₀_i m_i`.
pub fn qsd(g: &ReversibleGenerator) -> Result<QsdVector> {
    if g.is_conservative() {
        return Err(SpectralError::ConservativeChain);
    }
    let e = principal_eigenpair(g)?;
    QsdVector::from_weights(e.phi0.iter().zip(g.m()).map(|(p, m)| p * m).collect())
}

/// `νᵀ e^{tQ} 1`, the probability of surviving past `t` from `ν`.
pub fn survival_probability(g: &ReversibleGenerator, nu: &[f64], t: f64) -> Result<f64> {
    let p = semigroup_apply(g, t, &vec![1.0; g.n()])?;
    Ok(p.iter().zip(nu).map(|(a, b)| a * b).sum())
}

/// Law of `X_t` under `P_ν` conditioned on survival past `t`:
/// `νᵀe^{tQ} / νᵀe^{tQ}1`.
pub fn conditional_law(g: &ReversibleGenerator, nu: &QsdVector, t: f64) -> Result<QsdVector> {
    if nu.len() != g.n() {
        return Err(SpectralError::Dimension(
            "initial law and generator differ in size".into(),
        ));
    }
    if t == 0.0 {
        return Ok(nu.clone());
    }
    // Qᵀ = M Q M⁻¹, so νᵀe^{tQ} = M e^{tQ} (M⁻¹ν); shifting Q by λ₀ only
    // rescales the row, which the normalization removes
    let m = g.m();
    let scaled: Vec<f64> = nu.as_slice().iter().zip(m).map(|(p, w)| p / w).collect();
    let shift = principal_eigenpair(g)?.lambda0.max(0.0);
    let evolved = semigroup_apply_shifted(g, t, &scaled, shift)?;
    let row: Vec<f64> = evolved.iter().zip(m).map(|(v, w)| v * w).collect();
    let shifted_mass: f64 = row.iter().sum();
    let log_mass = shifted_mass.ln() - shift * t;
    if !(shifted_mass > 0.0) || !(log_mass > EXTINCTION_FLOOR.ln()) {
        return Err(SpectralError::ExtinctMass {
            mass: log_mass.exp(),
        });
    }
    let peak = row.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    // rounding can leave tiny negative entries where the law is ~0
    let clean: Vec<f64> = row
        .into_iter()
        .map(|v| {
            if v < 0.0 && -v <= 1e-13 * peak {
                0.0
            } else {
                v
            }
        })
        .collect();
    QsdVector::from_weights(clean)
}

#[derive(Debug, Clone, Serialize)]
pub struct UniquenessReport {
    /// Number of sign-definite left eigenvectors of `Q`.
    pub nonnegative_count: usize,
    /// Eigenvalue of `−Q` carried by the sign-definite left eigenvector.
    pub eigenvalue: f64,
    /// The normalized sign-definite left eigenvector.
    pub candidate: QsdVector,
    /// Sup distance between the candidate and `qsd(g)`.
    pub distance_to_qsd: f64,
    pub matches_qsd: bool,
}

/// Finite-state uniqueness: a probability vector with `ν = conditional_law(ν, t)`
/// for some `t > 0` is a nonnegative left eigenvector of `Q`; this checks that
/// exactly one such eigenvector exists and that it is `qsd(g)`.
pub fn uniqueness_check(g: &ReversibleGenerator) -> Result<UniquenessReport> {
    if g.is_conservative() {
        return Err(SpectralError::ConservativeChain);
    }
    let n = g.n();
    let reference = qsd(g)?;
    let sq: Vec<f64> = g.m().iter().map(|x| x.sqrt()).collect();
    let (values, vectors): (Vec<f64>, Vec<Vec<f64>>) = if n == 1 {
        (vec![-g.q()[(0, 0)]], vec![vec![1.0]])
    } else {
        let eig = g.symmetrized().symmetric_eigen();
        (
            eig.eigenvalues.iter().copied().collect(),
            eig.eigenvectors
                .column_iter()
                .map(|c| c.iter().zip(&sq).map(|(u, s)| u * s).collect())
                .collect(),
        )
    };

    let mut found = Vec::new();
    for (k, v) in vectors.iter().enumerate() {
        let peak = v.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        let tol = 1e-9 * peak;
        if v.iter().all(|&x| x >= -tol) || v.iter().all(|&x| x <= tol) {
            found.push(k);
        }
    }
    if found.len() != 1 {
        return Err(SpectralError::MultipleNonnegativeEigenvectors { count: found.len() });
    }
    let k = found[0];
    let w: Vec<f64> = vectors[k].iter().map(|x| x.abs()).collect();
    let candidate = QsdVector::from_weights(w)?;
    let distance_to_qsd = sup_distance(candidate.as_slice(), reference.as_slice());
    Ok(UniquenessReport {
        nonnegative_count: 1,
        eigenvalue: values[k],
        candidate,
        distance_to_qsd,
        matches_qsd: distance_to_qsd <= SPECTRAL_TOL,
    })
}
