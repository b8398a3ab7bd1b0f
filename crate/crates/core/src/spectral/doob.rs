use nalgebra::DMatrix;
use serde::Serialize;

use super::eigen::relative_residual;
use super::{
    lowest_eigenvalues, semigroup_apply, validate_generator, PrincipalEigenpair, Result,
    ReversibleGenerator, SpectralError, STRUCTURAL_TOL,
};
use crate::linalg::sup_distance;

/// Eigenpairs whose residual exceeds this are refused by [`doob_transform`].
const CONSISTENCY_TOL: f64 = 1e-9;

/// Ground-state transformed generator `Qh = Φ⁻¹QΦ + λ₀I`, conservative and
/// reversible with respect to `mh = φ₀² m`.
#[derive(Debug, Clone)]
pub struct DoobGenerator {
    generator: ReversibleGenerator,
}

impl DoobGenerator {
    pub fn generator(&self) -> &ReversibleGenerator {
        &self.generator
    }

    pub fn qh(&self) -> &DMatrix<f64> {
        self.generator.q()
    }

    pub fn mh(&self) -> &[f64] {
        self.generator.m()
    }

    /// `max_i |Σ_j Qh_ij|`.
    pub fn max_row_sum(&self) -> f64 {
        self.qh()
            .row_iter()
            .map(|r| r.iter().sum::<f64>().abs())
            .fold(0.0, f64::max)
    }

    /// `max_{i≠j} |mh_i Qh_ij − mh_j Qh_ji|`.
    pub fn detailed_balance_defect(&self) -> f64 {
        let q = self.qh();
        let m = self.mh();
        let n = m.len();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((m[i] * q[(i, j)] - m[j] * q[(j, i)]).abs());
            }
        }
        worst
    }

    /// Spectral gap of `−Qh` in `L²(mh)`.
    pub fn spectral_gap(&self) -> Option<f64> {
        let ev = lowest_eigenvalues(&self.generator, 2);
        (ev.len() == 2).then(|| ev[1] - ev[0])
    }
}

/// Transforms `g` by the multiplicative functional `e^{λ₀t} φ₀(X_t)/φ₀(X_0)`.
/// The diagonal is set to minus the off-diagonal row sum, which equals
/// `Q_ii + λ₀` up to the eigen residual; that difference is what
/// `InconsistentEigenpair` guards.
pub fn doob_transform(g: &ReversibleGenerator, eig: &PrincipalEigenpair) -> Result<DoobGenerator> {
    let n = g.n();
    if eig.phi0.len() != n {
        return Err(SpectralError::Dimension(
            "eigenpair and generator differ in size".into(),
        ));
    }
    let residual = relative_residual(g, eig.lambda0, &eig.phi0);
    if !(residual <= CONSISTENCY_TOL) || eig.phi0.iter().any(|&p| !(p > 0.0)) {
        return Err(SpectralError::InconsistentEigenpair { residual });
    }
    let q = g.q();
    let phi = &eig.phi0;
    let mut qh = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if i != j && q[(i, j)] != 0.0 {
                qh[(i, j)] = q[(i, j)] * phi[j] / phi[i];
                off += qh[(i, j)];
            }
        }
        qh[(i, i)] = -off;
    }
    let mh: Vec<f64> = phi.iter().zip(g.m()).map(|(p, m)| p * p * m).collect();
    let generator = validate_generator(qh, mh)?;
    Ok(DoobGenerator { generator })
}

/// `‖e^{tQ}f − e^{−λ₀t} φ₀ ⊙ e^{tQh}(f/φ₀)‖∞`.
pub fn semigroup_intertwining_check(
    g: &ReversibleGenerator,
    eig: &PrincipalEigenpair,
    t: f64,
    f: &[f64],
) -> Result<f64> {
    let dg = doob_transform(g, eig)?;
    if t == 0.0 {
        // both sides are the identity applied to f
        return Ok(0.0);
    }
    let lhs = semigroup_apply(g, t, f)?;
    let ratio: Vec<f64> = f.iter().zip(&eig.phi0).map(|(a, p)| a / p).collect();
    let transformed = semigroup_apply(dg.generator(), t, &ratio)?;
    let decay = (-eig.lambda0 * t).exp();
    let rhs: Vec<f64> = transformed
        .iter()
        .zip(&eig.phi0)
        .map(|(v, p)| decay * p * v)
        .collect();
    Ok(sup_distance(&lhs, &rhs))
}

#[derive(Debug, Clone, Serialize)]
pub struct ErgodicLimit {
    /// `e^{tQh} f`.
    pub values: Vec<f64>,
    /// `Σ f_i mh_i / Σ mh_i`.
    pub limit: f64,
    /// Sup-norm distance of `values` from `limit`.
    pub distance: f64,
}

/// Long-time behaviour of a conservative reversible semigroup.
pub fn ergodic_limit(g: &ReversibleGenerator, f: &[f64], t: f64) -> Result<ErgodicLimit> {
    let max_row_sum = g
        .q()
        .row_iter()
        .map(|r| r.iter().sum::<f64>().abs())
        .fold(0.0, f64::max);
    if !g.is_conservative() || max_row_sum > STRUCTURAL_TOL * g.scale().max(1.0) {
        return Err(SpectralError::NotConservative { max_row_sum });
    }
    let values = semigroup_apply(g, t, f)?;
    let m = g.m();
    let limit = f.iter().zip(m).map(|(a, w)| a * w).sum::<f64>() / m.iter().sum::<f64>();
    let distance = values
        .iter()
        .fold(0.0_f64, |acc, v| acc.max((v - limit).abs()));
    Ok(ErgodicLimit {
        values,
        limit,
        distance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::principal_eigenpair;
    use crate::sweep::random_reversible_generator;

    fn two_state(a: f64, k: f64) -> ReversibleGenerator {
        validate_generator(
            DMatrix::from_row_slice(2, 2, &[-a - k, a, a, -a - k]),
            vec![1.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn single_state_becomes_trivial() {
        let g = validate_generator(DMatrix::from_element(1, 1, -2.5), vec![1.0]).unwrap();
        let e = principal_eigenpair(&g).unwrap();
        let dg = doob_transform(&g, &e).unwrap();
        assert_eq!(dg.qh()[(0, 0)], 0.0);
        assert!(semigroup_intertwining_check(&g, &e, 1.7, &[0.3]).unwrap() < 1e-15);
    }

    #[test]
    fn equal_killing_is_removed_exactly() {
        let (a, k) = (0.8, 0.3);
        let g = two_state(a, k);
        let e = principal_eigenpair(&g).unwrap();
        let dg = doob_transform(&g, &e).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[-a, a, a, -a]);
        assert!((dg.qh() - expected).amax() < 1e-14);
    }

    #[test]
    fn random_chain_is_conservative_and_balanced() {
        for seed in 0..10 {
            let g = random_reversible_generator(20, seed);
            let e = principal_eigenpair(&g).unwrap();
            let dg = doob_transform(&g, &e).unwrap();
            assert!(dg.max_row_sum() <= 1e-12);
            assert!(dg.detailed_balance_defect() <= 1e-12);
            let f: Vec<f64> = (0..20)
                .map(|i| ((i * 37) % 11) as f64 / 11.0 - 0.5)
                .collect();
            assert_eq!(semigroup_intertwining_check(&g, &e, 0.0, &f).unwrap(), 0.0);
            assert!(semigroup_intertwining_check(&g, &e, 3.0, &f).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn inconsistent_eigenpair_is_refused() {
        let g = random_reversible_generator(8, 3);
        let mut e = principal_eigenpair(&g).unwrap();
        e.lambda0 += 1e-3;
        assert_eq!(
            doob_transform(&g, &e).unwrap_err().code(),
            "InconsistentEigenpair"
        );
    }

    #[test]
    fn two_state_ergodic_decay_by_hand() {
        let (a, k) = (0.6, 0.2);
        let g = two_state(a, k);
        let dg = doob_transform(&g, &principal_eigenpair(&g).unwrap()).unwrap();
        for t in [0.5, 1.0, 3.0] {
            let r = ergodic_limit(dg.generator(), &[1.0, 0.0], t).unwrap();
            assert!((r.limit - 0.5).abs() < 1e-15);
            assert!((r.distance - 0.5 * (-2.0 * a * t).exp()).abs() < 1e-13);
        }
        let c = ergodic_limit(dg.generator(), &[2.5, 2.5], 4.0).unwrap();
        assert!(c.distance < 1e-13 && (c.limit - 2.5).abs() < 1e-15);
    }

    #[test]
    fn killed_chain_is_not_ergodic_input() {
        let g = two_state(1.0, 1.0);
        assert_eq!(
            ergodic_limit(&g, &[1.0, 0.0], 1.0).unwrap_err().code(),
            "NotConservative"
        );
    }
}
