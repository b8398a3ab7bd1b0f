use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Result, SpectralError, STRUCTURAL_TOL};
use crate::linalg::{SymTridiagonal, Tridiagonal};

/// Validated finite-state rate matrix, symmetric with respect to `m`.
#[derive(Debug, Clone)]
pub struct ReversibleGenerator {
    q: DMatrix<f64>,
    m: Vec<f64>,
    kill: Vec<f64>,
    band: Option<Tridiagonal<f64>>,
}

/// On-disk form: `{"Q": [[...]], "m": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GeneratorJson {
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub m: Vec<f64>,
}

/// Checks the standing assumptions and derives the killing vector from the
/// row deficits.
pub fn validate_generator(q: DMatrix<f64>, m: Vec<f64>) -> Result<ReversibleGenerator> {
    let n = q.nrows();
    if q.ncols() != n {
        return Err(SpectralError::Dimension(format!(
            "Q is {}x{}, expected square",
            n,
            q.ncols()
        )));
    }
    if m.len() != n {
        return Err(SpectralError::Dimension(format!(
            "m has {} entries, Q has {} rows",
            m.len(),
            n
        )));
    }
    if n == 0 {
        return Err(SpectralError::Dimension("empty state space".into()));
    }
    for (state, &value) in m.iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(SpectralError::NonPositiveMass { state, value });
        }
    }
    if q.iter().any(|x| !x.is_finite()) {
        return Err(SpectralError::InvalidArgument(
            "Q has non-finite entries".into(),
        ));
    }

    for i in 0..n {
        for j in 0..n {
            if i != j && q[(i, j)] < 0.0 {
                return Err(SpectralError::NegativeRate {
                    i,
                    j,
                    value: q[(i, j)],
                });
            }
        }
    }

    for i in 0..n {
        for j in (i + 1)..n {
            let lhs = m[i] * q[(i, j)];
            let rhs = m[j] * q[(j, i)];
            if (lhs - rhs).abs() > STRUCTURAL_TOL * lhs.abs().max(rhs.abs()) {
                return Err(SpectralError::NonSymmetric { i, j, lhs, rhs });
            }
        }
    }

    let mut kill = vec![0.0; n];
    for i in 0..n {
        let row = q.row(i);
        let sum: f64 = row.iter().sum();
        let scale = row.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if sum > STRUCTURAL_TOL * scale.max(f64::MIN_POSITIVE) {
            return Err(SpectralError::PositiveRowSum { row: i, sum });
        }
        // deficits at rounding level are treated as conservative
        kill[i] = if -sum <= STRUCTURAL_TOL * scale {
            0.0
        } else {
            -sum
        };
    }

    if let Some(unreachable) = first_unreachable(&q) {
        return Err(SpectralError::Reducible { unreachable });
    }

    let band = Tridiagonal::from_dense(&q);
    Ok(ReversibleGenerator { q, m, kill, band })
}

/// Breadth-first search over nonzero off-diagonal entries. Detailed balance
/// makes the graph undirected, so reachability from state 0 is enough.
fn first_unreachable(q: &DMatrix<f64>) -> Option<usize> {
    let n = q.nrows();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for j in 0..n {
            if !seen[j] && j != i && q[(i, j)] > 0.0 {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen.iter().position(|s| !s)
}

impl ReversibleGenerator {
    pub fn from_json(json: &GeneratorJson) -> Result<Self> {
        let n = json.q.len();
        if json.q.iter().any(|row| row.len() != n) {
            return Err(SpectralError::Dimension(
                "Q rows have unequal lengths".into(),
            ));
        }
        let flat: Vec<f64> = json.q.iter().flatten().copied().collect();
        validate_generator(DMatrix::from_row_slice(n, n, &flat), json.m.clone())
    }

    pub fn to_json(&self) -> GeneratorJson {
        GeneratorJson {
            q: self
                .q
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            m: self.m.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.m.len()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn m(&self) -> &[f64] {
        &self.m
    }

    pub fn kill(&self) -> &[f64] {
        &self.kill
    }

    pub fn is_conservative(&self) -> bool {
        self.kill.iter().all(|&k| k == 0.0)
    }

    /// Tridiagonal form when the chain is nearest-neighbour.
    pub fn band(&self) -> Option<&Tridiagonal<f64>> {
        self.band.as_ref()
    }

    /// Largest absolute entry of `Q`.
    pub fn scale(&self) -> f64 {
        self.q.amax()
    }

    /// `S = M^{1/2}(−Q)M^{−1/2}`, symmetrized exactly.
    pub fn symmetrized(&self) -> DMatrix<f64> {
        let n = self.n();
        let sq: Vec<f64> = self.m.iter().map(|x| x.sqrt()).collect();
        let mut s = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                s[(i, j)] = -self.q[(i, j)] * sq[i] / sq[j];
            }
        }
        (&s + s.transpose()) * 0.5
    }

    /// Symmetrized matrix in tridiagonal storage, when banded.
    pub fn symmetrized_tridiagonal(&self) -> Option<SymTridiagonal> {
        self.band.as_ref().map(|b| SymTridiagonal {
            diag: b.diag.iter().map(|d| -d).collect(),
            off: b
                .sub
                .iter()
                .zip(&b.sup)
                .map(|(lo, up)| -(lo * up).sqrt())
                .collect(),
        })
    }

    /// `Q f`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        match &self.band {
            Some(b) => b.mul_vec(f),
            None => (&self.q * DVector::from_column_slice(f))
                .iter()
                .copied()
                .collect(),
        }
    }

    /// Solves `(diag(shift) − Q) x = rhs`.
    pub(crate) fn solve_shifted(&self, shift: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        let x = match &self.band {
            Some(b) => {
                let neg = b.scaled(-1.0).shifted(shift);
                neg.solve(rhs).ok_or(SpectralError::SingularSystem)?
            }
            None => {
                let mut a = -&self.q;
                for i in 0..n {
                    a[(i, i)] += shift[i];
                }
                let sol = a
                    .lu()
                    .solve(&DVector::from_column_slice(rhs))
                    .ok_or(SpectralError::SingularSystem)?;
                sol.iter().copied().collect()
            }
        };
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(SpectralError::SingularSystem)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        let n = rows.len();
        DMatrix::from_row_slice(n, n, &rows.concat())
    }

    #[test]
    fn symmetric_uniform_mass_is_valid() {
        let g = validate_generator(mat(&[&[-2.0, 1.0], &[1.0, -2.0]]), vec![1.0, 1.0]).unwrap();
        assert_eq!(g.kill(), &[1.0, 1.0]);
    }

    #[test]
    fn weighted_detailed_balance_is_valid() {
        let g = validate_generator(mat(&[&[-1.0, 1.0], &[2.0, -2.0]]), vec![2.0, 1.0]).unwrap();
        assert_eq!(g.kill(), &[0.0, 0.0]);
        assert!(g.is_conservative());
    }

    #[test]
    fn detailed_balance_violation() {
        let err =
            validate_generator(mat(&[&[-1.0, 1.0], &[1.0, -1.0]]), vec![1.0, 2.0]).unwrap_err();
        assert_eq!(err.code(), "NonSymmetric");
    }

    #[test]
    fn negative_rate_and_positive_row_sum() {
        let err =
            validate_generator(mat(&[&[-1.0, -1.0], &[-1.0, -1.0]]), vec![1.0, 1.0]).unwrap_err();
        assert_eq!(err.code(), "NegativeRate");
        let err =
            validate_generator(mat(&[&[-1.0, 2.0], &[2.0, -3.0]]), vec![1.0, 1.0]).unwrap_err();
        assert_eq!(err.code(), "PositiveRowSum");
    }

    #[test]
    fn reducible_chain_is_rejected() {
        let q = mat(&[&[-1.0, 1.0, 0.0], &[1.0, -1.0, 0.0], &[0.0, 0.0, -1.0]]);
        let err = validate_generator(q, vec![1.0; 3]).unwrap_err();
        assert_eq!(err, SpectralError::Reducible { unreachable: 2 });
    }

    #[test]
    fn dimension_and_mass_checks() {
        assert_eq!(
            validate_generator(DMatrix::zeros(2, 3), vec![1.0, 1.0])
                .unwrap_err()
                .code(),
            "Dimension"
        );
        assert_eq!(
            validate_generator(mat(&[&[-1.0]]), vec![0.0])
                .unwrap_err()
                .code(),
            "NonPositiveMass"
        );
    }

    #[test]
    fn banded_detection_and_symmetrization() {
        let q = mat(&[&[-3.0, 2.0, 0.0], &[1.0, -2.0, 1.0], &[0.0, 2.0, -2.0]]);
        let g = validate_generator(q, vec![1.0, 2.0, 1.0]).unwrap();
        let tri = g.symmetrized_tridiagonal().unwrap();
        let dense = g.symmetrized();
        assert!((tri.as_general().to_dense() - dense).amax() < 1e-15);
    }

    #[test]
    fn json_round_trip() {
        let json: GeneratorJson =
            serde_json::from_str(r#"{"Q": [[-2, 1], [1, -2]], "m": [1, 1]}"#).unwrap();
        let g = ReversibleGenerator::from_json(&json).unwrap();
        assert_eq!(g.to_json(), json);
    }
}
