//! Tridiagonal storage, pivoted solves, and Sturm-sequence eigenvalues.

use nalgebra::{ComplexField, DMatrix};

/// General tridiagonal matrix: `sub[i] = A[i+1][i]`, `sup[i] = A[i][i+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal<T> {
    pub sub: Vec<T>,
    pub diag: Vec<T>,
    pub sup: Vec<T>,
}

impl<T: ComplexField + Copy> Tridiagonal<T> {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut acc = self.diag[i] * x[i];
                if i > 0 {
                    acc += self.sub[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    acc += self.sup[i] * x[i + 1];
                }
                acc
            })
            .collect()
    }

    /// Solves `A x = b` by Gaussian elimination with partial pivoting
    /// (the LAPACK `gtsv` scheme). Returns `None` on an exactly zero pivot.
    pub fn solve(&self, b: &[T]) -> Option<Vec<T>> {
        let n = self.len();
        assert_eq!(b.len(), n);
        if n == 0 {
            return Some(Vec::new());
        }
        let mut d = self.diag.clone();
        let mut du = self.sup.clone();
        // holds the sub-diagonal on input, the second super-diagonal fill afterwards
        let mut dl = self.sub.clone();
        let mut x = b.to_vec();
        let zero = T::zero();

        for i in 0..n.saturating_sub(1) {
            if d[i].modulus() >= dl[i].modulus() {
                if d[i] == zero {
                    return None;
                }
                let fact = dl[i] / d[i];
                d[i + 1] -= fact * du[i];
                let xi = x[i];
                x[i + 1] -= fact * xi;
                dl[i] = zero;
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                let temp = d[i + 1];
                d[i + 1] = du[i] - fact * temp;
                if i + 2 < n {
                    dl[i] = du[i + 1];
                    du[i + 1] = -fact * dl[i];
                } else {
                    dl[i] = zero;
                }
                du[i] = temp;
                let temp = x[i];
                x[i] = x[i + 1];
                x[i + 1] = temp - fact * x[i + 1];
            }
        }
        if d[n - 1] == zero {
            return None;
        }
        x[n - 1] /= d[n - 1];
        if n > 1 {
            x[n - 2] = (x[n - 2] - du[n - 2] * x[n - 1]) / d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            x[i] = (x[i] - du[i] * x[i + 1] - dl[i] * x[i + 2]) / d[i];
        }
        Some(x)
    }
}

impl Tridiagonal<f64> {
    /// Extracts the tridiagonal part of `a` if every entry outside the band is zero.
    pub fn from_dense(a: &DMatrix<f64>) -> Option<Self> {
        let n = a.nrows();
        for j in 0..n {
            for i in 0..n {
                if (i as isize - j as isize).abs() > 1 && a[(i, j)] != 0.0 {
                    return None;
                }
            }
        }
        Some(Self {
            sub: (0..n.saturating_sub(1)).map(|i| a[(i + 1, i)]).collect(),
            diag: (0..n).map(|i| a[(i, i)]).collect(),
            sup: (0..n.saturating_sub(1)).map(|i| a[(i, i + 1)]).collect(),
        })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = self.diag[i];
            if i + 1 < n {
                a[(i, i + 1)] = self.sup[i];
                a[(i + 1, i)] = self.sub[i];
            }
        }
        a
    }

    /// `self + diag(shift)`.
    pub fn shifted(&self, shift: &[f64]) -> Self {
        let mut out = self.clone();
        for (d, s) in out.diag.iter_mut().zip(shift) {
            *d += s;
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            sub: self.sub.iter().map(|x| x * c).collect(),
            diag: self.diag.iter().map(|x| x * c).collect(),
            sup: self.sup.iter().map(|x| x * c).collect(),
        }
    }
}

/// Real symmetric tridiagonal matrix with diagonal `diag` and off-diagonal `off`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn as_general(&self) -> Tridiagonal<f64> {
        Tridiagonal {
            sub: self.off.clone(),
            diag: self.diag.clone(),
            sup: self.off.clone(),
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.as_general().mul_vec(x)
    }

    /// Gershgorin enclosure of the spectrum.
    pub fn gershgorin(&self) -> (f64, f64) {
        let n = self.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let mut r = 0.0;
            if i > 0 {
                r += self.off[i - 1].abs();
            }
            if i + 1 < n {
                r += self.off[i].abs();
            }
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    /// Number of eigenvalues strictly below `x` (Sturm count from the LDLᵀ pivots).
    pub fn count_below(&self, x: f64) -> usize {
        let n = self.len();
        let mut count = 0;
        let mut q = 1.0;
        for i in 0..n {
            let e2 = if i > 0 {
                self.off[i - 1] * self.off[i - 1]
            } else {
                0.0
            };
            q = self.diag[i] - x - if i > 0 { e2 / q } else { 0.0 };
            if q == 0.0 {
                q = -f64::EPSILON * (self.diag[i].abs() + x.abs() + f64::MIN_POSITIVE);
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// The `k`-th smallest eigenvalue (0-based) by bisection to full precision.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        assert!(k < self.len());
        let (mut lo, mut hi) = self.gershgorin();
        let pad = f64::EPSILON * (lo.abs().max(hi.abs()) + 1.0);
        lo -= pad;
        hi += pad;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Inverse iteration for the eigenvector of a known eigenvalue, 2-normalized.
    pub fn eigenvector(&self, lambda: f64, start: &[f64]) -> Option<Vec<f64>> {
        let n = self.len();
        let scale = self
            .diag
            .iter()
            .chain(&self.off)
            .fold(0.0_f64, |a, x| a.max(x.abs()));
        let mut shifted = self.as_general();
        for d in &mut shifted.diag {
            *d -= lambda;
        }
        let mut v = start.to_vec();
        normalize(&mut v);
        for _ in 0..4 {
            let w = match shifted.solve(&v) {
                Some(w) => w,
                None => {
                    // exact singularity: nudge the shift off the eigenvalue
                    let eps = f64::EPSILON * scale.max(1.0);
                    let nudged = shifted.shifted(&vec![eps; n]);
                    nudged.solve(&v)?
                }
            };
            v = w;
            if !v.iter().all(|x| x.is_finite()) {
                return None;
            }
            normalize(&mut v);
        }
        Some(v)
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn laplacian(n: usize) -> SymTridiagonal {
        SymTridiagonal {
            diag: vec![2.0; n],
            off: vec![-1.0; n - 1],
        }
    }

    #[test]
    fn bisection_matches_closed_form_laplacian() {
        let n = 50;
        let t = laplacian(n);
        for k in [0, 1, 10, 49] {
            let exact = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
            assert!((t.eigenvalue(k) - exact).abs() < 1e-13, "k={k}");
        }
    }

    #[test]
    fn inverse_iteration_recovers_sine_mode() {
        let n = 40;
        let t = laplacian(n);
        let lambda = t.eigenvalue(0);
        let v = t.eigenvector(lambda, &vec![1.0; n]).unwrap();
        let h = std::f64::consts::PI / (n + 1) as f64;
        let mut exact: Vec<f64> = (1..=n).map(|i| (i as f64 * h).sin()).collect();
        normalize(&mut exact);
        for (a, b) in v.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pivoted_solve_agrees_with_dense() {
        let t = Tridiagonal {
            sub: vec![5.0, -1.0, 3.0, 0.5],
            diag: vec![0.1, 2.0, 0.0, 4.0, 1.0],
            sup: vec![1.0, 7.0, -2.0, 1.5],
        };
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        let x = t.solve(&b).unwrap();
        let dense = t.to_dense();
        let reference = dense
            .lu()
            .solve(&nalgebra::DVector::from_column_slice(&b))
            .unwrap();
        for (a, r) in x.iter().zip(reference.iter()) {
            assert!((a - r).abs() < 1e-12);
        }
    }

    #[test]
    fn complex_solve_round_trips() {
        let z = Complex64::new(0.3, 1.7);
        let t = Tridiagonal {
            sub: vec![Complex64::new(-1.0, 0.0); 3],
            diag: vec![z + 2.0; 4],
            sup: vec![Complex64::new(-0.5, 0.0); 3],
        };
        let b: Vec<Complex64> = (0..4).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let x = t.solve(&b).unwrap();
        let back = t.mul_vec(&x);
        for (a, r) in back.iter().zip(&b) {
            assert!((a - r).norm() < 1e-13);
        }
    }

    #[test]
    fn singular_system_reports_none() {
        let t = Tridiagonal {
            sub: vec![0.0],
            diag: vec![0.0, 1.0],
            sup: vec![0.0],
        };
        assert!(t.solve(&[1.0, 1.0]).is_none());
    }
}
