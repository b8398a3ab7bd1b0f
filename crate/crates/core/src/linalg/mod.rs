//! Dense and tridiagonal kernels shared by the spectral and diffusion layers.

pub mod contour;
pub mod expm;
pub mod tridiag;

pub use contour::expm_action_tridiagonal;
pub use expm::expm;
pub use tridiag::{SymTridiagonal, Tridiagonal};

use nalgebra::DMatrix;

/// Sup norm of a slice.
pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Sup-norm distance between two equally sized slices.
pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}

/// Induced 1-norm (max column sum).
pub fn norm_1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
