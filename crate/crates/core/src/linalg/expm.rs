//! Matrix exponential via scaling and squaring with diagonal Padé approximants.
//!
//! Degree selection follows Higham (2005): the smallest degree in
//! {3, 5, 7, 9, 13} whose backward-error bound covers `‖A‖₁` is used
//! unscaled; otherwise the matrix is scaled by `2^-s` so that degree 13
//! applies, and the result is squared `s` times.

use nalgebra::DMatrix;

use super::norm_1;

const THETA_3: f64 = 1.495_585_217_958_292e-2;
const THETA_5: f64 = 2.539_398_330_063_230e-1;
const THETA_7: f64 = 9.504_178_996_162_932e-1;
const THETA_9: f64 = 2.097_847_961_257_068;
const THETA_13: f64 = 5.371_920_351_148_152;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [
    17_297_280.0,
    8_648_640.0,
    1_995_840.0,
    277_200.0,
    25_200.0,
    1_512.0,
    56.0,
    1.0,
];
const B9: [f64; 10] = [
    17_643_225_600.0,
    8_821_612_800.0,
    2_075_673_600.0,
    302_702_400.0,
    30_270_240.0,
    2_162_160.0,
    110_880.0,
    3_960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

/// Computes `exp(A)` for a square real matrix.
///
/// Returns `None` when the Padé denominator is singular or the result is not
/// finite (overflow for very large positive spectra).
pub fn expm(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    if n == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    if n == 1 {
        let v = a[(0, 0)].exp();
        return v.is_finite().then(|| DMatrix::from_element(1, 1, v));
    }

    let norm = norm_1(a);
    if !norm.is_finite() {
        return None;
    }
    let ident = DMatrix::<f64>::identity(n, n);

    let (u, v, squarings) = if norm <= THETA_3 {
        let (u, v) = pade_low(a, &B3, &ident);
        (u, v, 0)
    } else if norm <= THETA_5 {
        let (u, v) = pade_low(a, &B5, &ident);
        (u, v, 0)
    } else if norm <= THETA_7 {
        let (u, v) = pade_low(a, &B7, &ident);
        (u, v, 0)
    } else if norm <= THETA_9 {
        let (u, v) = pade_low(a, &B9, &ident);
        (u, v, 0)
    } else {
        let s = (norm / THETA_13).log2().ceil().max(0.0) as i32;
        let scaled = a * 2f64.powi(-s);
        let (u, v) = pade_13(&scaled, &ident);
        (u, v, s)
    };

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p)?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    r.iter().all(|x| x.is_finite()).then_some(r)
}

/// Odd/even split for degrees 3..9: U = A Σ b_{2k+1} A^{2k}, V = Σ b_{2k} A^{2k}.
fn pade_low(a: &DMatrix<f64>, b: &[f64], ident: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let a2 = a * a;
    let mut odd = ident * b[1];
    let mut even = ident * b[0];
    let mut power = ident.clone();
    let mut k = 2;
    while k < b.len() {
        power = &power * &a2;
        even += &power * b[k];
        if k + 1 < b.len() {
            odd += &power * b[k + 1];
        }
        k += 2;
    }
    (a * odd, even)
}

fn pade_13(a: &DMatrix<f64>, ident: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let b = &B13;
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let u = a * (&a6 * inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + ident * b[1]);
    let inner_v = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = &a6 * inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + ident * b[0];
    (u, v)
}
