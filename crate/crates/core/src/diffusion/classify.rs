//! Feller boundary classification.
//!
//! Toward an endpoint `b` the two Feller integrals are written as solutions
//! of linear ODEs that never form `S` or `M` explicitly:
//!
//! * `A' = 1 − 2qA`, `J' = 2A` gives `J = ∫_c^b S((c,x]) dM(x)`,
//! * `B' = 2 + 2qB`, `I' = B`  gives `I = ∫_c^b M((c,x]) dS(x)`,
//!
//! since `A = S((c,x])/s'(x)` and `B = s'(x)·M((c,x])`. The ODEs are stiff
//! near singular endpoints, so they are integrated with the L-stable 3-stage
//! Radau IIA rule over dyadic pieces approaching `b`; the piece increments
//! decide finiteness.

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use super::{Diffusion1D, DiffusionError, Result, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum BoundaryClass {
    Regular,
    Exit,
    Entrance,
    Natural,
}

impl BoundaryClass {
    /// Reachable in finite time from the interior.
    pub fn is_accessible(self) -> bool {
        matches!(self, Self::Regular | Self::Exit)
    }

    fn from_integrals(i: Finiteness, j: Finiteness) -> Option<Self> {
        use Finiteness::*;
        match (i, j) {
            (Finite, Finite) => Some(Self::Regular),
            (Finite, Infinite) => Some(Self::Exit),
            (Infinite, Finite) => Some(Self::Entrance),
            (Infinite, Infinite) => Some(Self::Natural),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Finiteness {
    Finite,
    Infinite,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct FellerIntegral {
    pub finiteness: Finiteness,
    /// Sum of the piece increments computed before the verdict.
    pub partial_sum: f64,
    pub pieces: usize,
    /// Ratio of the last two piece increments.
    pub last_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EndpointReport {
    pub side: Side,
    pub endpoint: f64,
    pub class: BoundaryClass,
    pub i: FellerIntegral,
    pub j: FellerIntegral,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassTReport {
    pub left: EndpointReport,
    pub right: EndpointReport,
    /// No natural boundary.
    pub class_t: bool,
    /// Class (T) with an accessible boundary or nonzero killing.
    pub explosive: bool,
}

/// Partial sums above this are declared divergent.
const DIVERGENCE_SUM: f64 = 1e12;
/// Consecutive increment ratios at or above this are declared divergent.
const DIVERGENT_RATIO: f64 = 0.95;
const DIVERGENT_WINDOW: usize = 8;
/// Consecutive increment ratios at or below this allow a geometric tail bound.
const CONVERGENT_RATIO: f64 = 0.85;
const CONVERGENT_WINDOW: usize = 5;
const TAIL_REL: f64 = 1e-7;
const MAX_PIECES: usize = 200;
const MAX_STEPS: usize = 200_000;
const RTOL: f64 = 1e-9;
const ATOL: f64 = 1e-14;

/// Classifies the endpoint on `side`; killing is ignored.
pub fn classify_boundary(d: &Diffusion1D, side: Side) -> Result<EndpointReport> {
    let q = d.drift();
    // reflect x ↦ −x so the endpoint is always on the right
    let (c, b, sign) = match side {
        Side::Right => (d.anchor(), d.right(), 1.0),
        Side::Left => (-d.anchor(), -d.left(), -1.0),
    };
    let qr = |y: f64| sign * q.eval(sign * y);
    let j = feller_integral(&qr, c, b, Kind::J);
    let i = feller_integral(&qr, c, b, Kind::I);
    match BoundaryClass::from_integrals(i.finiteness, j.finiteness) {
        Some(class) => Ok(EndpointReport {
            side,
            endpoint: d.endpoint(side),
            class,
            i,
            j,
        }),
        None => Err(DiffusionError::QuadratureInconclusive {
            side,
            i_partial: i.partial_sum,
            j_partial: j.partial_sum,
        }),
    }
}

/// Class (T) verdict with both endpoint classes.
pub fn is_class_t(d: &Diffusion1D) -> Result<ClassTReport> {
    let (left, right) = rayon::join(
        || classify_boundary(d, Side::Left),
        || classify_boundary(d, Side::Right),
    );
    let (left, right) = (left?, right?);
    let class_t = left.class != BoundaryClass::Natural && right.class != BoundaryClass::Natural;
    let explosive =
        class_t && (left.class.is_accessible() || right.class.is_accessible() || d.has_killing());
    Ok(ClassTReport {
        left,
        right,
        class_t,
        explosive,
    })
}

#[derive(Clone, Copy)]
enum Kind {
    I,
    J,
}

impl Kind {
    /// `(y' = a·q·y + f, acc' = w·y)` coefficients `(a, f, w)`.
    fn coefficients(self) -> (f64, f64, f64) {
        match self {
            Kind::J => (-2.0, 1.0, 2.0),
            Kind::I => (2.0, 2.0, 1.0),
        }
    }
}

fn feller_integral(q: &dyn Fn(f64) -> f64, c: f64, b: f64, kind: Kind) -> FellerIntegral {
    let breakpoint = |k: usize| -> f64 {
        if b.is_finite() {
            b - (b - c) * 0.5f64.powi(k as i32)
        } else {
            c + (2f64.powi(k as i32) - 1.0)
        }
    };
    let mut ode = Radau::new(q, kind);
    let mut y = 0.0;
    let mut sum = 0.0;
    let mut increments: Vec<f64> = Vec::new();
    let verdict = |finiteness, sum, increments: &[f64]| FellerIntegral {
        finiteness,
        partial_sum: sum,
        pieces: increments.len(),
        last_ratio: match increments {
            [.., a, b] if *a > 0.0 => b / a,
            _ => f64::NAN,
        },
    };

    for k in 0..MAX_PIECES {
        let (x0, x1) = (breakpoint(k), breakpoint(k + 1));
        if !(x1 > x0) {
            // pieces have shrunk below floating-point resolution
            return verdict(Finiteness::Inconclusive, sum, &increments);
        }
        let Some((y1, inc)) = ode.piece(x0, x1, y) else {
            return verdict(Finiteness::Inconclusive, sum, &increments);
        };
        y = y1;
        sum += inc;
        increments.push(inc);
        if !inc.is_finite() || !y.is_finite() || sum > DIVERGENCE_SUM {
            return verdict(Finiteness::Infinite, sum, &increments);
        }
        let ratios: Vec<f64> = increments
            .windows(2)
            .map(|w| {
                if w[0] > 0.0 {
                    w[1] / w[0]
                } else if w[1] > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            })
            .collect();
        if ratios.len() >= DIVERGENT_WINDOW
            && ratios[ratios.len() - DIVERGENT_WINDOW..]
                .iter()
                .all(|&r| r >= DIVERGENT_RATIO)
        {
            return verdict(Finiteness::Infinite, sum, &increments);
        }
        if ratios.len() >= CONVERGENT_WINDOW {
            let recent = &ratios[ratios.len() - CONVERGENT_WINDOW..];
            let worst = recent.iter().fold(0.0_f64, |a, &r| a.max(r));
            if worst <= CONVERGENT_RATIO
                && inc * worst / (1.0 - worst) <= TAIL_REL * sum.abs().max(f64::MIN_POSITIVE)
            {
                return verdict(Finiteness::Finite, sum, &increments);
            }
        }
    }
    verdict(Finiteness::Inconclusive, sum, &increments)
}

/// 3-stage Radau IIA for `y' = a·q(x)·y + f`, carrying `∫ w·y` along.
struct Radau<'a> {
    q: &'a dyn Fn(f64) -> f64,
    a: f64,
    f: f64,
    w: f64,
    h: f64,
    steps: usize,
}

const S6: f64 = 2.449_489_742_783_178;
const C: [f64; 3] = [(4.0 - S6) / 10.0, (4.0 + S6) / 10.0, 1.0];
const A: [[f64; 3]; 3] = [
    [
        (88.0 - 7.0 * S6) / 360.0,
        (296.0 - 169.0 * S6) / 1800.0,
        (-2.0 + 3.0 * S6) / 225.0,
    ],
    [
        (296.0 + 169.0 * S6) / 1800.0,
        (88.0 + 7.0 * S6) / 360.0,
        (-2.0 - 3.0 * S6) / 225.0,
    ],
    [(16.0 - S6) / 36.0, (16.0 + S6) / 36.0, 1.0 / 9.0],
];

impl<'a> Radau<'a> {
    fn new(q: &'a dyn Fn(f64) -> f64, kind: Kind) -> Self {
        let (a, f, w) = kind.coefficients();
        Self {
            q,
            a,
            f,
            w,
            h: 0.0,
            steps: 0,
        }
    }

    /// One step from `(x, y)`: returns `(y(x + h), ∫_x^{x+h} w·y)`.
    fn step(&self, x: f64, y: f64, h: f64) -> Option<(f64, f64)> {
        let mut coef = [0.0; 3];
        for i in 0..3 {
            coef[i] = self.a * (self.q)(x + C[i] * h);
            if !coef[i].is_finite() {
                return None;
            }
        }
        // (I − h·diag(coef)·A) k = coef·y + f
        let mut m = Matrix3::zeros();
        let mut rhs = Vector3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] = (if i == j { 1.0 } else { 0.0 }) - h * coef[i] * A[i][j];
            }
            rhs[i] = coef[i] * y + self.f;
        }
        let k = m.lu().solve(&rhs)?;
        let stage = |i: usize| y + h * (A[i][0] * k[0] + A[i][1] * k[1] + A[i][2] * k[2]);
        let y1 = stage(2);
        let acc = h * self.w * (A[2][0] * stage(0) + A[2][1] * stage(1) + A[2][2] * y1);
        Some((y1, acc))
    }

    /// Integrates over `[x0, x1]` with step-doubling error control.
    fn piece(&mut self, x0: f64, x1: f64, y0: f64) -> Option<(f64, f64)> {
        let len = x1 - x0;
        let min_h = len * 1e-13;
        let mut h = if self.h > 0.0 {
            self.h.min(len / 4.0)
        } else {
            len / 16.0
        };
        let (mut x, mut y, mut total) = (x0, y0, 0.0);
        while x < x1 {
            self.steps += 1;
            if self.steps > MAX_STEPS {
                return None;
            }
            let last = x + h >= x1;
            let hh = if last { x1 - x } else { h };
            let (y_big, acc_big) = self.step(x, y, hh)?;
            let (y_mid, acc1) = self.step(x, y, 0.5 * hh)?;
            let (y_small, acc2) = self.step(x + 0.5 * hh, y_mid, 0.5 * hh)?;
            let acc_small = acc1 + acc2;
            if !y_small.is_finite() || !acc_small.is_finite() {
                // blow-up: report it as an infinite increment
                return Some((y_small, f64::INFINITY));
            }
            let err_y = (y_big - y_small).abs() / (ATOL + RTOL * y_small.abs().max(y.abs()));
            let err_acc = (acc_big - acc_small).abs() / (ATOL + RTOL * (total + acc_small).abs());
            let err = err_y.max(err_acc);
            let factor = if err == 0.0 {
                4.0
            } else {
                (0.9 * err.powf(-1.0 / 6.0)).clamp(0.2, 4.0)
            };
            if err <= 1.0 {
                x = if last { x1 } else { x + hh };
                y = y_small;
                total += acc_small;
                if !last {
                    h = hh * factor;
                }
            } else {
                h = hh * factor;
                if h < min_h {
                    return None;
                }
            }
        }
        self.h = h;
        Some((y, total))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::Coefficient;

    fn diffusion(l: f64, r: f64, drift: &str, c: f64) -> Diffusion1D {
        Diffusion1D::new(
            l,
            r,
            Coefficient::parse(drift).unwrap(),
            Coefficient::zero(),
            c,
        )
        .unwrap()
    }

    fn classes(d: &Diffusion1D) -> (BoundaryClass, BoundaryClass) {
        let r = is_class_t(d).unwrap();
        (r.left.class, r.right.class)
    }

    #[test]
    fn radau_integrates_linear_problem() {
        // q ≡ 0, J-kind: A = x − c, J = (x − c)² exactly
        let q = |_: f64| 0.0;
        let mut r = Radau::new(&q, Kind::J);
        let (y, acc) = r.piece(1.0, 3.0, 0.0).unwrap();
        assert!((y - 2.0).abs() < 1e-12 && (acc - 4.0).abs() < 1e-12);
        // q ≡ 1, I-kind: B' = 2 + 2B → B = e^{2x} − 1
        let q = |_: f64| 1.0;
        let mut r = Radau::new(&q, Kind::I);
        let (y, acc) = r.piece(0.0, 1.0, 0.0).unwrap();
        let exact_acc = ((2f64).exp() - 1.0) / 2.0 - 1.0;
        assert!((y - (2f64.exp() - 1.0)).abs() < 1e-8 && (acc - exact_acc).abs() < 1e-8);
    }

    #[test]
    fn brownian_catalog() {
        use BoundaryClass::*;
        assert_eq!(classes(&diffusion(0.0, 1.0, "0", 0.5)), (Regular, Regular));
        assert_eq!(
            classes(&diffusion(0.0, f64::INFINITY, "0", 1.0)),
            (Regular, Natural)
        );
        assert_eq!(
            classes(&diffusion(f64::NEG_INFINITY, f64::INFINITY, "0", 0.0)),
            (Natural, Natural)
        );
    }

    #[test]
    fn ou_and_bessel() {
        use BoundaryClass::*;
        assert_eq!(
            classes(&diffusion(f64::NEG_INFINITY, f64::INFINITY, "x", 0.0)),
            (Natural, Natural)
        );
        let bessel = diffusion(0.0, f64::INFINITY, "-1/x", 1.0);
        assert_eq!(classes(&bessel), (Entrance, Natural));
        let r = is_class_t(&bessel).unwrap();
        assert!(!r.class_t && !r.explosive);
    }

    #[test]
    fn exit_and_entrance() {
        use BoundaryClass::*;
        // strong inward drift at ∞ comes down from infinity; the ½x⁻¹ term makes 0 an exit
        let d = diffusion(0.0, f64::INFINITY, "1/(2*x) + x^2", 1.0);
        assert_eq!(classes(&d), (Exit, Entrance));
        let r = is_class_t(&d).unwrap();
        assert!(r.class_t && r.explosive);
        // the mirrored process swaps sides
        let m = diffusion(f64::NEG_INFINITY, 0.0, "1/(2*x) - x^2", -1.0);
        assert_eq!(classes(&m), (Entrance, Exit));
    }

    #[test]
    fn killing_alone_makes_class_t_explosive() {
        // OU confined to a natural-free box is regular at both ends anyway;
        // use an entrance/entrance model to isolate the killing flag
        let d = diffusion(0.0, 1.0, "-1/x + 1/(1-x)", 0.5);
        let r = is_class_t(&d).unwrap();
        assert_eq!(
            (r.left.class, r.right.class),
            (BoundaryClass::Entrance, BoundaryClass::Entrance)
        );
        assert!(r.class_t && !r.explosive);
        let k = d.with_killing(Coefficient::constant(0.5)).unwrap();
        assert!(is_class_t(&k).unwrap().explosive);
    }

    #[test]
    fn increments_near_log_divergence_are_infinite() {
        // q = x on ℝ: J grows like ln x at infinity
        let q = |x: f64| x;
        let r = feller_integral(&q, 0.0, f64::INFINITY, Kind::J);
        assert_eq!(r.finiteness, Finiteness::Infinite);
        assert!(r.partial_sum < DIVERGENCE_SUM);
    }
}
