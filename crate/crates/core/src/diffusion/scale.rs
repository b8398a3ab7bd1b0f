use super::{Coefficient, Diffusion1D, DiffusionError, Result};
use crate::quad::{integrate, Tolerance};

const INNER_TOL: Tolerance = Tolerance {
    abs: 1e-14,
    rel: 1e-13,
    max_intervals: 400,
};

const OUTER_TOL: Tolerance = Tolerance {
    abs: 1e-300,
    rel: 1e-11,
    max_intervals: 2000,
};

/// Identity residuals above this fail [`scale_speed_from_drift`].
const IDENTITY_TOL: f64 = 1e-6;

/// `2∫_a^b q`, closed form for constant drift.
pub(crate) fn twice_drift_integral(q: &Coefficient, a: f64, b: f64) -> Result<f64> {
    if let Some(k) = q.as_constant() {
        return Ok(2.0 * k * (b - a));
    }
    Ok(2.0 * integrate(|y| q.eval(y), a, b, INNER_TOL)?.value)
}

/// Scale and speed densities of a diffusion, relative to its anchor.
#[derive(Debug, Clone)]
pub struct ScaleSpeed {
    drift: Coefficient,
    anchor: f64,
}

impl ScaleSpeed {
    /// `ℓ(x) = 2∫_c^x q`.
    pub fn log_scale_density(&self, x: f64) -> Result<f64> {
        twice_drift_integral(&self.drift, self.anchor, x)
    }

    /// `s'(x) = e^{ℓ(x)}`.
    pub fn scale_density(&self, x: f64) -> Result<f64> {
        Ok(self.log_scale_density(x)?.exp())
    }

    /// `mdens(x) = 2e^{−ℓ(x)}`.
    pub fn speed_density(&self, x: f64) -> Result<f64> {
        Ok(2.0 * (-self.log_scale_density(x)?).exp())
    }

    /// `s(x) = ∫_c^x s'`.
    pub fn scale(&self, x: f64) -> Result<f64> {
        self.scale_increment(self.anchor, 0.0, x)
    }

    /// `∫_a^b s'` given `ℓ(a) = ell_a`.
    pub fn scale_increment(&self, a: f64, ell_a: f64, b: f64) -> Result<f64> {
        self.weighted(a, ell_a, b, 1.0)
    }

    /// `∫_a^b mdens` given `ℓ(a) = ell_a`.
    pub fn speed_mass(&self, a: f64, ell_a: f64, b: f64) -> Result<f64> {
        Ok(2.0 * self.weighted(a, ell_a, b, -1.0)?)
    }

    /// `∫_a^b e^{σℓ(y)} dy` with `ℓ(y) = ell_a + 2∫_a^y q`; `b` may lie on
    /// either side of `a`, the result is signed like `b − a`.
    fn weighted(&self, a: f64, ell_a: f64, b: f64, sigma: f64) -> Result<f64> {
        if a == b {
            return Ok(0.0);
        }
        if let Some(k) = self.drift.as_constant() {
            let rate = 2.0 * k * sigma;
            let base = (sigma * ell_a).exp();
            let h = b - a;
            // e^{rate h} − 1 over rate, stable as rate → 0
            let v = if (rate * h).abs() < 1e-8 {
                h * (1.0 + 0.5 * rate * h)
            } else {
                (rate * h).exp_m1() / rate
            };
            return Ok(base * v);
        }
        let mut failure = None;
        let q = integrate(
            |y| match twice_drift_integral(&self.drift, a, y) {
                Ok(l) => (sigma * (ell_a + l)).exp(),
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            },
            a.min(b),
            a.max(b),
            OUTER_TOL,
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(if b > a { q.value } else { -q.value })
    }

    /// `(Lx, Lx²)` by the divergence form `(1/mdens)·(u'/s')'`, from
    /// Richardson-extrapolated central differences, next to the direct
    /// `½u'' − qu'`.
    pub fn generator_identity(&self, x: f64, h: f64) -> Result<[(f64, f64); 2]> {
        // ℓ(x) cancels: (u'/s')(x ± h) / mdens(x) = u'(x ± h) e^{−(ℓ(x±h) − ℓ(x))} / 2
        let central = |h: f64| -> Result<(f64, f64)> {
            let up = (-twice_drift_integral(&self.drift, x, x + h)?).exp();
            let down = (-twice_drift_integral(&self.drift, x, x - h)?).exp();
            Ok((
                (up - down) / (4.0 * h),
                ((x + h) * up - (x - h) * down) / (2.0 * h),
            ))
        };
        let (l1, q1) = central(h)?;
        let (l2, q2) = central(0.5 * h)?;
        let q = self.drift.eval(x);
        Ok([
            ((4.0 * l2 - l1) / 3.0, -q),
            ((4.0 * q2 - q1) / 3.0, 1.0 - 2.0 * x * q),
        ])
    }
}

/// Scale/speed representation, after checking the divergence-form identity
/// on `u = x` and `u = x²` at five interior probes.
pub fn scale_speed_from_drift(d: &Diffusion1D) -> Result<ScaleSpeed> {
    let ss = ScaleSpeed {
        drift: d.drift().clone(),
        anchor: d.anchor(),
    };
    for x in d.probe_points(5) {
        let room = (x - d.left()).min(d.right() - x);
        let h = (1e-3 * x.abs().max(1.0) / (1.0 + d.drift().eval(x).abs())).min(0.25 * room);
        for (divergence, direct) in ss.generator_identity(x, h)? {
            let residual = (divergence - direct).abs();
            if !(residual <= IDENTITY_TOL * (1.0 + direct.abs())) {
                return Err(DiffusionError::GeneratorIdentity { x, residual });
            }
        }
    }
    Ok(ss)
}

#[cfg(test)]
mod tests {
    use super::*;

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

    #[test]
    fn driftless() {
        let ss = scale_speed_from_drift(&diffusion(0.0, 4.0, "0", 1.5)).unwrap();
        for x in [0.2, 1.5, 3.9] {
            assert!((ss.scale(x).unwrap() - (x - 1.5)).abs() < 1e-14);
            assert_eq!(ss.speed_density(x).unwrap(), 2.0);
        }
    }

    #[test]
    fn ornstein_uhlenbeck_densities() {
        let c = 0.5;
        let ss =
            scale_speed_from_drift(&diffusion(f64::NEG_INFINITY, f64::INFINITY, "x", c)).unwrap();
        for x in [-2.0, 0.0, 1.3] {
            let e = x * x - c * c;
            assert!((ss.scale_density(x).unwrap() / e.exp() - 1.0).abs() < 1e-12);
            assert!((ss.speed_density(x).unwrap() / (2.0 * (-e).exp()) - 1.0).abs() < 1e-12);
        }
        // ∫_c^x e^{y²−c²}dy against a fine trapezoid sum
        let x = 1.2;
        let n = 20000;
        let h = (x - c) / n as f64;
        let trap: f64 = (0..=n)
            .map(|i| {
                let y = c + i as f64 * h;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * (y * y - c * c).exp()
            })
            .sum::<f64>()
            * h;
        assert!((ss.scale(x).unwrap() - trap).abs() < 1e-7);
    }

    #[test]
    fn bessel_densities() {
        let ss = scale_speed_from_drift(&diffusion(0.0, f64::INFINITY, "-1/x", 1.0)).unwrap();
        for x in [0.1, 1.0, 7.5] {
            assert!((ss.scale_density(x).unwrap() * x * x - 1.0).abs() < 1e-11);
            assert!((ss.speed_density(x).unwrap() / (2.0 * x * x) - 1.0).abs() < 1e-11);
        }
        // ∫_1^3 2y² dy = 52/3
        assert!((ss.speed_mass(1.0, 0.0, 3.0).unwrap() - 52.0 / 3.0).abs() < 1e-10);
        assert!((ss.speed_mass(3.0, -2.0 * 3f64.ln(), 1.0).unwrap() + 52.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn identity_holds_for_nonlinear_drift() {
        let d = diffusion(0.0, f64::INFINITY, "1/(2*x) + x^2", 1.0);
        let ss = scale_speed_from_drift(&d).unwrap();
        let [(a, b), (c, e)] = ss.generator_identity(0.7, 1e-4).unwrap();
        assert!((a - b).abs() < 1e-7 && (c - e).abs() < 1e-7);
    }
}
