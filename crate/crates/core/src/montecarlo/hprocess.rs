use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::{path_rng, walls, Bins, MonteCarloError, PathConfig, Result, Wall, STEP_LIMIT};
use crate::diffusion::{Closure, Coefficient, Diffusion1D, Grid, Side};
use crate::spectral::PrincipalEigenpair;
use crate::stats::{chi_square_test, ChiSquareTest};

/// `(log φ₀)'` from the grid ground state.
///
/// Next to an absorbing end `a` the ground state vanishes linearly, so
/// `φ₀ = (x − a)(b − x)·ψ` is factored and only `log ψ` is interpolated
/// (monotone cubic); the singular terms `1/(x − a) − 1/(b − x)` are added
/// analytically. Beyond the outer nodes `log ψ` continues with its end slope.
#[derive(Debug, Clone)]
pub struct GroundStateDrift {
    drift: Coefficient,
    x: Vec<f64>,
    log_psi: Vec<f64>,
    slope: Vec<f64>,
    left: Option<f64>,
    right: Option<f64>,
}

impl GroundStateDrift {
    pub fn new(d: &Diffusion1D, grid: &Grid, phi0: &[f64]) -> Result<Self> {
        let x = grid.interior().to_vec();
        if phi0.len() != x.len() {
            return Err(MonteCarloError::InvalidConfig(format!(
                "ground state has {} entries for {} grid states",
                phi0.len(),
                x.len()
            )));
        }
        if let Some(index) = phi0.iter().position(|&p| !(p > 0.0)) {
            return Err(MonteCarloError::NonPositivePhi { index });
        }
        let (lo, hi) = grid.span();
        let left = (grid.closure(Side::Left) == Closure::Absorbing).then_some(lo);
        let right = (grid.closure(Side::Right) == Closure::Absorbing).then_some(hi);
        let log_psi: Vec<f64> = x
            .iter()
            .zip(phi0)
            .map(|(&xi, &p)| {
                p.ln() - left.map_or(0.0, |a| (xi - a).ln()) - right.map_or(0.0, |b| (b - xi).ln())
            })
            .collect();
        let slope = pchip_slopes(&x, &log_psi);
        Ok(Self {
            drift: d.drift().clone(),
            x,
            log_psi,
            slope,
            left,
            right,
        })
    }

    /// Derivative of the interpolated `log ψ`.
    fn log_psi_derivative(&self, x: f64) -> f64 {
        let n = self.x.len();
        if n == 1 || x <= self.x[0] {
            return self.slope[0];
        }
        if x >= self.x[n - 1] {
            return self.slope[n - 1];
        }
        let k = self.x.partition_point(|&y| y <= x) - 1;
        let h = self.x[k + 1] - self.x[k];
        let t = (x - self.x[k]) / h;
        let delta = (self.log_psi[k + 1] - self.log_psi[k]) / h;
        6.0 * t * (1.0 - t) * delta
            + (3.0 * t * t - 4.0 * t + 1.0) * self.slope[k]
            + (3.0 * t * t - 2.0 * t) * self.slope[k + 1]
    }

    /// `(log φ₀)'(x)`.
    pub fn log_derivative(&self, x: f64) -> f64 {
        self.log_psi_derivative(x) + self.left.map_or(0.0, |a| 1.0 / (x - a))
            - self.right.map_or(0.0, |b| 1.0 / (b - x))
    }

    /// h-process drift `−q(x) + (log φ₀)'(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        -self.drift.eval(x) + self.log_derivative(x)
    }
}

/// Fritsch–Carlson derivatives with the weighted harmonic mean inside and
/// shape-preserving three-point ends.
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    if n == 2 {
        return vec![delta[0]; 2];
    }
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        let (d0, d1) = (delta[k - 1], delta[k]);
        if d0 * d1 > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / d0 + w2 / d1);
        }
    }
    let end = |h0: f64, h1: f64, m0: f64, m1: f64| {
        let s = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
        if s.signum() != m0.signum() {
            0.0
        } else if m0.signum() != m1.signum() && s.abs() > 3.0 * m0.abs() {
            3.0 * m0
        } else {
            s
        }
    };
    d[0] = end(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

#[derive(Debug, Clone)]
pub struct OccupationConfig {
    /// Time discarded before sampling starts.
    pub burn_in: f64,
    /// Spacing of occupation samples; several relaxation times keep them
    /// close to independent.
    pub sample_every: f64,
    pub bins: Bins,
}

impl OccupationConfig {
    pub fn new(bins: Bins) -> Self {
        Self {
            burn_in: 100.0,
            sample_every: 2.5,
            bins,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Occupation {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub samples: u64,
    pub probs: Vec<f64>,
    /// Bin masses of `φ₀²·m` on the grid, normalized.
    pub expected: Vec<f64>,
    /// Euler steps taken over all paths.
    pub steps: u64,
    pub absorptions: u64,
}

impl Occupation {
    pub fn chi_square(&self) -> Result<ChiSquareTest> {
        Ok(chi_square_test(&self.counts, &self.expected)?)
    }
}

struct HPath {
    counts: Vec<u64>,
    steps: u64,
}

/// Simulates the ground-state transformed process from `x0` and records its
/// occupation every `occ.sample_every` after `occ.burn_in`.
///
/// Steps shrink to `(dist/8)²` near an absorbing end, where the drift pushes
/// inward like `1/dist`; a path that still leaves the domain is an error.
pub fn doob_paths(
    d: &Diffusion1D,
    grid: &Grid,
    eig: &PrincipalEigenpair,
    x0: f64,
    cfg: &PathConfig,
    occ: &OccupationConfig,
) -> Result<Occupation> {
    cfg.validate()?;
    if !(x0 > d.left() && x0 < d.right()) {
        return Err(MonteCarloError::InitOutsideDomain { x: x0 });
    }
    if !(occ.sample_every > 0.0 && occ.burn_in >= 0.0 && occ.burn_in <= cfg.horizon) {
        return Err(MonteCarloError::InvalidConfig(
            "occupation needs sample_every > 0 and burn_in ≤ horizon".into(),
        ));
    }
    let h = GroundStateDrift::new(d, grid, &eig.phi0)?;
    let walls = walls(d)?;
    let nb = occ.bins.len();

    let paths: Vec<Result<HPath>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(cfg.seed, p);
            let mut counts = vec![0u64; nb];
            let mut steps = 0u64;
            let (mut x, mut t) = (x0, 0.0);
            let mut next_sample = occ.burn_in;
            while next_sample <= cfg.horizon {
                let b = h.eval(x);
                let dist = walls
                    .iter()
                    .map(|w| match *w {
                        Wall::Absorbing(r) => (x - r).abs(),
                        _ => f64::INFINITY,
                    })
                    .fold(f64::INFINITY, f64::min);
                let mut dt = cfg.dt.min((dist / 8.0).powi(2)).min(next_sample - t);
                if b != 0.0 {
                    dt = dt.min(STEP_LIMIT / b.abs());
                }
                if dt > 0.0 {
                    let z: f64 = rng.sample(StandardNormal);
                    let mut y = x + b * dt + dt.sqrt() * z;
                    for (side, wall) in [(Side::Left, walls[0]), (Side::Right, walls[1])] {
                        let outside =
                            |y: f64, r: f64| if side == Side::Left { y <= r } else { y >= r };
                        match wall {
                            Wall::Absorbing(r) if outside(y, r) => {
                                return Err(MonteCarloError::AbsorptionInHProcess {
                                    x: y,
                                    t: t + dt,
                                });
                            }
                            Wall::Reflecting(r) if outside(y, r) => {
                                y = 2.0 * r - y;
                                if outside(y, r) {
                                    y = 0.5 * (x + r);
                                }
                            }
                            _ => {}
                        }
                    }
                    x = y;
                    t += dt;
                    steps += 1;
                }
                if t >= next_sample - 1e-9 * next_sample.max(1.0) {
                    if let Some(k) = occ.bins.locate(x) {
                        counts[k] += 1;
                    }
                    t = next_sample;
                    next_sample += occ.sample_every;
                }
            }
            Ok(HPath { counts, steps })
        })
        .collect();

    let mut counts = vec![0u64; nb];
    let mut steps = 0;
    for p in paths {
        let p = p?;
        steps += p.steps;
        for (c, k) in counts.iter_mut().zip(p.counts) {
            *c += k;
        }
    }
    let samples: u64 = counts.iter().sum();
    let probs = counts
        .iter()
        .map(|&c| c as f64 / samples.max(1) as f64)
        .collect();
    let weights: Vec<f64> = eig
        .phi0
        .iter()
        .zip(grid.cellmass())
        .map(|(p, m)| p * p * m)
        .collect();
    let total: f64 = weights.iter().sum();
    let expected = occ
        .bins
        .project(&grid.dual_edges(), &weights)
        .into_iter()
        .map(|w| w / total)
        .collect();
    Ok(Occupation {
        edges: occ.bins.edges().to_vec(),
        counts,
        samples,
        probs,
        expected,
        steps,
        absorptions: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::discretize;
    use crate::spectral::principal_eigenpair;
    use std::f64::consts::PI;

    fn dirichlet_bm(k: f64, n: usize) -> (Diffusion1D, Grid, PrincipalEigenpair) {
        let d = Diffusion1D::new(
            0.0,
            PI,
            Coefficient::zero(),
            Coefficient::constant(k),
            PI / 2.0,
        )
        .unwrap();
        let grid = Grid::uniform(&d, 0.0, PI, n, [Closure::Absorbing; 2]).unwrap();
        let eig = principal_eigenpair(&discretize(&d, &grid).unwrap()).unwrap();
        (d, grid, eig)
    }

    /// `∫ (2/π) sin² = (x − sin(2x)/2)/π` over each bin.
    fn sin2_masses(bins: &Bins) -> Vec<f64> {
        let f = |x: f64| (x - 0.5 * (2.0 * x).sin()) / PI;
        bins.edges().windows(2).map(|w| f(w[1]) - f(w[0])).collect()
    }

    #[test]
    fn pchip_reproduces_lines_and_keeps_monotone_data_monotone() {
        let x = [0.0, 1.0, 1.5, 4.0];
        let s = pchip_slopes(&x, &x.map(|v| 2.0 * v + 1.0));
        assert!(s.iter().all(|d| (d - 2.0).abs() < 1e-14));
        let s = pchip_slopes(&x, &[0.0, 1.0, 1.0, 3.0]);
        assert_eq!(s[1], 0.0);
        assert!(s.iter().all(|&d| d >= 0.0));
    }

    #[test]
    fn dirichlet_drift_is_cotangent() {
        let (d, grid, eig) = dirichlet_bm(0.0, 399);
        let h = GroundStateDrift::new(&d, &grid, &eig.phi0).unwrap();
        for x in [1e-4, 0.003, 0.2, 1.0, PI / 2.0, 2.9, PI - 1e-3] {
            let cot = 1.0 / x.tan();
            assert!(
                (h.eval(x) - cot).abs() < 1e-4 * (1.0 + cot.abs()),
                "x = {x}: {} vs {cot}",
                h.eval(x)
            );
        }
        let mut phi = eig.phi0.clone();
        phi[7] = 0.0;
        assert_eq!(
            GroundStateDrift::new(&d, &grid, &phi).unwrap_err().code(),
            "NonPositivePhi"
        );
    }

    #[test]
    fn constant_killing_leaves_drift_unchanged() {
        let (d0, grid0, eig0) = dirichlet_bm(0.0, 199);
        let (d1, grid1, eig1) = dirichlet_bm(3.0, 199);
        let (h0, h1) = (
            GroundStateDrift::new(&d0, &grid0, &eig0.phi0).unwrap(),
            GroundStateDrift::new(&d1, &grid1, &eig1.phi0).unwrap(),
        );
        for x in [0.01, 0.5, 2.0] {
            assert!((h0.eval(x) - h1.eval(x)).abs() < 1e-9);
        }
        // flat ground state on a reflected window: no drift at all
        let wide = Diffusion1D::new(
            -1e10,
            1e10,
            Coefficient::zero(),
            Coefficient::constant(1.0),
            0.0,
        )
        .unwrap();
        let grid = Grid::uniform(&wide, -10.0, 10.0, 99, [Closure::NoFlux; 2]).unwrap();
        let eig = principal_eigenpair(&discretize(&wide, &grid).unwrap()).unwrap();
        assert!((eig.lambda0 - 1.0).abs() < 1e-10);
        let h = GroundStateDrift::new(&wide, &grid, &eig.phi0).unwrap();
        assert!([-20.0, -3.0, 0.0, 4.2, 15.0]
            .iter()
            .all(|&x| h.eval(x).abs() < 1e-8));
    }

    #[test]
    fn occupation_matches_sin_squared_from_any_start() {
        let (d, grid, eig) = dirichlet_bm(0.0, 399);
        let bins = Bins::uniform(0.0, PI, 20).unwrap();
        let occ = OccupationConfig::new(bins.clone());
        let oracle = sin2_masses(&bins);
        for (x0, seed) in [(0.05, 1), (PI / 2.0, 2)] {
            let cfg = PathConfig {
                dt: 0.01,
                horizon: 1e4,
                n_paths: 1,
                seed,
                ..PathConfig::default()
            };
            let o = doob_paths(&d, &grid, &eig, x0, &cfg, &occ).unwrap();
            assert_eq!(o.absorptions, 0);
            assert!(o.samples >= 3900);
            assert!(o
                .expected
                .iter()
                .zip(&oracle)
                .all(|(a, b)| (a - b).abs() < 1e-4));
            let t = chi_square_test(&o.counts, &oracle).unwrap();
            assert!(!t.rejects_at(0.01), "x0 = {x0}: {t:?}");
        }
    }
}
