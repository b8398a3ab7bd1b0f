//! Killed-path simulation and estimators checked against the spectral
//! quantities.
//!
//! Paths follow Euler–Maruyama steps `X ← X − q(X)dt + √dt·N(0,1)`. Each path
//! draws from its own ChaCha stream (`seed`, path index), so ensembles do not
//! depend on the number of worker threads.

mod estimators;
mod histogram;
mod hprocess;

pub use estimators::{
    exp_zeta_moment_estimate, survival_rate_estimate, yaglom_estimate, MomentEstimate,
    RateEstimate, YaglomEstimate, YaglomPoint,
};
pub use histogram::{empirical_conditional_law, Bins, Histogram};
pub use hprocess::{doob_paths, GroundStateDrift, Occupation, OccupationConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::diffusion::{is_class_t, Diffusion1D, DiffusionError, GridDensity, Side};
use crate::spectral::SpectralError;
use crate::stats::StatsError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonteCarloError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dt·sup|q| = {product:.3} exceeds 0.1 (sup|q| = {sup_drift:.3e} on the probe set)")]
    StepTooLarge { product: f64, sup_drift: f64 },
    #[error("initial point {x} is outside the open interval")]
    InitOutsideDomain { x: f64 },
    #[error("only {survivors} paths alive at t = {t}; {required} required")]
    TooFewSurvivors {
        t: f64,
        survivors: u64,
        required: u64,
    },
    #[error("gamma {gamma} is not below 0.9 × estimated λ₀ = {lambda0_hat}")]
    GammaTooLarge { gamma: f64, lambda0_hat: f64 },
    #[error("censored fraction {fraction:e} is not below {limit:e}")]
    HeavyCensoring { fraction: f64, limit: f64 },
    #[error("h-process left the domain at x = {x}, t = {t}")]
    AbsorptionInHProcess { x: f64, t: f64 },
    #[error("ground state is not positive at state {index}")]
    NonPositivePhi { index: usize },
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

impl MonteCarloError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::InvalidConfig(_) => "InvalidConfig",
            Self::StepTooLarge { .. } => "StepTooLarge",
            Self::InitOutsideDomain { .. } => "InitOutsideDomain",
            Self::TooFewSurvivors { .. } => "TooFewSurvivors",
            Self::GammaTooLarge { .. } => "GammaTooLarge",
            Self::HeavyCensoring { .. } => "HeavyCensoring",
            Self::AbsorptionInHProcess { .. } => "AbsorptionInHProcess",
            Self::NonPositivePhi { .. } => "NonPositivePhi",
            Self::Diffusion(e) => e.code(),
            Self::Stats(e) => e.code(),
        }
    }
}

impl From<SpectralError> for MonteCarloError {
    fn from(e: SpectralError) -> Self {
        Self::Diffusion(DiffusionError::Spectral(e))
    }
}

pub type Result<T> = std::result::Result<T, MonteCarloError>;

/// Estimators refuse fewer live paths than this.
pub const MIN_SURVIVORS: u64 = 100;
/// `dt·sup|q|` above this is rejected.
const STEP_LIMIT: f64 = 0.1;
/// Drift probes farther than this from the initial law are ignored.
const PROBE_WINDOW: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Brownian-bridge test for crossings inside a step.
    pub bridge_correction: bool,
    /// Times at which surviving positions are recorded, snapped to `dt`.
    pub snapshot_times: Vec<f64>,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 1.0,
            n_paths: 10_000,
            seed: 0,
            bridge_correction: true,
            snapshot_times: Vec::new(),
        }
    }
}

impl PathConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(MonteCarloError::InvalidConfig(format!(
                "dt must be > 0, got {}",
                self.dt
            )));
        }
        if !(self.horizon >= self.dt) || !self.horizon.is_finite() {
            return Err(MonteCarloError::InvalidConfig(format!(
                "horizon {} is below dt",
                self.horizon
            )));
        }
        if self.n_paths == 0 {
            return Err(MonteCarloError::InvalidConfig("n_paths must be ≥ 1".into()));
        }
        if let Some(t) = self
            .snapshot_times
            .iter()
            .find(|&&t| !(t >= 0.0 && t <= self.horizon))
        {
            return Err(MonteCarloError::InvalidConfig(format!(
                "snapshot time {t} outside [0, horizon]"
            )));
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        (self.horizon / self.dt).round().max(1.0) as usize
    }
}

/// Initial law of the paths.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Point(f64),
    /// Piecewise-uniform law: cell `i` is `[edges[i], edges[i+1]]` with mass `weights[i]`.
    Cells {
        edges: Vec<f64>,
        weights: Vec<f64>,
    },
}

impl Init {
    /// The discretized QSD spread uniformly over each dual cell.
    pub fn from_density(density: &GridDensity) -> Self {
        Init::Cells {
            edges: density.edges.clone(),
            weights: density.qsd.as_slice().to_vec(),
        }
    }

    fn range(&self) -> (f64, f64) {
        match self {
            Init::Point(x) => (*x, *x),
            Init::Cells { edges, .. } => (edges[0], *edges.last().unwrap()),
        }
    }

    fn validate(&self, d: &Diffusion1D) -> Result<Sampler> {
        let inside = |x: f64| x > d.left() && x < d.right();
        match self {
            Init::Point(x) => {
                if !inside(*x) {
                    return Err(MonteCarloError::InitOutsideDomain { x: *x });
                }
                Ok(Sampler::Point(*x))
            }
            Init::Cells { edges, weights } => {
                if edges.len() != weights.len() + 1 || weights.is_empty() {
                    return Err(MonteCarloError::InvalidConfig(
                        "cell edges and weights disagree".into(),
                    ));
                }
                if let Some(&x) = edges.iter().find(|&&x| !(x >= d.left() && x <= d.right())) {
                    return Err(MonteCarloError::InitOutsideDomain { x });
                }
                if edges.windows(2).any(|w| !(w[0] < w[1])) || weights.iter().any(|w| !(*w >= 0.0))
                {
                    return Err(MonteCarloError::InvalidConfig(
                        "cells must be increasing with nonnegative mass".into(),
                    ));
                }
                let total: f64 = weights.iter().sum();
                let cdf: Vec<f64> = weights
                    .iter()
                    .scan(0.0, |s, w| {
                        *s += w / total;
                        Some(*s)
                    })
                    .collect();
                Ok(Sampler::Cells {
                    edges: edges.clone(),
                    cdf,
                })
            }
        }
    }
}

enum Sampler {
    Point(f64),
    Cells { edges: Vec<f64>, cdf: Vec<f64> },
}

impl Sampler {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Sampler::Point(x) => *x,
            Sampler::Cells { edges, cdf } => {
                let u: f64 = rng.random();
                let k = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
                let v: f64 = rng.random();
                // keep samples off the cell boundary, which may be an absorbing endpoint
                let v = v.clamp(1e-12, 1.0 - 1e-12);
                edges[k] + v * (edges[k + 1] - edges[k])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Fate {
    Absorbed(Side),
    Killed,
    /// Alive at the horizon.
    Censored,
}

#[derive(Debug, Clone, Serialize)]
pub struct PathEnsemble {
    pub config: PathConfig,
    /// `ζ` per path; censored paths carry the horizon.
    pub lifetimes: Vec<f64>,
    pub fates: Vec<Fate>,
    /// Snapshot times after snapping to the step grid.
    pub times: Vec<f64>,
    /// Positions of the paths alive at each snapshot time, in path order.
    pub snapshots: Vec<Vec<f64>>,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.lifetimes.len()
    }

    /// Number of paths with `ζ > t`; censored paths count as alive up to the horizon.
    pub fn survivors(&self, t: f64) -> u64 {
        self.lifetimes
            .iter()
            .zip(&self.fates)
            .filter(|(&z, f)| z > t || (**f == Fate::Censored && t <= z))
            .count() as u64
    }

    pub fn censored_fraction(&self) -> f64 {
        self.fates.iter().filter(|f| **f == Fate::Censored).count() as f64 / self.n_paths() as f64
    }

    pub fn kills(&self) -> usize {
        self.fates.iter().filter(|f| **f == Fate::Killed).count()
    }

    pub fn absorptions(&self) -> usize {
        self.fates
            .iter()
            .filter(|f| matches!(f, Fate::Absorbed(_)))
            .count()
    }

    /// Index of the recorded snapshot at `t`, if any.
    pub fn snapshot_index(&self, t: f64) -> Option<usize> {
        let tol = 0.5 * self.config.dt;
        self.times.iter().position(|&s| (s - t).abs() <= tol)
    }
}

/// How the simulator treats an end of the interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Wall {
    Absorbing(f64),
    Reflecting(f64),
    Open,
}

pub(crate) fn walls(d: &Diffusion1D) -> Result<[Wall; 2]> {
    let report = is_class_t(d)?;
    let wall = |r: f64, accessible: bool| {
        if !r.is_finite() {
            Wall::Open
        } else if accessible {
            Wall::Absorbing(r)
        } else {
            Wall::Reflecting(r)
        }
    };
    Ok([
        wall(d.left(), report.left.class.is_accessible()),
        wall(d.right(), report.right.class.is_accessible()),
    ])
}

/// Rejects `dt·sup|q| > 0.1` over probes near the initial law.
pub(crate) fn check_step(d: &Diffusion1D, dt: f64, around: (f64, f64)) -> Result<()> {
    let (lo, hi) = (around.0 - PROBE_WINDOW, around.1 + PROBE_WINDOW);
    let sup_drift = d
        .probe_points(64)
        .into_iter()
        .chain([around.0, around.1])
        .filter(|&x| x >= lo && x <= hi && x > d.left() && x < d.right())
        .map(|x| d.drift().eval(x).abs())
        .fold(0.0_f64, f64::max);
    let product = dt * sup_drift;
    if product > STEP_LIMIT {
        return Err(MonteCarloError::StepTooLarge { product, sup_drift });
    }
    Ok(())
}

pub(crate) fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

struct PathRecord {
    lifetime: f64,
    fate: Fate,
    positions: Vec<f64>,
}

/// Simulates `cfg.n_paths` killed paths of `d` from `init`.
pub fn simulate_killed_paths(
    d: &Diffusion1D,
    init: &Init,
    cfg: &PathConfig,
) -> Result<PathEnsemble> {
    cfg.validate()?;
    let sampler = init.validate(d)?;
    check_step(d, cfg.dt, init.range())?;
    let [left, right] = walls(d)?;
    let steps = cfg.steps();
    let dt = cfg.dt;
    let sqrt_dt = dt.sqrt();
    let snap_steps: Vec<usize> = cfg
        .snapshot_times
        .iter()
        .map(|t| ((t / dt).round() as usize).min(steps))
        .collect();
    let killing = d.has_killing();
    let q = d.drift();
    let v = d.killing();

    let records: Vec<PathRecord> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(cfg.seed, p);
            let mut x = sampler.draw(&mut rng);
            let mut positions = vec![f64::NAN; snap_steps.len()];
            let record = |positions: &mut Vec<f64>, k: usize, x: f64| {
                for (slot, &s) in positions.iter_mut().zip(&snap_steps) {
                    if s == k {
                        *slot = x;
                    }
                }
            };
            for k in 0..steps {
                record(&mut positions, k, x);
                let t = k as f64 * dt;
                if killing {
                    let rate = v.eval(x);
                    if rate > 0.0 {
                        let u: f64 = rng.random();
                        if u < -(-rate * dt).exp_m1() {
                            // exponential clock conditioned to ring inside the step
                            let tau = -(-u).ln_1p() / rate;
                            return PathRecord {
                                lifetime: t + tau.min(dt),
                                fate: Fate::Killed,
                                positions,
                            };
                        }
                    }
                }
                let z: f64 = rng.sample(StandardNormal);
                let mut y = x - q.eval(x) * dt + sqrt_dt * z;
                let mut absorbed = None;
                for (side, wall) in [(Side::Left, left), (Side::Right, right)] {
                    match wall {
                        Wall::Absorbing(r) => {
                            let outside = if side == Side::Left { y <= r } else { y >= r };
                            if outside {
                                absorbed = Some(side);
                            } else if cfg.bridge_correction {
                                let p_cross = (-2.0 * (x - r) * (y - r) / dt).exp();
                                let u: f64 = rng.random();
                                if u < p_cross {
                                    absorbed = Some(side);
                                }
                            }
                        }
                        Wall::Reflecting(r) => {
                            let outside = if side == Side::Left { y <= r } else { y >= r };
                            if outside {
                                y = 2.0 * r - y;
                                if (side == Side::Left && y <= r) || (side == Side::Right && y >= r)
                                {
                                    y = 0.5 * (x + r);
                                }
                            }
                        }
                        Wall::Open => {}
                    }
                    if absorbed.is_some() {
                        break;
                    }
                }
                if let Some(side) = absorbed {
                    return PathRecord {
                        lifetime: t + dt,
                        fate: Fate::Absorbed(side),
                        positions,
                    };
                }
                x = y;
            }
            record(&mut positions, steps, x);
            PathRecord {
                lifetime: steps as f64 * dt,
                fate: Fate::Censored,
                positions,
            }
        })
        .collect();

    let times: Vec<f64> = snap_steps.iter().map(|&s| s as f64 * dt).collect();
    let snapshots = (0..times.len())
        .map(|j| {
            records
                .iter()
                .map(|r| r.positions[j])
                .filter(|x| !x.is_nan())
                .collect()
        })
        .collect();
    Ok(PathEnsemble {
        config: cfg.clone(),
        lifetimes: records.iter().map(|r| r.lifetime).collect(),
        fates: records.iter().map(|r| r.fate).collect(),
        times,
        snapshots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{discretize, Closure, Coefficient, Grid};
    use crate::spectral::semigroup_apply;
    use crate::stats::mean_stderr;
    use std::f64::consts::PI;

    fn cfg(dt: f64, horizon: f64, n: usize, seed: u64) -> PathConfig {
        PathConfig {
            dt,
            horizon,
            n_paths: n,
            seed,
            ..PathConfig::default()
        }
    }

    #[test]
    fn free_motion_is_censored() {
        let d = Diffusion1D::brownian(-1e10, 1e10, 0.0).unwrap();
        let e = simulate_killed_paths(&d, &Init::Point(0.0), &cfg(0.01, 1.0, 500, 1)).unwrap();
        assert!(e.fates.iter().all(|f| *f == Fate::Censored));
        assert_eq!(e.kills(), 0);
        assert_eq!(e.censored_fraction(), 1.0);
    }

    #[test]
    fn constant_killing_gives_exponential_lifetimes() {
        let k = 2.0;
        let d = Diffusion1D::new(
            -1e10,
            1e10,
            Coefficient::zero(),
            Coefficient::constant(k),
            0.0,
        )
        .unwrap();
        let e = simulate_killed_paths(&d, &Init::Point(0.0), &cfg(0.01, 20.0, 100_000, 2)).unwrap();
        assert_eq!(e.kills(), 100_000);
        let (mean, se) = mean_stderr(&e.lifetimes).unwrap();
        assert!((mean - 1.0 / k).abs() < 3.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn deterministic_and_validated() {
        let d = Diffusion1D::brownian(0.0, PI, 1.0).unwrap();
        let c = PathConfig {
            snapshot_times: vec![0.0, 0.5],
            ..cfg(0.01, 1.0, 300, 9)
        };
        let a = simulate_killed_paths(&d, &Init::Point(1.0), &c).unwrap();
        let b = simulate_killed_paths(&d, &Init::Point(1.0), &c).unwrap();
        assert_eq!(a.lifetimes, b.lifetimes);
        assert_eq!(a.snapshots, b.snapshots);
        assert!(a.snapshots[0].iter().all(|&x| x == 1.0));
        assert!(a.snapshots[1].iter().all(|&x| x > 0.0 && x < PI));
        assert_eq!(
            simulate_killed_paths(&d, &Init::Point(4.0), &c)
                .unwrap_err()
                .code(),
            "InitOutsideDomain"
        );
        let stiff = Diffusion1D::new(
            -5.0,
            5.0,
            Coefficient::parse("10*x").unwrap(),
            Coefficient::zero(),
            0.0,
        )
        .unwrap();
        assert_eq!(
            simulate_killed_paths(&stiff, &Init::Point(0.0), &cfg(0.01, 1.0, 10, 0))
                .unwrap_err()
                .code(),
            "StepTooLarge"
        );
    }

    #[test]
    fn survival_matches_semigroup_oracle() {
        let d = Diffusion1D::brownian(0.0, PI, PI / 2.0).unwrap();
        let grid = Grid::uniform(&d, 0.0, PI, 1999, [Closure::Absorbing; 2]).unwrap();
        let g = discretize(&d, &grid).unwrap();
        let s = semigroup_apply(&g, 1.0, &vec![1.0; 1999]).unwrap();
        let oracle = s[grid.nearest_state(PI / 2.0)];
        let n = 40_000;
        let e = simulate_killed_paths(&d, &Init::Point(PI / 2.0), &cfg(0.01, 1.0, n, 5)).unwrap();
        let p = e.survivors(1.0) as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((p - oracle).abs() < 3.0 * se, "{p} vs {oracle} ± {se}");
    }

    #[test]
    fn bridge_correction_removes_leading_bias() {
        let d = Diffusion1D::brownian(0.0, PI, PI / 2.0).unwrap();
        // exact survival from π/2 at t = 1: Σ_k odd (4/(kπ)) sin(kπ/2) e^{−k²/2}
        let exact: f64 = (0..50)
            .map(|j| {
                let k = (2 * j + 1) as f64;
                4.0 / (k * PI) * (k * PI / 2.0).sin() * (-k * k / 2.0).exp()
            })
            .sum();
        let n = 40_000;
        let bias = |dt: f64, bridge: bool| {
            let c = PathConfig {
                bridge_correction: bridge,
                ..cfg(dt, 1.0, n, 17)
            };
            let e = simulate_killed_paths(&d, &Init::Point(PI / 2.0), &c).unwrap();
            e.survivors(1.0) as f64 / n as f64 - exact
        };
        let (b1, b2) = (bias(0.04, false), bias(0.01, false));
        // naive Euler misses crossings: bias ∝ √dt, halves when dt quarters
        assert!(b1 > 0.0 && b2 > 0.0 && b2 < 0.75 * b1, "{b1} {b2}");
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        assert!(bias(0.04, true).abs() < 3.0 * se);
    }
}
