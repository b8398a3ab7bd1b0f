use serde::Serialize;

use super::{
    empirical_conditional_law, simulate_killed_paths, Bins, Init, MonteCarloError, PathConfig,
    PathEnsemble, Result, MIN_SURVIVORS,
};
use crate::diffusion::{Diffusion1D, GridDensity};
use crate::stats::{
    bootstrap_counts, mann_kendall, mean_stderr, tv_from_counts, ConfidenceInterval, MannKendall,
};

/// Sample points per survival-rate window.
const RATE_POINTS: usize = 20;
const BOOTSTRAP_RESAMPLES: usize = 200;
const CI_LEVEL: f64 = 0.95;
/// Largest censored fraction accepted by the lifetime moment estimator.
pub const CENSORING_LIMIT: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct RateEstimate {
    pub rate: f64,
    pub stderr: f64,
    pub window: (f64, f64),
    pub survivors_at_end: u64,
}

/// Least-squares slope of `−log S(t)` over `window`.
///
/// `−log Ŝ` has approximately independent increments with
/// `Var(−log Ŝ(t)) ≈ (1/S(t) − 1)/N`; the slope variance uses that covariance.
pub fn survival_rate_estimate(ens: &PathEnsemble, window: (f64, f64)) -> Result<RateEstimate> {
    let (t1, t2) = window;
    if !(t1 >= 0.0 && t2 > t1 && t2 <= ens.config.horizon + 0.5 * ens.config.dt) {
        return Err(MonteCarloError::InvalidConfig(format!(
            "bad window ({t1}, {t2})"
        )));
    }
    let survivors_at_end = ens.survivors(t2);
    if survivors_at_end < MIN_SURVIVORS {
        return Err(MonteCarloError::TooFewSurvivors {
            t: t2,
            survivors: survivors_at_end,
            required: MIN_SURVIVORS,
        });
    }
    let n = ens.n_paths() as f64;
    let ts: Vec<f64> = (0..=RATE_POINTS)
        .map(|j| t1 + (t2 - t1) * j as f64 / RATE_POINTS as f64)
        .collect();
    let s: Vec<f64> = ts.iter().map(|&t| ens.survivors(t) as f64 / n).collect();
    let y: Vec<f64> = s.iter().map(|p| -p.ln()).collect();
    let tbar = ts.iter().sum::<f64>() / ts.len() as f64;
    let sxx: f64 = ts.iter().map(|t| (t - tbar) * (t - tbar)).sum();
    let w: Vec<f64> = ts.iter().map(|t| (t - tbar) / sxx).collect();
    let rate = w.iter().zip(&y).map(|(a, b)| a * b).sum();
    let v: Vec<f64> = s.iter().map(|p| (1.0 / p - 1.0) / n).collect();
    let mut var = 0.0;
    for i in 0..ts.len() {
        for j in 0..ts.len() {
            var += w[i] * w[j] * v[i.min(j)];
        }
    }
    Ok(RateEstimate {
        rate,
        stderr: var.max(0.0).sqrt(),
        window,
        survivors_at_end,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct YaglomPoint {
    pub t: f64,
    pub survivors: u64,
    /// `None` when fewer than the minimum number of paths survive.
    pub tv_distance: Option<f64>,
    pub ci: Option<ConfidenceInterval>,
}

#[derive(Debug, Clone, Serialize)]
pub struct YaglomEstimate {
    pub points: Vec<YaglomPoint>,
    /// Reference bin masses.
    pub reference: Vec<f64>,
    /// Trend of the available TV distances in time order.
    pub trend: Option<MannKendall>,
}

impl YaglomEstimate {
    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }

    pub fn tv_distance(&self) -> Vec<Option<f64>> {
        self.points.iter().map(|p| p.tv_distance).collect()
    }

    pub fn ci_halfwidth(&self) -> Vec<Option<f64>> {
        self.points
            .iter()
            .map(|p| p.ci.map(|c| c.halfwidth()))
            .collect()
    }
}

/// TV distance between the conditional law from `x0` and the reference QSD,
/// binned on `bins`, at each time in `times`.
pub fn yaglom_estimate(
    d: &Diffusion1D,
    x0: f64,
    cfg: &PathConfig,
    reference: &GridDensity,
    bins: &Bins,
    times: &[f64],
) -> Result<YaglomEstimate> {
    if times.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(MonteCarloError::InvalidConfig(
            "times must be increasing".into(),
        ));
    }
    let cfg = PathConfig {
        snapshot_times: times.to_vec(),
        ..cfg.clone()
    };
    let ens = simulate_killed_paths(d, &Init::Point(x0), &cfg)?;
    let probs = bins.project(&reference.edges, reference.qsd.as_slice());
    let mut points = Vec::with_capacity(times.len());
    for (j, &t) in times.iter().enumerate() {
        match empirical_conditional_law(&ens, t, bins) {
            Ok(h) => {
                let tv = tv_from_counts(&h.counts, &probs);
                let ci = bootstrap_counts(
                    &h.counts,
                    BOOTSTRAP_RESAMPLES,
                    CI_LEVEL,
                    cfg.seed ^ (j as u64 + 1),
                    |c| tv_from_counts(c, &probs),
                )?;
                points.push(YaglomPoint {
                    t: ens.times[j],
                    survivors: h.survivors,
                    tv_distance: Some(tv),
                    ci: Some(ci),
                });
            }
            Err(MonteCarloError::TooFewSurvivors { survivors, .. }) => points.push(YaglomPoint {
                t: ens.times[j],
                survivors,
                tv_distance: None,
                ci: None,
            }),
            Err(e) => return Err(e),
        }
    }
    let series: Vec<f64> = points.iter().filter_map(|p| p.tv_distance).collect();
    let trend = (series.len() >= 2)
        .then(|| mann_kendall(&series))
        .transpose()?;
    Ok(YaglomEstimate {
        points,
        reference: probs,
        trend,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentEstimate {
    pub gamma: f64,
    pub value: f64,
    pub stderr: f64,
    pub lambda0_hat: f64,
    pub censored_fraction: f64,
    /// Bound on the mass `E[e^{γζ}; ζ > T]` missed by censoring at `T`,
    /// assuming an exponential tail at rate `λ̂₀`.
    pub censoring_bias_bound: f64,
}

/// Empirical `E e^{γζ}`; censored lifetimes enter as the horizon.
pub fn exp_zeta_moment_estimate(ens: &PathEnsemble, gamma: f64) -> Result<MomentEstimate> {
    if !(gamma >= 0.0) {
        return Err(MonteCarloError::InvalidConfig(format!(
            "gamma must be ≥ 0, got {gamma}"
        )));
    }
    let censored_fraction = ens.censored_fraction();
    let lambda0_hat = lambda0_from_tail(ens)?;
    if gamma == 0.0 {
        return Ok(MomentEstimate {
            gamma,
            value: 1.0,
            stderr: 0.0,
            lambda0_hat,
            censored_fraction,
            censoring_bias_bound: 0.0,
        });
    }
    if gamma >= 0.9 * lambda0_hat {
        return Err(MonteCarloError::GammaTooLarge { gamma, lambda0_hat });
    }
    if censored_fraction >= CENSORING_LIMIT {
        return Err(MonteCarloError::HeavyCensoring {
            fraction: censored_fraction,
            limit: CENSORING_LIMIT,
        });
    }
    let samples: Vec<f64> = ens.lifetimes.iter().map(|z| (gamma * z).exp()).collect();
    let (value, stderr) = mean_stderr(&samples)?;
    let horizon = ens.config.horizon;
    Ok(MomentEstimate {
        gamma,
        value,
        stderr,
        lambda0_hat,
        censored_fraction,
        censoring_bias_bound: censored_fraction * (gamma * horizon).exp() * gamma
            / (lambda0_hat - gamma),
    })
}

/// Decay rate over the second half of the longest window that keeps
/// [`MIN_SURVIVORS`] paths alive.
fn lambda0_from_tail(ens: &PathEnsemble) -> Result<f64> {
    let horizon = ens.config.horizon;
    let t2 = (1..=40)
        .rev()
        .map(|j| horizon * j as f64 / 40.0)
        .find(|&t| ens.survivors(t) >= MIN_SURVIVORS)
        .ok_or(MonteCarloError::TooFewSurvivors {
            t: horizon / 40.0,
            survivors: ens.survivors(horizon / 40.0),
            required: MIN_SURVIVORS,
        })?;
    Ok(survival_rate_estimate(ens, (0.5 * t2, t2))?.rate)
}
