//! Goodness-of-fit, trend and bootstrap helpers for the Monte Carlo checks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("empty sample")]
    EmptySample,
    #[error("invalid probabilities: {0}")]
    InvalidProbabilities(String),
    #[error("only {bins} bins remain after pooling; at least 2 are needed")]
    TooFewBins { bins: usize },
}

impl StatsError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::EmptySample => "EmptySample",
            Self::InvalidProbabilities(_) => "InvalidProbabilities",
            Self::TooFewBins { .. } => "TooFewBins",
        }
    }
}

/// Expected counts below this are pooled with a neighbour.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Clone, Serialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Bins left after pooling sparse ones.
    pub bins: usize,
}

impl ChiSquareTest {
    pub fn rejects_at(&self, level: f64) -> bool {
        self.p_value < level
    }
}

/// Pearson goodness-of-fit of `counts` against cell probabilities `probs`.
///
/// Adjacent cells are pooled left to right until each expected count reaches
/// [`MIN_EXPECTED`]; a sparse remainder joins the last pooled cell.
pub fn chi_square_test(counts: &[u64], probs: &[f64]) -> Result<ChiSquareTest, StatsError> {
    if counts.len() != probs.len() {
        return Err(StatsError::InvalidProbabilities("length mismatch".into()));
    }
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(StatsError::EmptySample);
    }
    let total_p: f64 = probs.iter().sum();
    if probs.iter().any(|&p| !(p >= 0.0)) || !(total_p > 0.0) {
        return Err(StatsError::InvalidProbabilities(format!("sum {total_p}")));
    }
    let n = n as f64;
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    let (mut obs, mut exp) = (0.0, 0.0);
    for (&c, &p) in counts.iter().zip(probs) {
        obs += c as f64;
        exp += n * p / total_p;
        if exp >= MIN_EXPECTED {
            pooled.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
    }
    if exp > 0.0 || obs > 0.0 {
        match pooled.last_mut() {
            Some(last) => {
                last.0 += obs;
                last.1 += exp;
            }
            None => pooled.push((obs, exp)),
        }
    }
    if pooled.len() < 2 {
        return Err(StatsError::TooFewBins { bins: pooled.len() });
    }
    let statistic: f64 = pooled.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = pooled.len() - 1;
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    Ok(ChiSquareTest {
        statistic,
        dof,
        p_value: dist.sf(statistic),
        bins: pooled.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MannKendall {
    pub s: i64,
    pub z: f64,
    pub tau: f64,
    /// One-sided p-value for a decreasing trend.
    pub p_decreasing: f64,
}

/// Mann–Kendall trend statistic with the no-ties variance.
pub fn mann_kendall(x: &[f64]) -> Result<MannKendall, StatsError> {
    let n = x.len();
    if n < 2 {
        return Err(StatsError::EmptySample);
    }
    let mut s = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            s += match x[j].partial_cmp(&x[i]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    let nf = n as f64;
    let var = nf * (nf - 1.0) * (2.0 * nf + 5.0) / 18.0;
    let z = match s {
        0 => 0.0,
        s if s > 0 => (s as f64 - 1.0) / var.sqrt(),
        s => (s as f64 + 1.0) / var.sqrt(),
    };
    let normal = Normal::standard();
    Ok(MannKendall {
        s,
        z,
        tau: s as f64 / (0.5 * nf * (nf - 1.0)),
        p_decreasing: normal.cdf(z),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

impl ConfidenceInterval {
    pub fn halfwidth(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }

    pub fn overlaps(&self, other: &ConfidenceInterval) -> bool {
        self.lower <= other.upper && other.lower <= self.upper
    }
}

/// Percentile bootstrap for a statistic of a histogram, resampling the counts
/// from the multinomial law they define.
pub fn bootstrap_counts<F>(
    counts: &[u64],
    resamples: usize,
    level: f64,
    seed: u64,
    stat: F,
) -> Result<ConfidenceInterval, StatsError>
where
    F: Fn(&[u64]) -> f64 + Sync,
{
    let n: u64 = counts.iter().sum();
    if n == 0 || resamples == 0 {
        return Err(StatsError::EmptySample);
    }
    let estimate = stat(counts);
    let mut values: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let resampled = multinomial(&mut rng, n, counts);
            stat(&resampled)
        })
        .collect();
    values.sort_by(|a, b| a.total_cmp(b));
    let (lower, upper) = percentile_bounds(&values, level);
    Ok(ConfidenceInterval {
        estimate,
        lower,
        upper,
        level,
    })
}

/// Draws `n` items over cells weighted by `weights` through conditional binomials.
fn multinomial(rng: &mut ChaCha8Rng, n: u64, weights: &[u64]) -> Vec<u64> {
    let mut remaining_n = n;
    let mut remaining_w: u64 = weights.iter().sum();
    weights
        .iter()
        .map(|&w| {
            if remaining_n == 0 || w == 0 {
                remaining_w -= w;
                return 0;
            }
            let p = (w as f64 / remaining_w as f64).min(1.0);
            let k = if p >= 1.0 {
                remaining_n
            } else {
                Binomial::new(remaining_n, p)
                    .expect("valid binomial")
                    .sample(rng)
            };
            remaining_n -= k;
            remaining_w -= w;
            k
        })
        .collect()
}

fn percentile_bounds(sorted: &[f64], level: f64) -> (f64, f64) {
    let alpha = 0.5 * (1.0 - level);
    let pick = |q: f64| {
        let pos = q * (sorted.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        let t = pos - lo as f64;
        (1.0 - t) * sorted[lo] + t * sorted[hi]
    };
    (pick(alpha), pick(1.0 - alpha))
}

/// Sample mean and its standard error.
pub fn mean_stderr(x: &[f64]) -> Result<(f64, f64), StatsError> {
    let n = x.len();
    if n == 0 {
        return Err(StatsError::EmptySample);
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok((mean, 0.0));
    }
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    Ok((mean, (var / n as f64).sqrt()))
}

/// `½ Σ |counts_k/N − p_k|`.
pub fn tv_from_counts(counts: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return f64::NAN;
    }
    0.5 * counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| (c as f64 / n as f64 - p).abs())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn chi_square_exact_fit_and_pooling() {
        let t = chi_square_test(&[25, 25, 25, 25], &[0.25; 4]).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert!((t.p_value - 1.0).abs() < 1e-12);
        // the two sparse tail cells are merged into their neighbours
        let t = chi_square_test(&[50, 46, 2, 2], &[0.5, 0.46, 0.02, 0.02]).unwrap();
        assert_eq!(t.bins, 2);
        assert!(chi_square_test(&[1, 2], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn chi_square_matches_table_value() {
        // χ²₃ upper 1% point is 11.3449
        let counts = [130u64, 70, 100, 100];
        let t = chi_square_test(&counts, &[0.25; 4]).unwrap();
        assert!((t.statistic - 18.0).abs() < 1e-12);
        assert_eq!(t.dof, 3);
        assert!(t.rejects_at(0.01));
        let d = ChiSquared::new(3.0).unwrap();
        assert!((d.sf(11.3449) - 0.01).abs() < 1e-5);
    }

    #[test]
    fn chi_square_is_calibrated_under_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let probs = [0.1, 0.2, 0.3, 0.4];
        let mut rejections = 0;
        for _ in 0..400 {
            let mut counts = [0u64; 4];
            for _ in 0..500 {
                let u: f64 = rng.random();
                let k = probs
                    .iter()
                    .scan(0.0, |s, p| {
                        *s += p;
                        Some(*s)
                    })
                    .position(|c| u < c)
                    .unwrap_or(3);
                counts[k] += 1;
            }
            if chi_square_test(&counts, &probs).unwrap().rejects_at(0.05) {
                rejections += 1;
            }
        }
        // binomial(400, 0.05): mean 20, sd ≈ 4.4
        assert!((5..=38).contains(&rejections), "{rejections}");
    }

    #[test]
    fn mann_kendall_directions() {
        let down: Vec<f64> = (0..10).map(|i| -(i as f64)).collect();
        let r = mann_kendall(&down).unwrap();
        assert_eq!(r.s, -45);
        assert_eq!(r.tau, -1.0);
        assert!(r.p_decreasing < 1e-3);
        let up = mann_kendall(&[1.0, 2.0, 3.0]).unwrap();
        assert!(up.p_decreasing > 0.5);
    }

    #[test]
    fn bootstrap_covers_proportion() {
        let counts = [300u64, 700];
        let ci = bootstrap_counts(&counts, 400, 0.95, 3, |c| {
            c[0] as f64 / (c[0] + c[1]) as f64
        })
        .unwrap();
        let se = (0.3f64 * 0.7 / 1000.0).sqrt();
        assert!(
            (ci.halfwidth() - 1.96 * se).abs() < 0.3 * 1.96 * se,
            "{ci:?}"
        );
        assert!(ci.lower < 0.3 && ci.upper > 0.3);
        let again = bootstrap_counts(&counts, 400, 0.95, 3, |c| c[0] as f64 / 1000.0).unwrap();
        assert_eq!(ci, again);
    }

    #[test]
    fn multinomial_preserves_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = [0u64, 5, 0, 10, 85];
        let s = multinomial(&mut rng, 1000, &w);
        assert_eq!(s.iter().sum::<u64>(), 1000);
        assert_eq!(s[0] + s[2], 0);
    }

    #[test]
    fn helpers() {
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert!((se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(tv_from_counts(&[1, 0], &[0.5, 0.5]), 0.5);
    }
}
