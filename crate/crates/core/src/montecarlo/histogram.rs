use serde::Serialize;

use super::{MonteCarloError, PathEnsemble, Result, MIN_SURVIVORS};
use crate::diffusion::Grid;

/// Histogram cells `[edges[k], edges[k+1])`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bins {
    edges: Vec<f64>,
}

impl Bins {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2
            || edges.iter().any(|x| !x.is_finite())
            || edges.windows(2).any(|w| !(w[0] < w[1]))
        {
            return Err(MonteCarloError::InvalidConfig(
                "bin edges must be finite and increasing".into(),
            ));
        }
        Ok(Self { edges })
    }

    pub fn uniform(a: f64, b: f64, k: usize) -> Result<Self> {
        Self::new((0..=k).map(|i| a + (b - a) * i as f64 / k as f64).collect())
    }

    /// The dual cells of a grid.
    pub fn from_grid(grid: &Grid) -> Result<Self> {
        Self::new(grid.dual_edges())
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn locate(&self, x: f64) -> Option<usize> {
        let last = *self.edges.last().unwrap();
        if !(x >= self.edges[0] && x <= last) {
            return None;
        }
        let k = self.edges.partition_point(|&e| e <= x);
        Some(k.saturating_sub(1).min(self.len() - 1))
    }

    /// Bin masses of a law that is uniform on each cell `[cells[i], cells[i+1]]`
    /// with mass `weights[i]`.
    pub fn project(&self, cells: &[f64], weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (i, &w) in weights.iter().enumerate() {
            let (a, b) = (cells[i], cells[i + 1]);
            if w == 0.0 {
                continue;
            }
            let first = self.edges.partition_point(|&e| e <= a).saturating_sub(1);
            for k in first..self.len() {
                let (lo, hi) = (self.edges[k].max(a), self.edges[k + 1].min(b));
                if self.edges[k] >= b {
                    break;
                }
                if hi > lo {
                    out[k] += w * (hi - lo) / (b - a);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Histogram {
    pub t: f64,
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Paths alive at `t`, including any outside the bins.
    pub survivors: u64,
    pub probs: Vec<f64>,
    /// Multinomial standard error of each probability.
    pub stderr: Vec<f64>,
}

impl Histogram {
    pub fn from_positions(t: f64, positions: &[f64], bins: &Bins) -> Self {
        let mut counts = vec![0u64; bins.len()];
        for &x in positions {
            if let Some(k) = bins.locate(x) {
                counts[k] += 1;
            }
        }
        let n = positions.len() as f64;
        let probs: Vec<f64> = counts
            .iter()
            .map(|&c| if n > 0.0 { c as f64 / n } else { 0.0 })
            .collect();
        let stderr = probs
            .iter()
            .map(|p| (p * (1.0 - p) / n.max(1.0)).sqrt())
            .collect();
        Self {
            t,
            edges: bins.edges().to_vec(),
            counts,
            survivors: positions.len() as u64,
            probs,
            stderr,
        }
    }
}

/// Normalized histogram of the paths alive at `t`.
pub fn empirical_conditional_law(ens: &PathEnsemble, t: f64, bins: &Bins) -> Result<Histogram> {
    let j = ens.snapshot_index(t).ok_or_else(|| {
        MonteCarloError::InvalidConfig(format!("no snapshot recorded at t = {t}"))
    })?;
    let positions = &ens.snapshots[j];
    if (positions.len() as u64) < MIN_SURVIVORS {
        return Err(MonteCarloError::TooFewSurvivors {
            t,
            survivors: positions.len() as u64,
            required: MIN_SURVIVORS,
        });
    }
    Ok(Histogram::from_positions(ens.times[j], positions, bins))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn locate_and_project() {
        let b = Bins::uniform(0.0, 1.0, 4).unwrap();
        assert_eq!(b.locate(0.0), Some(0));
        assert_eq!(b.locate(0.3), Some(1));
        assert_eq!(b.locate(1.0), Some(3));
        assert_eq!(b.locate(1.1), None);
        let p = b.project(&[0.0, 0.5, 1.0], &[0.2, 0.8]);
        let expected = [0.1, 0.1, 0.4, 0.4];
        assert!(p.iter().zip(expected).all(|(a, b)| (a - b).abs() < 1e-15));
        let p = b.project(&[0.1, 0.2], &[1.0]);
        assert!((p[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn histogram_counts_and_errors() {
        let b = Bins::uniform(0.0, 1.0, 2).unwrap();
        let h = Histogram::from_positions(0.0, &[0.1, 0.2, 0.7, 0.9], &b);
        assert_eq!(h.counts, vec![2, 2]);
        assert_eq!(h.probs, vec![0.5, 0.5]);
        assert!((h.stderr[0] - 0.25).abs() < 1e-15);
        assert!(Bins::new(vec![0.0, 0.0, 1.0]).is_err());
    }
}
