use rayon::prelude::*;
use serde::Serialize;

use super::scale::twice_drift_integral;
use super::{
    classify_boundary, is_class_t, scale_speed_from_drift, BoundaryClass, Diffusion1D,
    DiffusionError, Result, ScaleSpeed, Side,
};

/// Below this many interior cells a grid is rejected.
pub const MIN_CELLS: usize = 8;
/// Largest-to-smallest cell ratio of a geometrically graded grid.
const GRADING_SPAN: f64 = 20.0;
/// Cell-mass blocks beyond this fraction of the running total end the tail scan.
const TAIL_NEGLIGIBLE: f64 = 1e-18;
const MAX_TAIL_PIECES: usize = 60;

/// Boundary condition at an end node of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Closure {
    /// Dirichlet: flux through the end node kills the process.
    Absorbing,
    /// Reflecting: the end cell extends to the end node.
    NoFlux,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Refinement {
    Uniform,
    /// Cells grow by `ratio` away from absorbing ends until they are
    /// `GRADING_SPAN` times the smallest cell.
    Geometric {
        ratio: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    /// Number of interior nodes (states).
    pub cells: usize,
    pub refinement: Refinement,
    /// Speed-measure mass allowed beyond a cutoff, relative to the total.
    pub tail_mass: f64,
    /// Multiplies the distance from the anchor to each cutoff.
    pub cutoff_scale: f64,
    /// Cutoff distance from the anchor when the speed measure is infinite
    /// toward an infinite endpoint.
    pub fallback_cutoff: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            cells: 400,
            refinement: Refinement::Geometric { ratio: 1.05 },
            tail_mass: 1e-8,
            cutoff_scale: 1.0,
            fallback_cutoff: 50.0,
        }
    }
}

impl GridSpec {
    pub fn uniform(cells: usize) -> Self {
        Self {
            cells,
            refinement: Refinement::Uniform,
            ..Self::default()
        }
    }
}

/// Finite-volume grid: nodes `x₀ < … < x_{n+1}`, states at `x₁ … x_n`.
#[derive(Debug, Clone, Serialize)]
pub struct Grid {
    nodes: Vec<f64>,
    cellmass: Vec<f64>,
    /// `Δs` between consecutive nodes; infinite where unused at a no-flux end.
    scale_steps: Vec<f64>,
    /// `ℓ` at the interior nodes.
    log_scale: Vec<f64>,
    closures: [Closure; 2],
    classes: [Option<BoundaryClass>; 2],
    truncated: [bool; 2],
}

impl Grid {
    /// Classifies both endpoints, truncates infinite ones where the speed
    /// measure tail drops below `spec.tail_mass`, and closes each end.
    pub fn build(d: &Diffusion1D, spec: &GridSpec) -> Result<Self> {
        let report = is_class_t(d)?;
        let ss = scale_speed_from_drift(d)?;
        let mut ends = [0.0; 2];
        let mut closures = [Closure::NoFlux; 2];
        let mut truncated = [false; 2];
        for (k, (side, class)) in [
            (Side::Left, report.left.class),
            (Side::Right, report.right.class),
        ]
        .into_iter()
        .enumerate()
        {
            closures[k] = if class.is_accessible() {
                Closure::Absorbing
            } else {
                Closure::NoFlux
            };
            let r = d.endpoint(side);
            ends[k] = if r.is_finite() {
                r
            } else {
                truncated[k] = true;
                let dist =
                    tail_cutoff_distance(d, &ss, side, spec.tail_mass, spec.fallback_cutoff)?;
                let sign = if side == Side::Right { 1.0 } else { -1.0 };
                d.anchor() + sign * spec.cutoff_scale * dist
            };
        }
        let absorbing = closures.map(|c| c == Closure::Absorbing);
        let nodes = make_nodes(ends[0], ends[1], spec.cells, spec.refinement, absorbing);
        let mut grid = Self::assemble(d, &ss, nodes, closures)?;
        grid.classes = [Some(report.left.class), Some(report.right.class)];
        grid.truncated = truncated;
        Ok(grid)
    }

    /// Grid on explicit nodes with explicit closures.
    pub fn from_nodes(d: &Diffusion1D, nodes: Vec<f64>, closures: [Closure; 2]) -> Result<Self> {
        let mut classes = [None, None];
        for (k, side) in [Side::Left, Side::Right].into_iter().enumerate() {
            let end = if k == 0 { nodes.first() } else { nodes.last() };
            if closures[k] == Closure::Absorbing && end == Some(&d.endpoint(side)) {
                let class = classify_boundary(d, side)?.class;
                if class == BoundaryClass::Entrance {
                    return Err(DiffusionError::InvalidBoundaryClosure { side });
                }
                classes[k] = Some(class);
            }
        }
        let ss = scale_speed_from_drift(d)?;
        let mut grid = Self::assemble(d, &ss, nodes, closures)?;
        grid.classes = classes;
        grid.truncated = [
            grid.nodes[0] > d.left() && !d.left().is_finite(),
            *grid.nodes.last().unwrap() < d.right() && !d.right().is_finite(),
        ];
        Ok(grid)
    }

    /// `n` interior nodes equally spaced on `[a, b]`.
    pub fn uniform(
        d: &Diffusion1D,
        a: f64,
        b: f64,
        n: usize,
        closures: [Closure; 2],
    ) -> Result<Self> {
        Self::from_nodes(
            d,
            make_nodes(a, b, n, Refinement::Uniform, [false; 2]),
            closures,
        )
    }

    fn assemble(
        d: &Diffusion1D,
        ss: &ScaleSpeed,
        nodes: Vec<f64>,
        closures: [Closure; 2],
    ) -> Result<Self> {
        if nodes.len() < MIN_CELLS + 2 {
            return Err(DiffusionError::GridTooCoarse {
                cells: nodes.len().saturating_sub(2),
                min: MIN_CELLS,
            });
        }
        if nodes.iter().any(|x| !x.is_finite()) || nodes.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(DiffusionError::GridNotIncreasing);
        }
        if nodes[0] < d.left() || *nodes.last().unwrap() > d.right() {
            return Err(DiffusionError::InvalidInterval {
                left: nodes[0],
                right: *nodes.last().unwrap(),
            });
        }
        let n = nodes.len() - 2;
        let q = d.drift();

        let mut log_scale = Vec::with_capacity(n);
        log_scale.push(ss.log_scale_density(nodes[1])?);
        for i in 1..n {
            let step = twice_drift_integral(q, nodes[i], nodes[i + 1])?;
            log_scale.push(log_scale[i - 1] + step);
        }

        let [left, right] = closures;
        // segment i joins nodes i and i+1: (Δs, mass of left half, mass of right half)
        let segments: Vec<(f64, f64, f64)> = (0..=n)
            .into_par_iter()
            .map(|i| -> Result<(f64, f64, f64)> {
                let (a, b) = (nodes[i], nodes[i + 1]);
                let mid = 0.5 * (a + b);
                if i == 0 {
                    let (x1, l1) = (b, log_scale[0]);
                    let l_mid = l1 + twice_drift_integral(q, x1, mid)?;
                    let right_half = -ss.speed_mass(x1, l1, mid)?;
                    let (ds, left_half) = match left {
                        Closure::Absorbing => (-ss.scale_increment(x1, l1, a)?, 0.0),
                        Closure::NoFlux => (f64::INFINITY, -ss.speed_mass(mid, l_mid, a)?),
                    };
                    Ok((ds, left_half, right_half))
                } else {
                    let la = log_scale[i - 1];
                    let l_mid = la + twice_drift_integral(q, a, mid)?;
                    let left_half = ss.speed_mass(a, la, mid)?;
                    let (ds, right_half) = if i == n && right == Closure::NoFlux {
                        (f64::INFINITY, ss.speed_mass(mid, l_mid, b)?)
                    } else if i == n {
                        (ss.scale_increment(a, la, b)?, 0.0)
                    } else {
                        (ss.scale_increment(a, la, b)?, ss.speed_mass(mid, l_mid, b)?)
                    };
                    Ok((ds, left_half, right_half))
                }
            })
            .collect::<Result<_>>()?;

        let scale_steps: Vec<f64> = segments.iter().map(|s| s.0).collect();
        let mut cellmass: Vec<f64> = (1..=n).map(|j| segments[j - 1].2 + segments[j].1).collect();
        if left == Closure::NoFlux {
            cellmass[0] += segments[0].1;
        }
        if right == Closure::NoFlux {
            cellmass[n - 1] += segments[n].2;
        }
        if let Some(bad) = cellmass.iter().position(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(DiffusionError::Spectral(
                crate::spectral::SpectralError::NonPositiveMass {
                    state: bad,
                    value: cellmass[bad],
                },
            ));
        }
        Ok(Self {
            nodes,
            cellmass,
            scale_steps,
            log_scale,
            closures,
            classes: [None, None],
            truncated: [false; 2],
        })
    }

    /// Number of interior nodes.
    pub fn n(&self) -> usize {
        self.cellmass.len()
    }

    /// All nodes, end nodes included.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn interior(&self) -> &[f64] {
        &self.nodes[1..self.nodes.len() - 1]
    }

    pub fn cellmass(&self) -> &[f64] {
        &self.cellmass
    }

    pub fn scale_steps(&self) -> &[f64] {
        &self.scale_steps
    }

    /// `mdens` at the interior nodes.
    pub fn speed_density(&self) -> Vec<f64> {
        self.log_scale.iter().map(|l| 2.0 * (-l).exp()).collect()
    }

    /// `ℓ = 2∫_c^x q` at the interior nodes.
    pub fn log_scale(&self) -> &[f64] {
        &self.log_scale
    }

    pub fn closure(&self, side: Side) -> Closure {
        self.closures[side as usize]
    }

    pub fn class(&self, side: Side) -> Option<BoundaryClass> {
        self.classes[side as usize]
    }

    pub fn is_truncated(&self, side: Side) -> bool {
        self.truncated[side as usize]
    }

    pub fn span(&self) -> (f64, f64) {
        (self.nodes[0], *self.nodes.last().unwrap())
    }

    /// Boundaries of the dual cells, `n + 1` values; no-flux end cells
    /// reach the end nodes.
    pub fn dual_edges(&self) -> Vec<f64> {
        let n = self.n();
        let mut edges: Vec<f64> = (0..=n)
            .map(|i| 0.5 * (self.nodes[i] + self.nodes[i + 1]))
            .collect();
        if self.closures[0] == Closure::NoFlux {
            edges[0] = self.nodes[0];
        }
        if self.closures[1] == Closure::NoFlux {
            edges[n] = self.nodes[n + 1];
        }
        edges
    }

    /// Width of the dual cell around each interior node.
    pub fn dual_widths(&self) -> Vec<f64> {
        self.dual_edges().windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Index of the interior node nearest to `x`.
    pub fn nearest_state(&self, x: f64) -> usize {
        let inner = self.interior();
        let k = inner.partition_point(|&y| y < x);
        if k == 0 {
            0
        } else if k == inner.len() || x - inner[k - 1] <= inner[k] - x {
            k - 1
        } else {
            k
        }
    }
}

pub(crate) fn make_nodes(
    a: f64,
    b: f64,
    n: usize,
    refinement: Refinement,
    absorbing: [bool; 2],
) -> Vec<f64> {
    let cells = n + 1;
    let weights: Vec<f64> = match refinement {
        Refinement::Geometric { ratio } if ratio > 1.0 && (absorbing[0] || absorbing[1]) => {
            let cap = GRADING_SPAN.ln() / ratio.ln();
            (0..cells)
                .map(|j| {
                    let from_left = if absorbing[0] {
                        j as f64
                    } else {
                        f64::INFINITY
                    };
                    let from_right = if absorbing[1] {
                        (cells - 1 - j) as f64
                    } else {
                        f64::INFINITY
                    };
                    ratio.powf(from_left.min(from_right).min(cap))
                })
                .collect()
        }
        _ => vec![1.0; cells],
    };
    let total: f64 = weights.iter().sum();
    let mut nodes = Vec::with_capacity(n + 2);
    let mut acc = 0.0;
    nodes.push(a);
    for w in &weights[..cells - 1] {
        acc += w;
        nodes.push(a + (b - a) * acc / total);
    }
    nodes.push(b);
    nodes
}

/// Distance from the anchor toward an infinite endpoint beyond which the
/// speed measure carries less than `tol` of its total mass.
fn tail_cutoff_distance(
    d: &Diffusion1D,
    ss: &ScaleSpeed,
    side: Side,
    tol: f64,
    fallback: f64,
) -> Result<f64> {
    let c = d.anchor();
    let sign = if side == Side::Right { 1.0 } else { -1.0 };
    let at = |t: f64| c + sign * t;
    let q = d.drift();
    let breakpoint = |k: usize| 2f64.powi(k as i32) - 1.0;

    let mut ells = vec![0.0];
    let mut masses: Vec<f64> = Vec::new();
    let mut total = 0.0;
    let mut settled = false;
    for k in 0..MAX_TAIL_PIECES {
        let (t0, t1) = (breakpoint(k), breakpoint(k + 1));
        let mass = match ss.speed_mass(at(t0), ells[k], at(t1)) {
            Ok(m) => m.abs(),
            Err(DiffusionError::QuadratureFailure(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if !mass.is_finite() || total + mass > 1e250 {
            return Ok(fallback);
        }
        total += mass;
        masses.push(mass);
        let n = masses.len();
        if n >= 4
            && masses[n - 1] <= TAIL_NEGLIGIBLE * total
            && masses[n - 2] <= TAIL_NEGLIGIBLE * total
        {
            settled = true;
            break;
        }
        let step = twice_drift_integral(q, at(t0), at(t1))?;
        ells.push(ells[k] + step);
    }
    if !settled {
        return Ok(fallback);
    }

    let threshold = tol * total;
    let mut tail = 0.0;
    let mut k = masses.len();
    // smallest k with Σ_{j≥k} mass_j < threshold
    while k > 0 && tail + masses[k - 1] < threshold {
        tail += masses[k - 1];
        k -= 1;
    }
    if k == 0 {
        return Ok(0.0);
    }
    // the cutoff lies in piece k−1 = [t_{k−1}, t_k]
    let (t0, t1) = (breakpoint(k - 1), breakpoint(k));
    let tail_from = |t: f64| -> Result<f64> {
        let ell = ells[k - 1] + twice_drift_integral(q, at(t0), at(t))?;
        Ok(tail + ss.speed_mass(at(t), ell, at(t1))?.abs())
    };
    let (mut lo, mut hi) = (t0, t1);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if tail_from(mid)? < threshold {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-10 * hi.max(1.0) {
            break;
        }
    }
    Ok(hi)
}
