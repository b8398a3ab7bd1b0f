use nalgebra::DMatrix;
use serde::Serialize;

use super::{
    classify_boundary, is_class_t, BoundaryClass, Closure, Diffusion1D, DiffusionError, Grid,
    GridSpec, Result, Side,
};
use crate::spectral::{
    indicator, principal_eigenpair, resolvent, validate_generator, QsdVector, ReversibleGenerator,
};

/// Finite-volume generator: `Q_{i,i±1} = 1/(cellmass_i·Δs_{i±½})`, killing
/// `V(x_i)` plus the flux through absorbing end nodes.
pub fn discretize(d: &Diffusion1D, grid: &Grid) -> Result<ReversibleGenerator> {
    let (a, b) = grid.span();
    for (side, end) in [(Side::Left, a), (Side::Right, b)] {
        if grid.closure(side) == Closure::Absorbing && end == d.endpoint(side) {
            let class = match grid.class(side) {
                Some(c) => c,
                None => classify_boundary(d, side)?.class,
            };
            if class == BoundaryClass::Entrance {
                return Err(DiffusionError::InvalidBoundaryClosure { side });
            }
        }
    }
    let n = grid.n();
    let m = grid.cellmass();
    let ds = grid.scale_steps();
    let x = grid.interior();
    let mut q = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut out = 0.0;
        if i > 0 {
            q[(i, i - 1)] = 1.0 / (m[i] * ds[i]);
            out += q[(i, i - 1)];
        } else if grid.closure(Side::Left) == Closure::Absorbing {
            out += 1.0 / (m[i] * ds[0]);
        }
        if i + 1 < n {
            q[(i, i + 1)] = 1.0 / (m[i] * ds[i + 1]);
            out += q[(i, i + 1)];
        } else if grid.closure(Side::Right) == Closure::Absorbing {
            out += 1.0 / (m[i] * ds[n]);
        }
        q[(i, i)] = -out - d.killing().eval(x[i]);
    }
    Ok(validate_generator(q, m.to_vec())?)
}

#[derive(Debug, Clone, Serialize)]
pub struct TightnessProfile {
    /// `(I − Q)⁻¹ 1_{Kᶜ}`.
    pub values: Vec<f64>,
    pub sup: f64,
}

/// Resolvent of the complement of `k`; adding states to `k` can only lower it.
pub fn tightness_profile(g: &ReversibleGenerator, k: &[usize]) -> Result<TightnessProfile> {
    let outside: Vec<f64> = indicator(g.n(), k)?.into_iter().map(|v| 1.0 - v).collect();
    let values = resolvent(g, 1.0, &outside)?;
    let sup = values.iter().fold(0.0_f64, |a, &v| a.max(v));
    Ok(TightnessProfile { values, sup })
}

/// States whose nodes lie in `[a + ε(b − a), b − ε(b − a)]` for the grid span `(a, b)`.
pub fn tightness_set(grid: &Grid, eps: f64) -> Vec<usize> {
    let (a, b) = grid.span();
    let (lo, hi) = (a + eps * (b - a), b - eps * (b - a));
    grid.interior()
        .iter()
        .enumerate()
        .filter(|(_, &x)| x >= lo && x <= hi)
        .map(|(i, _)| i)
        .collect()
}

/// QSD of a discretized diffusion, with its density against Lebesgue measure.
#[derive(Debug, Clone, Serialize)]
pub struct GridDensity {
    pub x: Vec<f64>,
    pub density: Vec<f64>,
    /// Dual-cell boundaries around `x`.
    pub edges: Vec<f64>,
    pub widths: Vec<f64>,
    pub qsd: QsdVector,
    pub lambda0: f64,
    pub phi0: Vec<f64>,
}

impl GridDensity {
    /// `Σ |density_i − f(x_i)|·width_i`.
    pub fn l1_distance(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.x
            .iter()
            .zip(&self.density)
            .zip(&self.widths)
            .map(|((&x, &p), &w)| (p - f(x)).abs() * w)
            .sum()
    }

    /// Piecewise-linear interpolation, constant beyond the outer nodes.
    pub fn interpolate(&self, x: f64) -> f64 {
        let k = self.x.partition_point(|&y| y < x);
        if k == 0 {
            return self.density[0];
        }
        if k == self.x.len() {
            return self.density[k - 1];
        }
        let (x0, x1) = (self.x[k - 1], self.x[k]);
        let t = (x - x0) / (x1 - x0);
        (1.0 - t) * self.density[k - 1] + t * self.density[k]
    }

    /// L¹ distance to another density, on this density's nodes.
    pub fn l1_distance_to(&self, other: &GridDensity) -> f64 {
        self.l1_distance(|x| other.interpolate(x))
    }
}

/// `ν = qsd(discretize(d, grid))` and `φ₀·mdens` normalized at the nodes.
pub fn qsd_density(d: &Diffusion1D, grid: &Grid) -> Result<GridDensity> {
    let report = is_class_t(d)?;
    if !report.class_t {
        return Err(DiffusionError::NotClassT);
    }
    if !report.explosive {
        return Err(DiffusionError::NotExplosive);
    }
    let g = discretize(d, grid)?;
    let eig = principal_eigenpair(&g)?;
    let m = grid.cellmass();
    let norm: f64 = eig.phi0.iter().zip(m).map(|(p, w)| p * w).sum();
    let qsd = QsdVector::from_weights(eig.phi0.iter().zip(m).map(|(p, w)| p * w).collect())?;
    let density = eig
        .phi0
        .iter()
        .zip(grid.speed_density())
        .map(|(p, md)| p * md / norm)
        .collect();
    Ok(GridDensity {
        x: grid.interior().to_vec(),
        density,
        edges: grid.dual_edges(),
        widths: grid.dual_widths(),
        qsd,
        lambda0: eig.lambda0,
        phi0: eig.phi0,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RefinementStudy {
    pub cells: Vec<usize>,
    pub lambda0: Vec<f64>,
    /// `log₂` of successive `λ₀` difference ratios.
    pub observed_order: Option<f64>,
    /// Richardson extrapolation of `λ₀` with the observed order.
    pub extrapolated: Option<f64>,
    /// L¹ distance between densities at consecutive levels.
    pub density_differences: Vec<f64>,
    /// Order-h² prediction of each difference from the previous one.
    pub density_predictions: Vec<f64>,
    /// Every difference is within 4× its prediction.
    pub density_consistent: bool,
}

/// Densities and `λ₀` on `levels` grids with `cells + 1` doubled each time.
pub fn refinement_study(
    d: &Diffusion1D,
    spec: &GridSpec,
    levels: usize,
) -> Result<RefinementStudy> {
    let mut cells = Vec::new();
    let mut lambda0 = Vec::new();
    let mut densities = Vec::new();
    for level in 0..levels.max(2) {
        let n = (spec.cells + 1) * (1 << level) - 1;
        let grid = Grid::build(d, &GridSpec { cells: n, ..*spec })?;
        let dens = qsd_density(d, &grid)?;
        cells.push(n);
        lambda0.push(dens.lambda0);
        densities.push(dens);
    }
    let k = lambda0.len();
    let (observed_order, extrapolated) = if k >= 3 {
        let r = (lambda0[k - 3] - lambda0[k - 2]) / (lambda0[k - 2] - lambda0[k - 1]);
        let p = r.abs().log2();
        let ext = lambda0[k - 1] + (lambda0[k - 1] - lambda0[k - 2]) / (2f64.powf(p) - 1.0);
        (
            Some(p).filter(|p| p.is_finite()),
            Some(ext).filter(|e| e.is_finite()),
        )
    } else {
        (None, None)
    };
    let density_differences: Vec<f64> = densities
        .windows(2)
        .map(|w| w[1].l1_distance_to(&w[0]))
        .collect();
    let density_predictions: Vec<f64> =
        density_differences.windows(2).map(|w| w[0] / 4.0).collect();
    let density_consistent = density_differences[1..]
        .iter()
        .zip(&density_predictions)
        .all(|(dd, p)| *dd <= 4.0 * p);
    Ok(RefinementStudy {
        cells,
        lambda0,
        observed_order,
        extrapolated,
        density_differences,
        density_predictions,
        density_consistent,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TruncationReport {
    pub span: (f64, f64),
    pub doubled_span: (f64, f64),
    pub lambda0: f64,
    pub lambda0_doubled: f64,
    /// `|λ₀(doubled) − λ₀| / λ₀`, zero when nothing was truncated.
    pub relative_change: f64,
}

/// Compares `λ₀` with every cutoff distance doubled, at equal resolution.
pub fn truncation_sensitivity(d: &Diffusion1D, spec: &GridSpec) -> Result<TruncationReport> {
    let grid = Grid::build(d, spec)?;
    let lambda0 = principal_eigenpair(&discretize(d, &grid)?)?.lambda0;
    let span = grid.span();
    if !grid.is_truncated(Side::Left) && !grid.is_truncated(Side::Right) {
        return Ok(TruncationReport {
            span,
            doubled_span: span,
            lambda0,
            lambda0_doubled: lambda0,
            relative_change: 0.0,
        });
    }
    let wide_spec = GridSpec {
        cutoff_scale: 2.0 * spec.cutoff_scale,
        ..*spec
    };
    let probe = Grid::build(
        d,
        &GridSpec {
            cells: 8,
            ..wide_spec
        },
    )?;
    let (wa, wb) = probe.span();
    let stretch = (wb - wa) / (span.1 - span.0);
    let cells = ((spec.cells + 1) as f64 * stretch).round() as usize - 1;
    let wide = Grid::build(d, &GridSpec { cells, ..wide_spec })?;
    let lambda0_doubled = principal_eigenpair(&discretize(d, &wide)?)?.lambda0;
    Ok(TruncationReport {
        span,
        doubled_span: wide.span(),
        lambda0,
        lambda0_doubled,
        relative_change: (lambda0_doubled - lambda0).abs() / lambda0.abs(),
    })
}
