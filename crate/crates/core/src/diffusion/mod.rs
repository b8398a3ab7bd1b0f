//! One-dimensional killed diffusions `dX = dB − q(X)dt` with killing rate `V`.
//!
//! The generator is `½u'' − qu' − Vu`. Without killing it is symmetric with
//! respect to the speed measure `m(dx) = 2e^{−ℓ(x)}dx`, where
//! `ℓ(x) = 2∫_c^x q` and the scale density is `s'(x) = e^{ℓ(x)}`.

mod classify;
mod discretize;
mod grid;
mod scale;

pub use classify::{
    classify_boundary, is_class_t, BoundaryClass, ClassTReport, EndpointReport, FellerIntegral,
    Finiteness,
};
pub use discretize::{
    discretize, qsd_density, refinement_study, tightness_profile, tightness_set,
    truncation_sensitivity, GridDensity, RefinementStudy, TightnessProfile, TruncationReport,
};
pub use grid::{Closure, Grid, GridSpec, Refinement};
pub use scale::{scale_speed_from_drift, ScaleSpeed};

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, ExprError};
use crate::quad::QuadError;
use crate::spectral::SpectralError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error("invalid interval ({left}, {right})")]
    InvalidInterval { left: f64, right: f64 },
    #[error("anchor {anchor} is not an interior point of the interval")]
    AnchorOutside { anchor: f64 },
    #[error("{which} coefficient: {source}")]
    Expression {
        which: &'static str,
        source: ExprError,
    },
    #[error("killing rate is negative ({value}) at x = {x}")]
    NegativeKilling { x: f64, value: f64 },
    #[error("quadrature failed: {0}")]
    QuadratureFailure(QuadError),
    #[error("{side} endpoint: Feller integrals inconclusive (I partial {i_partial:e}, J partial {j_partial:e})")]
    QuadratureInconclusive {
        side: Side,
        i_partial: f64,
        j_partial: f64,
    },
    #[error("grid has {cells} cells; at least {min} are required")]
    GridTooCoarse { cells: usize, min: usize },
    #[error("grid nodes must be strictly increasing")]
    GridNotIncreasing,
    #[error("absorbing closure requested at the {side} endpoint, which is an entrance boundary")]
    InvalidBoundaryClosure { side: Side },
    #[error("diffusion is not in class (T): natural boundary present")]
    NotClassT,
    #[error("diffusion is not explosive: no absorbing boundary and no killing")]
    NotExplosive,
    #[error("generator identity check failed: residual {residual:e} at x = {x}")]
    GeneratorIdentity { x: f64, residual: f64 },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

impl DiffusionError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::InvalidInterval { .. } => "InvalidInterval",
            Self::AnchorOutside { .. } => "AnchorOutside",
            Self::Expression { .. } => "Expression",
            Self::NegativeKilling { .. } => "NegativeKilling",
            Self::QuadratureFailure(_) => "QuadratureFailure",
            Self::QuadratureInconclusive { .. } => "QuadratureInconclusive",
            Self::GridTooCoarse { .. } => "GridTooCoarse",
            Self::GridNotIncreasing => "GridNotIncreasing",
            Self::InvalidBoundaryClosure { .. } => "InvalidBoundaryClosure",
            Self::NotClassT => "NotClassT",
            Self::NotExplosive => "NotExplosive",
            Self::GeneratorIdentity { .. } => "GeneratorIdentity",
            Self::Spectral(e) => e.code(),
        }
    }
}

impl From<QuadError> for DiffusionError {
    fn from(e: QuadError) -> Self {
        Self::QuadratureFailure(e)
    }
}

pub type Result<T> = std::result::Result<T, DiffusionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

/// A scalar coefficient function with a printable label.
#[derive(Clone)]
pub struct Coefficient {
    label: String,
    constant: Option<f64>,
    func: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Coefficient({})", self.label)
    }
}

impl Coefficient {
    pub fn parse(src: &str) -> std::result::Result<Self, ExprError> {
        let expr = Expr::parse(src)?;
        let constant = expr.is_constant().then(|| expr.eval(0.0));
        Ok(Self {
            label: src.trim().to_string(),
            constant,
            func: Arc::new(move |x| expr.eval(x)),
        })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            label: format!("{value}"),
            constant: Some(value),
            func: Arc::new(move |_| value),
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn from_fn(
        label: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            constant: None,
            func: Arc::new(f),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.func)(x)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn as_constant(&self) -> Option<f64> {
        self.constant
    }
}

/// A killed diffusion on `(left, right)`; endpoints may be infinite.
#[derive(Debug, Clone)]
pub struct Diffusion1D {
    left: f64,
    right: f64,
    drift: Coefficient,
    killing: Coefficient,
    anchor: f64,
}

/// Number of interior points used to sanity-check coefficients.
const PROBES: usize = 64;

impl Diffusion1D {
    pub fn new(
        left: f64,
        right: f64,
        drift: Coefficient,
        killing: Coefficient,
        anchor: f64,
    ) -> Result<Self> {
        if !(left < right) || left == f64::INFINITY || right == f64::NEG_INFINITY {
            return Err(DiffusionError::InvalidInterval { left, right });
        }
        if !(anchor > left && anchor < right) || !anchor.is_finite() {
            return Err(DiffusionError::AnchorOutside { anchor });
        }
        let d = Self {
            left,
            right,
            drift,
            killing,
            anchor,
        };
        for x in d.probe_points(PROBES) {
            let q = d.drift.eval(x);
            if !q.is_finite() {
                return Err(DiffusionError::Expression {
                    which: "drift",
                    source: ExprError::NotFinite {
                        expr: d.drift.label.clone(),
                        x,
                    },
                });
            }
            let v = d.killing.eval(x);
            if !v.is_finite() {
                return Err(DiffusionError::Expression {
                    which: "killing",
                    source: ExprError::NotFinite {
                        expr: d.killing.label.clone(),
                        x,
                    },
                });
            }
            if v < 0.0 {
                return Err(DiffusionError::NegativeKilling { x, value: v });
            }
        }
        Ok(d)
    }

    /// Brownian motion with drift `q ≡ 0` and no killing.
    pub fn brownian(left: f64, right: f64, anchor: f64) -> Result<Self> {
        Self::new(
            left,
            right,
            Coefficient::zero(),
            Coefficient::zero(),
            anchor,
        )
    }

    pub fn from_json(json: &DiffusionJson) -> Result<Self> {
        let parse = |which: &'static str, src: &str| {
            Coefficient::parse(src).map_err(|source| DiffusionError::Expression { which, source })
        };
        let drift = parse("drift", &json.drift)?;
        let killing = match &json.killing {
            Some(src) => parse("killing", src)?,
            None => Coefficient::zero(),
        };
        Self::new(
            json.interval[0].value(),
            json.interval[1].value(),
            drift,
            killing,
            json.anchor,
        )
    }

    pub fn with_killing(&self, killing: Coefficient) -> Result<Self> {
        Self::new(
            self.left,
            self.right,
            self.drift.clone(),
            killing,
            self.anchor,
        )
    }

    pub fn left(&self) -> f64 {
        self.left
    }

    pub fn right(&self) -> f64 {
        self.right
    }

    pub fn endpoint(&self, side: Side) -> f64 {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
        }
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    pub fn drift(&self) -> &Coefficient {
        &self.drift
    }

    pub fn killing(&self) -> &Coefficient {
        &self.killing
    }

    /// Interior points spread over the interval; infinite ends are reached
    /// through a rational map centred on the anchor.
    pub fn probe_points(&self, count: usize) -> Vec<f64> {
        (0..count)
            .map(|i| self.from_unit((i as f64 + 0.5) / count as f64))
            .collect()
    }

    fn from_unit(&self, u: f64) -> f64 {
        let (a, b, c) = (self.left, self.right, self.anchor);
        match (a.is_finite(), b.is_finite()) {
            (true, true) => a + u * (b - a),
            (true, false) => a + (c - a) * u / (1.0 - u),
            (false, true) => b - (b - c) * (1.0 - u) / u,
            (false, false) => c + (std::f64::consts::PI * (u - 0.5)).tan(),
        }
    }

    /// Whether the killing rate is positive somewhere on the probe set.
    pub fn has_killing(&self) -> bool {
        match self.killing.as_constant() {
            Some(k) => k > 0.0,
            None => self
                .probe_points(PROBES)
                .iter()
                .any(|&x| self.killing.eval(x) > 0.0),
        }
    }

    pub fn to_json(&self) -> DiffusionJson {
        DiffusionJson {
            interval: [
                Endpoint::from_value(self.left),
                Endpoint::from_value(self.right),
            ],
            drift: self.drift.label.clone(),
            killing: Some(self.killing.label.clone()),
            anchor: self.anchor,
        }
    }
}

/// Interval endpoint in JSON: a number or one of the strings `"inf"`, `"-inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Endpoint {
    Finite(f64),
    Named(InfiniteEndpoint),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InfiniteEndpoint {
    #[serde(rename = "inf", alias = "+inf")]
    PosInf,
    #[serde(rename = "-inf")]
    NegInf,
}

impl Endpoint {
    pub fn value(self) -> f64 {
        match self {
            Endpoint::Finite(v) => v,
            Endpoint::Named(InfiniteEndpoint::PosInf) => f64::INFINITY,
            Endpoint::Named(InfiniteEndpoint::NegInf) => f64::NEG_INFINITY,
        }
    }

    pub fn from_value(v: f64) -> Self {
        if v == f64::INFINITY {
            Endpoint::Named(InfiniteEndpoint::PosInf)
        } else if v == f64::NEG_INFINITY {
            Endpoint::Named(InfiniteEndpoint::NegInf)
        } else {
            Endpoint::Finite(v)
        }
    }
}

/// On-disk diffusion description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionJson {
    pub interval: [Endpoint; 2],
    pub drift: String,
    #[serde(default)]
    pub killing: Option<String>,
    pub anchor: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_with_infinite_endpoint() {
        let j: DiffusionJson = serde_json::from_str(
            r#"{"interval": [0, "inf"], "drift": "0", "killing": "0", "anchor": 1}"#,
        )
        .unwrap();
        let d = Diffusion1D::from_json(&j).unwrap();
        assert_eq!(d.right(), f64::INFINITY);
        assert_eq!(d.left(), 0.0);
        let back = serde_json::to_string(&d.to_json()).unwrap();
        assert!(back.contains("\"inf\""));
    }

    #[test]
    fn rejects_bad_inputs() {
        let zero = Coefficient::zero;
        assert_eq!(
            Diffusion1D::new(1.0, 0.0, zero(), zero(), 0.5)
                .unwrap_err()
                .code(),
            "InvalidInterval"
        );
        assert_eq!(
            Diffusion1D::new(0.0, 1.0, zero(), zero(), 2.0)
                .unwrap_err()
                .code(),
            "AnchorOutside"
        );
        let neg = Coefficient::parse("-1").unwrap();
        assert_eq!(
            Diffusion1D::new(0.0, 1.0, zero(), neg, 0.5)
                .unwrap_err()
                .code(),
            "NegativeKilling"
        );
        let singular = Coefficient::parse("1/(x - 0.5078125)").unwrap();
        assert_eq!(
            Diffusion1D::new(0.0, 1.0, singular, zero(), 0.3)
                .unwrap_err()
                .code(),
            "Expression"
        );
    }

    #[test]
    fn probes_cover_infinite_intervals() {
        let d = Diffusion1D::brownian(f64::NEG_INFINITY, f64::INFINITY, 0.0).unwrap();
        let p = d.probe_points(8);
        assert!(p.windows(2).all(|w| w[0] < w[1]));
        assert!(p[0] < -1.0 && p[7] > 1.0);
    }
}
