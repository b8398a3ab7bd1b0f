//! Problem configuration files and tolerance profiles.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use qsd_core::diffusion::{Diffusion1D, DiffusionJson, GridSpec, Refinement};
use qsd_core::spectral::{GeneratorJson, ReversibleGenerator};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Chain,
    Diffusion,
}

/// Inline model description or a path to a JSON file holding one, resolved
/// relative to the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload {
    File(PathBuf),
    Inline(Value),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: Kind,
    pub payload: Payload,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub reference: Option<Reference>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefinementKind {
    Uniform,
    Geometric,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Interior nodes (states).
    pub n: usize,
    pub refinement: RefinementKind,
    pub ratio: f64,
    pub tail_mass: f64,
    pub fallback_cutoff: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        let spec = GridSpec::default();
        Self {
            n: spec.cells,
            refinement: RefinementKind::Geometric,
            ratio: 1.05,
            tail_mass: spec.tail_mass,
            fallback_cutoff: spec.fallback_cutoff,
        }
    }
}

impl GridConfig {
    pub fn spec(&self) -> GridSpec {
        GridSpec {
            cells: self.n,
            refinement: match self.refinement {
                RefinementKind::Uniform => Refinement::Uniform,
                RefinementKind::Geometric => Refinement::Geometric { ratio: self.ratio },
            },
            tail_mass: self.tail_mass,
            fallback_cutoff: self.fallback_cutoff,
            ..GridSpec::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub bridge_correction: bool,
    /// Starting point; a state index for chains. Defaults to the anchor or state 0.
    pub x0: Option<f64>,
    /// Horizon of the lifetime-moment ensemble; defaults to `12/λ₀`.
    pub horizon: Option<f64>,
    /// Yaglom observation times.
    pub times: Vec<f64>,
    pub bins: usize,
    /// Lifetime-moment exponent; defaults to `0.4·λ₀`.
    pub gamma: Option<f64>,
    pub occupation_horizon: f64,
    pub occupation_burn_in: f64,
    pub occupation_every: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            n_paths: 10_000,
            seed: 0,
            bridge_correction: true,
            x0: None,
            horizon: None,
            times: vec![0.25, 0.5, 1.0, 2.0],
            bins: 20,
            gamma: None,
            occupation_horizon: 1e4,
            occupation_burn_in: 100.0,
            occupation_every: 2.5,
        }
    }
}

/// Known answers to compare against.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reference {
    #[serde(default)]
    pub lambda0: Option<f64>,
    /// QSD density as an expression in `x`.
    #[serde(default)]
    pub density: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ToleranceProfile {
    #[default]
    Default,
    Strict,
}

/// Every threshold a report can be judged against.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Tolerances {
    pub eigen_residual: f64,
    pub qsd_mass: f64,
    pub invariance: f64,
    pub survival: f64,
    pub uniqueness: f64,
    /// Relative to the largest rate of the generator.
    pub doob_structure: f64,
    pub intertwining: f64,
    pub ergodic_slack: f64,
    pub ergodic_floor: f64,
    pub lambda0: f64,
    pub density_l1: f64,
    pub truncation: f64,
    pub chi2_level: f64,
    pub z_max: f64,
}

impl Tolerances {
    pub fn for_profile(p: ToleranceProfile) -> Self {
        match p {
            ToleranceProfile::Default => Self {
                eigen_residual: 1e-10,
                qsd_mass: 1e-12,
                invariance: 1e-10,
                survival: 1e-10,
                uniqueness: 1e-10,
                doob_structure: 1e-12,
                intertwining: 1e-9,
                ergodic_slack: 10.0,
                ergodic_floor: 1e-9,
                lambda0: 1e-3,
                density_l1: 1e-3,
                truncation: 1e-3,
                chi2_level: 0.01,
                z_max: 3.0,
            },
            ToleranceProfile::Strict => Self {
                eigen_residual: 1e-12,
                qsd_mass: 1e-13,
                invariance: 1e-12,
                survival: 1e-12,
                uniqueness: 1e-12,
                doob_structure: 1e-13,
                intertwining: 1e-11,
                ergodic_slack: 2.0,
                ergodic_floor: 1e-11,
                lambda0: 1e-4,
                density_l1: 1e-4,
                truncation: 1e-4,
                chi2_level: 0.05,
                z_max: 2.0,
            },
        }
    }
}

/// The model a config describes.
#[derive(Debug, Clone)]
pub enum Model {
    Chain(ReversibleGenerator),
    Diffusion(Diffusion1D),
}

/// A parsed config with its raw bytes and resolved payload.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ProblemConfig,
    pub raw: Vec<u8>,
    pub payload: Value,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = std::fs::read(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let config: ProblemConfig = serde_json::from_slice(&raw)
            .map_err(|e| CliError::ConfigParse(format!("{}: {e}", path.display())))?;
        let payload = match &config.payload {
            Payload::Inline(v) => v.clone(),
            Payload::File(p) => {
                let full = path.parent().unwrap_or(Path::new(".")).join(p);
                let bytes = std::fs::read(&full).map_err(|e| CliError::Io {
                    path: full.clone(),
                    message: e.to_string(),
                })?;
                serde_json::from_slice(&bytes)
                    .map_err(|e| CliError::ConfigParse(format!("{}: {e}", full.display())))?
            }
        };
        let loaded = Self {
            config,
            raw,
            payload,
        };
        loaded.validate()?;
        Ok(loaded)
    }

    fn validate(&self) -> Result<(), CliError> {
        let (g, mc) = (&self.config.grid, &self.config.mc);
        let bad = |what: &str| Err(CliError::ConfigParse(format!("invalid {what}")));
        if g.n < 8 {
            return bad("grid.n (at least 8 states)");
        }
        if !(g.ratio >= 1.0)
            || !(g.tail_mass > 0.0 && g.tail_mass < 1.0)
            || !(g.fallback_cutoff > 0.0)
        {
            return bad("grid settings");
        }
        if !(mc.dt > 0.0) || mc.n_paths == 0 || mc.bins == 0 {
            return bad("mc.dt, mc.n_paths or mc.bins");
        }
        if mc.times.iter().any(|t| !(*t >= 0.0)) || mc.times.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("mc.times (nonnegative, increasing)");
        }
        if !(mc.occupation_every > 0.0
            && mc.occupation_burn_in >= 0.0
            && mc.occupation_horizon > mc.occupation_burn_in)
        {
            return bad("occupation settings");
        }
        Ok(())
    }

    pub fn model(&self) -> Result<Model, CliError> {
        match self.config.kind {
            Kind::Chain => {
                let json: GeneratorJson = serde_json::from_value(self.payload.clone())
                    .map_err(|e| CliError::ConfigParse(format!("chain payload: {e}")))?;
                Ok(Model::Chain(
                    ReversibleGenerator::from_json(&json).map_err(CliError::from_spectral)?,
                ))
            }
            Kind::Diffusion => {
                let json: DiffusionJson = serde_json::from_value(self.payload.clone())
                    .map_err(|e| CliError::ConfigParse(format!("diffusion payload: {e}")))?;
                Ok(Model::Diffusion(
                    Diffusion1D::from_json(&json).map_err(CliError::from_diffusion)?,
                ))
            }
        }
    }
}
