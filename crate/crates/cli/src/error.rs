use std::path::PathBuf;

use qsd_core::diffusion::DiffusionError;
use qsd_core::montecarlo::MonteCarloError;
use qsd_core::spectral::SpectralError;
use thiserror::Error;

/// Module error codes caused by bad input rather than a failed contract.
const INPUT_CODES: &[&str] = &[
    "InvalidInterval",
    "AnchorOutside",
    "Expression",
    "NegativeKilling",
    "GridTooCoarse",
    "GridNotIncreasing",
    "InvalidBoundaryClosure",
    "Dimension",
    "NonPositiveMass",
    "NonSymmetric",
    "NegativeRate",
    "PositiveRowSum",
    "Reducible",
    "InvalidArgument",
    "InvalidConfig",
    "InitOutsideDomain",
    "StepTooLarge",
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    ConfigParse(String),
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("unknown subcommand '{0}'")]
    UnknownSubcommand(String),
    #[error("{op} does not apply to a {kind} model")]
    NotApplicable {
        op: &'static str,
        kind: &'static str,
    },
    #[error("{message}")]
    Module { code: &'static str, message: String },
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::ConfigParse(_) => "ConfigParse",
            Self::Io { .. } => "Io",
            Self::UnknownSubcommand(_) => "UnknownSubcommand",
            Self::NotApplicable { .. } => "NotApplicable",
            Self::Module { code, .. } => code,
        }
    }

    /// Input errors exit with 1, contract violations with 2.
    pub fn is_input(&self) -> bool {
        match self {
            Self::Module { code, .. } => INPUT_CODES.contains(code),
            _ => true,
        }
    }

    pub fn from_spectral(e: SpectralError) -> Self {
        Self::Module {
            code: e.code(),
            message: e.to_string(),
        }
    }

    pub fn from_diffusion(e: DiffusionError) -> Self {
        Self::Module {
            code: e.code(),
            message: e.to_string(),
        }
    }
}

impl From<SpectralError> for CliError {
    fn from(e: SpectralError) -> Self {
        Self::from_spectral(e)
    }
}

impl From<DiffusionError> for CliError {
    fn from(e: DiffusionError) -> Self {
        Self::from_diffusion(e)
    }
}

impl From<MonteCarloError> for CliError {
    fn from(e: MonteCarloError) -> Self {
        Self::Module {
            code: e.code(),
            message: e.to_string(),
        }
    }
}
