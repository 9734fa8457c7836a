//! Subcommands of the `camdepth` binary.
//!
//! Exit codes: 0 success, 1 input/output failure, 2 invalid spec or
//! config, 3 tracking lost, 4 numerical failure.

pub mod commands;
pub mod config;
mod manifest;

use camdepth::cvd::CvdError;
use camdepth::io::IoError;
use camdepth::metrics::MetricsError;
use camdepth::pipeline::PipelineError;
use camdepth::synth::SynthError;
use thiserror::Error;

pub use config::RunConfig;
pub use manifest::{sha256_hex, RunManifest, MANIFEST_FILE};

pub const EXIT_OK: u8 = 0;
pub const EXIT_IO: u8 = 1;
pub const EXIT_SPEC: u8 = 2;
pub const EXIT_TRACKING: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Spec(#[from] SynthError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("tracking lost: {0}")]
    Tracking(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Spec(_) => EXIT_SPEC,
            CliError::Io(_) | CliError::Other(_) => EXIT_IO,
            CliError::Tracking(_) => EXIT_TRACKING,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Io(e) => CliError::Io(e),
            PipelineError::InsufficientMotion { .. } | PipelineError::NoNeighborKeyframe(_) => {
                CliError::Tracking(e.to_string())
            }
            PipelineError::DegenerateScale(_) | PipelineError::Ba(_) => {
                CliError::Numeric(e.to_string())
            }
            PipelineError::Inconsistent(_) | PipelineError::Graph(_) => {
                CliError::Other(e.to_string())
            }
        }
    }
}

impl From<CvdError> for CliError {
    fn from(e: CvdError) -> Self {
        match e {
            CvdError::Pipeline(e) => e.into(),
            CvdError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            CvdError::Inconsistent(_) => CliError::Other(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Other(e.to_string())
    }
}
