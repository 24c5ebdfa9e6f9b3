use thiserror::Error;

use crate::beam::BeamError;
use crate::calibration::CalibrationError;
use crate::modem::ModemError;
use crate::noise::NoiseError;
use crate::optics::OpticsError;

/// Crate-level error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Beam(#[from] BeamError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Modem(#[from] ModemError),
    #[error("invalid scenario:\n{}", crate::link::format_diagnostics(.0))]
    Invalid(Vec<crate::link::Diagnostic>),
    #[error("inconsistent results: {0}")]
    Consistency(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
