//! Error classes mapped to distinct process exit codes.

use std::fmt;

use zimed_core::comparators::ComparatorError;
use zimed_core::data::DataError;
use zimed_core::estimation::FitError;
use zimed_core::fiducial::FiducialError;
use zimed_core::sim::SimError;

#[derive(Debug)]
pub enum AppError {
    /// Bad flags, config, or argument combinations (exit 2).
    Usage(String),
    /// Invalid or unreadable input data (exit 3).
    Data(String),
    /// Model fitting or sampling failed to converge (exit 4).
    Convergence(String),
    /// Filesystem or serialization failure (exit 5).
    Io(String),
}

impl AppError {
    pub fn code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 2,
            AppError::Data(_) => 3,
            AppError::Convergence(_) => 4,
            AppError::Io(_) => 5,
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Usage(m) => write!(f, "usage error: {m}"),
            AppError::Data(m) => write!(f, "data error: {m}"),
            AppError::Convergence(m) => write!(f, "convergence error: {m}"),
            AppError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl From<DataError> for AppError {
    fn from(e: DataError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<FitError> for AppError {
    fn from(e: FitError) -> Self {
        AppError::Convergence(e.to_string())
    }
}

impl From<FiducialError> for AppError {
    fn from(e: FiducialError) -> Self {
        match e {
            FiducialError::KTooSmall { .. } | FiducialError::DegreesOfFreedomTooSmall { .. } => {
                AppError::Usage(e.to_string())
            }
            other => AppError::Convergence(other.to_string()),
        }
    }
}

impl From<ComparatorError> for AppError {
    fn from(e: ComparatorError) -> Self {
        match e {
            ComparatorError::TooFewReps { .. } => AppError::Usage(e.to_string()),
            other => AppError::Convergence(other.to_string()),
        }
    }
}

impl From<SimError> for AppError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::UnsupportedGenerator => AppError::Usage(e.to_string()),
            other => AppError::Convergence(other.to_string()),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Io(e.to_string())
    }
}

impl From<csv::Error> for AppError {
    fn from(e: csv::Error) -> Self {
        AppError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for AppError {
    fn from(e: serde_json::Error) -> Self {
        AppError::Io(e.to_string())
    }
}
