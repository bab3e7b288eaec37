use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geometry: receiver and satellite are {distance:.3} m apart")]
    DegenerateGeometry { distance: f64 },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("at least 4 measurements are required, found {found}")]
    InsufficientMeasurements { found: usize },
    #[error("normal matrix is singular (condition number {condition:e})")]
    SingularNormalMatrix { condition: f64 },
    #[error("scaled geometry has a trivial kernel; no regulating weights exist")]
    InsufficientRedundancy,
    #[error("uniform weights are nearly orthogonal to the kernel (projection norm {norm:e})")]
    DegenerateProjection { norm: f64 },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training data carries no truth errors")]
    NoLabels,
    #[error("elevation weighting requires a fitted variance model")]
    MissingFit,
    #[error("empty input")]
    EmptyInput,
    #[error("method requires a trained model")]
    ModelMissing,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::ModelMissing | Error::MissingFit => 2,
            Error::Data(_)
            | Error::Io { .. }
            | Error::Json { .. }
            | Error::NoLabels
            | Error::EmptyInput
            | Error::LengthMismatch { .. }
            | Error::ShapeMismatch(_) => 3,
            Error::DegenerateGeometry { .. }
            | Error::InsufficientMeasurements { .. }
            | Error::SingularNormalMatrix { .. }
            | Error::InsufficientRedundancy
            | Error::DegenerateProjection { .. }
            | Error::NumericalFailure(_) => 4,
        }
    }
}
