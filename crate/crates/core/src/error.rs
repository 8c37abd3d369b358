//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Sensor and source coincide; range-dependent quantities diverge at 0.
    #[error("degenerate geometry: sensor {sensor} coincides with source {source}")]
    DegenerateGeometry { sensor: usize, source: usize },

    #[error("domain error: {0}")]
    Domain(String),

    /// The steering matrix lost column rank at a frequency bin, e.g. two
    /// sources at identical positions.
    #[error("singular model at frequency bin {bin}")]
    SingularModel { bin: usize },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for data-dependent numerical failures as opposed to bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateGeometry { .. }
                | Error::Domain(_)
                | Error::SingularModel { .. }
                | Error::LinearSolve(_)
                | Error::Numerical(_)
        )
    }
}
