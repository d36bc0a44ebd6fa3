//! Crate-wide error type and process exit-code mapping.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SwotError>;

#[derive(Debug, Error)]
pub enum SwotError {
    /// Invalid argument to a geometry / numeric constructor.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// Configuration file or experiment config problem.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset, file-format or grid-mismatch problem.
    #[error("data error: {0}")]
    Data(String),

    /// Numeric failure (non-finite values, divergence, degenerate input).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A sample point outside the field bounding box.
    #[error("point ({x} km, {y} km) outside field bounds [0, {max_x}] x [0, {max_y}] km")]
    OutOfBounds { x: f64, y: f64, max_x: f64, max_y: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SwotError {
    /// Process exit code: 0 ok, 1 usage, 2 config, 3 data, 4 numeric failure.
    /// Usage errors (1) are produced by the argument parser, not this type.
    pub fn exit_code(&self) -> i32 {
        match self {
            SwotError::InvalidArg(_) | SwotError::Config(_) => 2,
            SwotError::Data(_) | SwotError::OutOfBounds { .. } => 3,
            SwotError::Io(_) | SwotError::Json(_) => 3,
            SwotError::Numeric(_) => 4,
        }
    }
}
