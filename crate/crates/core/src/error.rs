//! Crate-wide error type. Wire-protocol failures carry byte offsets and live
//! in [`crate::wire::WireError`]; everything else is aggregated here.

use thiserror::Error;

use crate::wire::WireError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller wired two components together with incompatible shapes or
    /// parameters (head width vs channels, mismatched resolutions, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Two grids that must agree elementwise do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A memory-bank update tried to move backwards in time.
    #[error("frame ordering: update frame {new} does not advance past stored frame {stored}")]
    FrameOrder { stored: u32, new: u32 },

    /// Scenario generation could not satisfy the requested configuration.
    #[error("scenario generation: {0}")]
    Generation(String),

    #[error(transparent)]
    Wire(#[from] WireError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
