use std::io;

use thiserror::Error;

/// Errors raised anywhere in the explanation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate box: width {width}, height {height}")]
    DegenerateBox { width: f64, height: f64 },

    #[error("invalid box [{u_min}, {v_min}, {u_max}, {v_max}]")]
    InvalidBox {
        u_min: f64,
        v_min: f64,
        u_max: f64,
        v_max: f64,
    },

    #[error("saliency field has no mass")]
    ZeroMass,

    #[error("warp lost the object: pre-renormalization mass {mass:e} below floor {floor:e}")]
    MassLost { mass: f64, floor: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("detector unavailable: {0}")]
    DetectorUnavailable(String),

    #[error("detector protocol error: {0}")]
    Protocol(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("no level in the search space yields a sufficient explanation")]
    NoSufficientLevel,

    #[error("target scores zero on the full image; curve cannot be normalized")]
    ZeroFullImageScore,

    #[error("field is constant; correlation undefined")]
    ConstantField,

    #[error("frame {got} presented out of order (expected {expected})")]
    OutOfOrder { expected: u64, got: u64 },

    #[error("no frames found in {0}")]
    NoFrames(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("image error: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Detector,
    Io,
    Compute,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidSpec(_) => ErrorKind::Config,
            Error::DetectorUnavailable(_) | Error::Protocol(_) => ErrorKind::Detector,
            Error::Io(_) | Error::Image(_) | Error::NoFrames(_) | Error::Json(_) => ErrorKind::Io,
            _ => ErrorKind::Compute,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
