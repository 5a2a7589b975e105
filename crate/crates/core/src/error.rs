use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the fitting and simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("position ({x}, {y}) lies outside the raster extent")]
    OutOfDomain { x: f64, y: f64 },

    #[error("position ({x}, {y}) falls on a nodata cell")]
    NoData { x: f64, y: f64 },

    #[error("layer '{0}' is constant and cannot be standardized")]
    DegenerateLayer(String),

    #[error("covariate stack error: {0}")]
    Stack(String),

    #[error("invalid track: {0}")]
    InvalidTrack(String),

    #[error("selection function is non-positive (w'theta = {linear_predictor}){}", location_suffix(.step, .slot))]
    NonPositiveSelection {
        linear_predictor: f64,
        step: Option<usize>,
        slot: Option<usize>,
    },

    #[error("rejection sampler exhausted after {proposals} proposals")]
    RejectionExhausted { proposals: u64 },

    #[error("observed fixes outside the raster or on nodata cells at indices {0:?}")]
    ObservedOutOfDomain(Vec<usize>),

    #[error("enumeration over {0} slots exceeds the limit of 20")]
    EnumerationTooLarge(usize),

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),

    #[error("trajectory diverged (non-finite value)")]
    NonFiniteTrajectory,

    #[error("posterior is not finite at the initial value")]
    InitializationFailure,

    #[error("no valid cells within {radius} m of ({x}, {y})")]
    NoValidCells { x: f64, y: f64, radius: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

fn location_suffix(step: &Option<usize>, slot: &Option<usize>) -> String {
    match (step, slot) {
        (Some(i), Some(j)) => format!(" at step {i}, slot {j}"),
        _ => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
