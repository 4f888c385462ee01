use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite values produced by {layer}")]
    NonFinite { layer: String },

    #[error("{what}: expected spatial size {expected}x{expected}, got {got_h}x{got_w}")]
    Resolution {
        what: String,
        expected: usize,
        got_h: usize,
        got_w: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("decoder stage {stage}: skip tensor {got:?} does not match expected {expected:?}")]
    SkipMismatch {
        stage: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("landmarks collapsed: interocular distance {distance:.2} px is below {min} px")]
    LandmarksCollapsed { distance: f64, min: f64 },

    #[error("invalid landmarks: {0}")]
    InvalidLandmarks(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: cannot decode image: {message}")]
    Image { path: PathBuf, message: String },

    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("thermal profiles without a visible frontal partner for identities: {}", .0.join(", "))]
    Unpaired(Vec<String>),

    #[error("non-finite loss term `{term}` at step {step}")]
    NonFiniteLoss { term: String, step: u64 },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("probe identity `{0}` is absent from the gallery")]
    UnknownProbeIdentity(String),

    #[error("score set needs at least one genuine and one imposter score, got {genuine} and {imposter}")]
    EmptyScores { genuine: usize, imposter: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
