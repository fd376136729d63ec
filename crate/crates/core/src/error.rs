use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("i/o error: {0}")]
    Stream(#[from] std::io::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid url {url:?}: {reason}")]
    InvalidUrl { url: String, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("k-NN graph needs more points than neighbors (n = {n}, k = {k}); lower k")]
    TooFewPoints { n: usize, k: usize },

    #[error("all points coincide; pass an explicit bandwidth")]
    DegenerateBandwidth,

    #[error("fewer than two clusters found; topic is not polarized")]
    NotPolarized,

    #[error("training data needs both classes")]
    SingleClass,

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NotConverged { iterations: usize, grad_norm: f64 },

    #[error("valence totals must be positive")]
    ZeroTotals,

    #[error("score {0} outside [-1, 1]")]
    ScoreOutOfRange(f64),

    #[error("unknown bias label {0:?}")]
    UnknownBiasLabel(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}
