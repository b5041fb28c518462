use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("expected a scalar tensor, got shape {0:?}")]
    Rank(Vec<usize>),

    #[error("batch normalization in training mode needs at least 2 samples, got {0}")]
    DegenerateBatch(usize),

    #[error("parameter {0} has no gradient")]
    UninitializedGradient(usize),

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("point sets differ in size ({0} vs {1})")]
    Cardinality(usize, usize),

    #[error("unknown {kind} '{name}' (known: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("corrupt container: {0}")]
    Corrupt(String),

    #[error("unsupported container version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },

    #[error("missing array '{0}'")]
    MissingArray(String),

    #[error("training diverged at iteration {iteration}: loss {loss}")]
    Divergence { iteration: usize, loss: f64 },

    #[error("fine-tuning aborted after {0} consecutive empty fused clouds")]
    EmptyCloud(usize),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
