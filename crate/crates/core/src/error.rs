use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("gradient check failed: {0}")]
    GradCheck(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("continuous feature `{0}` has maximum 0 across both regions")]
    DegenerateFeature(String),

    #[error("cannot encode cell ({row}, {col}): {reason}")]
    Encode {
        row: usize,
        col: usize,
        reason: String,
    },

    #[error("split error: {0}")]
    Split(String),

    #[error("({0}, {1}) is not an edge")]
    NotAnEdge(usize, usize),

    #[error("batch error: {0}")]
    Batch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("generation error: {0}")]
    Generation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: u64,
        reason: String,
    },

    #[error("source and target regions disagree on schema: {0}")]
    SchemaMismatch(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape { op, left, right }
    }

    /// True for failures that come from the data files rather than numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Schema(_)
                | Error::DegenerateFeature(_)
                | Error::Encode { .. }
                | Error::Parse { .. }
                | Error::SchemaMismatch(_)
                | Error::Io { .. }
                | Error::Split(_)
        )
    }

    pub fn is_numeric_failure(&self) -> bool {
        matches!(self, Error::Divergence { .. } | Error::GradCheck(_))
    }
}
