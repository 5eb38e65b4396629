use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("eigensolver did not converge after {sweeps} sweeps (residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("insufficient non-edges: requested {requested}, available {available}")]
    InsufficientNonEdges { requested: usize, available: usize },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{}: {source}", path.display())]
    AtPath {
        path: std::path::PathBuf,
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Attaches the file the error came from.
    pub fn at(self, path: impl Into<std::path::PathBuf>) -> Error {
        Error::AtPath {
            path: path.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
