use std::path::PathBuf;

/// Errors raised anywhere in the simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("degenerate element {element}: signed volume {volume:e}")]
    DegenerateElement { element: usize, volume: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: String, reason: String },

    #[error("exponent {exponent:e} out of range at node {node:?}")]
    Range { exponent: f64, node: Option<usize> },

    #[error("non-positive density {value:e} at node {node:?}")]
    Density { value: f64, node: Option<usize> },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("zero pivot at row {row} (|pivot| = {pivot:e})")]
    ZeroPivot { row: usize, pivot: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("non-finite value in field `{field}` at node {node}")]
    NonFinite { field: &'static str, node: usize },

    #[error("positivity violated: min {carrier} density {value:e} at node {node}")]
    Positivity { carrier: &'static str, node: usize, value: f64 },

    #[error("Gummel iteration did not converge in {iterations} iterations (last increment {last:e})")]
    NonConvergence { iterations: usize, last: f64, history: Vec<f64> },

    #[error("unknown contact `{0}`")]
    UnknownContact(String),

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("sweep failed at its first point ({bias} V): {source}")]
    SweepSetup { bias: f64, source: Box<Error> },

    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("format error in {path} line {line}: {reason}")]
    Format { path: PathBuf, line: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::Parameter { name: name.to_string(), reason: reason.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
