use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("softmax row {row} has no unmasked entries")]
    EmptyNeighborhood { row: usize },

    #[error("tape already consumed by a previous backward pass")]
    StaleTape,

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("unknown gene id {id:?} (row {row})")]
    UnknownGene { id: String, row: usize },

    #[error("duplicate variant id {0:?}")]
    DuplicateVariant(String),

    #[error("index {index} out of range for {len} {what}")]
    Bounds {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("{path}: schema error: {msg}")]
    Schema { path: String, msg: String },

    #[error("{path}:{line}: {msg}")]
    Row {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("incompatible checkpoint format version {found} (expected {expected})")]
    IncompatibleVersion { found: u32, expected: u32 },

    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),

    #[error("{0}")]
    Capability(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("degenerate metric input: {0}")]
    DegenerateMetric(String),

    #[error("attention normalizer {value:e} below 1e-30 at row {row}")]
    NumericalDegeneracy { row: usize, value: f64 },

    #[error("optimizer state corrupted: {0}")]
    StateCorruption(String),

    #[error("gradient check failed: {0}")]
    GradCheck(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-parsable class name, printed by the CLI on failure.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Contract(_) => "contract",
            Error::EmptyNeighborhood { .. } => "empty-neighborhood",
            Error::StaleTape => "stale-tape",
            Error::NonFinite(_) => "non-finite",
            Error::UnknownGene { .. } => "referential",
            Error::DuplicateVariant(_) => "duplication",
            Error::Bounds { .. } => "bounds",
            Error::Schema { .. } => "schema",
            Error::Row { .. } => "parse",
            Error::IncompatibleVersion { .. } => "incompatible-version",
            Error::Integrity(_) => "integrity",
            Error::Capability(_) => "capability",
            Error::Divergence { .. } => "divergence",
            Error::DegenerateMetric(_) => "degenerate-metric",
            Error::NumericalDegeneracy { .. } => "numerical-degeneracy",
            Error::StateCorruption(_) => "state-corruption",
            Error::GradCheck(_) => "grad-check",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
