use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the solver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("numeric domain error in `{primitive}`: {detail}")]
    Domain {
        primitive: &'static str,
        detail: String,
    },

    #[error("backward() requires a scalar node, got a node holding {len} jets")]
    NotScalar { len: usize },

    #[error("non-finite value produced by flow layer {layer}")]
    NonFiniteLayer { layer: usize },

    #[error("non-finite residual at x = {x:?}, t = {t}")]
    NonFiniteResidual { x: Vec<f64>, t: f64 },

    #[error("non-finite loss at round {round}, epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        round: usize,
        epoch: usize,
        batch: usize,
    },

    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),

    #[error("unknown problem `{0}`")]
    UnknownProblem(String),

    #[error("problem has no exact solution")]
    NoExactSolution,

    #[error("invalid argument `{field}`: {reason}")]
    InvalidArgument { field: String, reason: String },

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("numerical instability in ADI solver at step {step} (t = {t}): max |p| = {max_abs}")]
    Unstable { step: usize, t: f64, max_abs: f64 },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used by the CLI error record.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain { .. } => "domain",
            Error::NotScalar { .. } => "not_scalar",
            Error::NonFiniteLayer { .. }
            | Error::NonFiniteResidual { .. }
            | Error::NonFiniteLoss { .. }
            | Error::Unstable { .. } => "numeric",
            Error::EmptyBatch(_) => "empty_batch",
            Error::UnknownProblem(_) | Error::Config { .. } | Error::InvalidArgument { .. } => {
                "config"
            }
            Error::NoExactSolution => "no_exact_solution",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::Shape(_) => "shape_mismatch",
            Error::Parse { .. } | Error::Json(_) => "parse",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
