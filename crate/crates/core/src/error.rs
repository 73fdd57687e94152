use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {context} at ({row}, {col})")]
    NonFiniteValue {
        context: String,
        row: usize,
        col: usize,
    },

    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid edge set: {0}")]
    InvalidEdgeSet(String),

    #[error("empty edge set")]
    EmptyEdgeSet,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate support mask: diagonal inflation {0:.3} exceeds the sanity cap")]
    DegenerateMask(f64),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("column {column} of session {session} has zero variance")]
    ZeroVarianceColumn { session: usize, column: usize },

    #[error("non-positive residual variance in session {session} at node {node}: {value}")]
    NonPositiveDiagonal {
        session: usize,
        node: usize,
        value: f64,
    },

    #[error("singular value decomposition failed")]
    SvdFailure,

    #[error("temporal precision estimate is singular in session {0}")]
    SingularOmega(usize),

    #[error("covariance matrix is not positive semi-definite (min eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),

    #[error("c must be non-negative, got {0}")]
    NegativeC(f64),

    #[error("asymptotic variance of edge ({0}, {1}) is zero")]
    ZeroVariance(usize, usize),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable identifier, used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedManifest(_) => "MalformedManifest",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::NonFiniteValue { .. } => "NonFiniteValue",
            Error::IoFailure { .. } => "IoFailure",
            Error::InvalidEdgeSet(_) => "InvalidEdgeSet",
            Error::EmptyEdgeSet => "EmptyEdgeSet",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::DegenerateMask(_) => "DegenerateMask",
            Error::NotSpd(_) => "NotSPD",
            Error::ZeroVarianceColumn { .. } => "ZeroVarianceColumn",
            Error::NonPositiveDiagonal { .. } => "NonPositiveDiagonal",
            Error::SvdFailure => "SvdFailure",
            Error::SingularOmega(_) => "SingularOmega",
            Error::NotPsd(_) => "NotPSD",
            Error::BadAlpha(_) => "BadAlpha",
            Error::NegativeC(_) => "NegativeC",
            Error::ZeroVariance(..) => "ZeroVariance",
        }
    }

    /// True for errors caused by bad user input rather than numerical failure.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::MalformedManifest(_)
                | Error::ShapeMismatch(_)
                | Error::NonFiniteValue { .. }
                | Error::IoFailure { .. }
                | Error::InvalidEdgeSet(_)
                | Error::EmptyEdgeSet
                | Error::InvalidArgument(_)
                | Error::BadAlpha(_)
                | Error::NegativeC(_)
        )
    }
}
