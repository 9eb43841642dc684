use std::path::PathBuf;

/// Errors raised by the dictionary-learning toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sparsity {sparsity} exceeds the number of atoms {atoms}")]
    SparsityTooLarge { sparsity: usize, atoms: usize },

    /// The least-squares system on the selected support lost rank; the
    /// dictionary holds duplicate or collinear atoms.
    #[error("singular support sub-matrix when adding atom {atom} (pivot {pivot:e})")]
    SingularSupport { atom: usize, pivot: f64 },

    #[error("matrix is singular or not positive definite (condition estimate {condition:e})")]
    SingularMatrix { condition: f64 },

    #[error(
        "power iteration did not converge within {iterations} steps (last estimate {estimate:e})"
    )]
    NoConvergence { iterations: usize, estimate: f64 },

    #[error("corrupted online state: {0}")]
    CorruptState(String),

    #[error("coding column {column}: {source}")]
    Column {
        column: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: row {row}, column '{column}': cannot parse '{value}' as a number")]
    NonNumeric {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },

    #[error("unsupported or corrupt container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParameter(_) | Error::Config(_) | Error::SparsityTooLarge { .. } => {
                ErrorKind::Config
            }
            Error::Data(_)
            | Error::NonNumeric { .. }
            | Error::Format(_)
            | Error::Io(_)
            | Error::Csv(_) => ErrorKind::Data,
            Error::DimensionMismatch { .. }
            | Error::SingularSupport { .. }
            | Error::SingularMatrix { .. }
            | Error::NoConvergence { .. }
            | Error::CorruptState(_) => ErrorKind::Numerical,
            Error::Column { source, .. } => source.kind(),
        }
    }

    pub(crate) fn dims(context: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            found,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
