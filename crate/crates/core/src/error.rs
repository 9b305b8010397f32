use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("column `{name}` has a non-binary value at row {row}")]
    NonBinaryColumn { name: String, row: usize },

    #[error("non-finite or unparsable value at row {row}, column `{col}`")]
    NonFiniteValue { row: usize, col: String },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error(
        "degenerate variance: the variance quadratic is not strictly positive; \
         outcomes are completely parallel to takeups within both arms ({0})"
    )]
    DegenerateVariance(String),

    #[error("too many assignments to enumerate: C({n}, {n1}) exceeds {limit}")]
    TooManyAssignments { n: usize, n1: usize, limit: u64 },

    #[error("the zero polynomial has no isolated roots")]
    ZeroPolynomial,

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("estimate undefined: {0}")]
    UndefinedEstimate(String),

    #[error("invalid strata split: {0}")]
    InvalidStrataSplit(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("csv error: {0}")]
    Csv(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
