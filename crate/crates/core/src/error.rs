use thiserror::Error;

/// Errors raised anywhere in the imputation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error in {func}: {detail}")]
    Domain { func: &'static str, detail: String },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("dimension mismatch: expected {expected} covariates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("missing column '{0}'")]
    MissingColumn(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("log-likelihood is degenerate at row {row} (zero probability)")]
    DegenerateLikelihood { row: usize },

    #[error("all rows are censored; the imputation model is not identified")]
    AllCensored,

    #[error("too few rows to fit: {n} rows for {k} parameters")]
    TooFewRows { n: usize, k: usize },

    #[error("information matrix is singular at the optimum")]
    SingularInformation,

    #[error("conditional mean does not exist (log-logistic shape {shape} <= 1)")]
    NonexistentMean { shape: f64 },

    #[error("deep-tail censoring: S({w}) = {survival:e} is below the threshold")]
    DeepTail { w: f64, survival: f64 },

    #[error("censoring interval [{lower}, {upper}] carries no probability mass")]
    EmptyIntervalMass { lower: f64, upper: f64 },

    #[error("quadrature did not reach tolerance: estimate {estimate}, error {error:e}")]
    Quadrature { estimate: f64, error: f64 },

    #[error("design matrix is rank deficient; collinear columns: {columns:?}")]
    RankDeficient { columns: Vec<String> },

    #[error("mismatched coefficient layouts across fits")]
    LayoutMismatch,

    #[error("row {row}: {source}")]
    AtRow {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("bootstrap replicate {replicate} failed after {attempts} attempts: {last}")]
    BootstrapFailed {
        replicate: usize,
        attempts: usize,
        last: Box<Error>,
    },

    #[error("no candidate family could be fitted: {}", .0.iter().map(|(f, e)| format!("{f}: {e}")).collect::<Vec<_>>().join("; "))]
    NoCandidateFitted(Vec<(String, Error)>),

    #[error("csv: {0}")]
    Csv(String),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn domain(func: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            func,
            detail: detail.into(),
        }
    }

    pub(crate) fn at_row(self, row: usize) -> Self {
        Error::AtRow {
            row,
            source: Box::new(self),
        }
    }

    /// Innermost error, with row annotations stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtRow { source, .. } => source.root(),
            e => e,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
