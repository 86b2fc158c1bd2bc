use thiserror::Error;

/// Errors produced anywhere in the OAC pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates an invariant of the owning module.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Two collaborating values disagree on a dimension.
    #[error("shape mismatch: {what} (expected {expected}, got {actual})")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A value lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested gradients do not fit into the available resources.
    #[error(
        "capacity exceeded: {gradients} gradients need {required_symbols} OFDM symbols, \
         only {available_symbols} available"
    )]
    Capacity {
        gradients: usize,
        required_symbols: usize,
        available_symbols: usize,
    },

    /// Exhaustive search would enumerate too many hypotheses.
    #[error("search too large: {hypotheses} hypotheses exceeds limit {limit}")]
    SearchTooLarge { hypotheses: u128, limit: u128 },

    /// Training produced a non-finite loss or gradient estimate.
    #[error("training diverged at round {round}: {detail}")]
    Divergence { round: usize, detail: String },

    #[error("parse error in {source_name}: {message}")]
    Parse {
        source_name: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Process exit status used by the CLI for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } => 2,
            Error::Capacity { .. } | Error::SearchTooLarge { .. } => 3,
            Error::Divergence { .. } => 4,
            _ => 1,
        }
    }

    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Shape { .. } => "shape",
            Error::Domain(_) => "domain",
            Error::Capacity { .. } => "capacity",
            Error::SearchTooLarge { .. } => "capacity",
            Error::Divergence { .. } => "divergence",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Shape {
            what,
            expected,
            actual,
        });
    }
    Ok(())
}
