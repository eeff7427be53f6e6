use thiserror::Error;

/// Errors produced by the modelling, fitting and benchmarking routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("root solver failed for v={v}, i={i}: {reason}")]
    SolverFailure { v: f64, i: f64, reason: String },

    #[error("current {i} A is outside [0, {i_sc}] A")]
    CurrentOutOfRange { i: f64, i_sc: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("fit degenerate: {skipped} of {total} records could not be simulated")]
    FitDegenerate { skipped: usize, total: usize },

    #[error("fit initialisation failed: {0}")]
    Initialization(String),

    #[error("datasheet extraction did not converge (residual norm {residual:e}): {detail}")]
    Extraction { residual: f64, detail: String },

    #[error("training failed: {0}")]
    Training(String),

    #[error("series misaligned: {0}")]
    Alignment(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code associated with the error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParams(_) => 2,
            Error::Data(_)
            | Error::InvalidInput(_)
            | Error::InsufficientData(_)
            | Error::Alignment(_)
            | Error::Io(_) => 3,
            _ => 4,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Data(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Data(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
