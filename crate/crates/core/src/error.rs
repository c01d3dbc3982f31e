use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid bin grid: {0}")]
    InvalidGrid(String),

    #[error("invalid forecast: {0}")]
    InvalidForecast(String),

    #[error("forecasts are defined on different bin grids")]
    GridMismatch,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("value {0} lies outside the support of the bin grid")]
    OutOfRange(f64),

    /// The realized bin carries zero probability, so the log score is infinite.
    /// Survey panels should be passed through `ingest::repair_zero_probability`.
    #[error("log score is infinite: realized bin {bin} has zero probability")]
    InfiniteScore { bin: usize },

    #[error("missing forecast for forecaster {forecaster} at {date}")]
    MissingCell { forecaster: String, date: String },

    #[error("missing realization at {0}")]
    MissingRealization(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("objective is infeasible: every density is zero at round {row}")]
    Infeasible { row: usize },

    #[error("subset enumeration over K={k} forecasters is too large (limit {limit}); use subset averaging instead")]
    EnumerationTooLarge { k: usize, limit: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("line {line}: source bin ({lower}, {upper}] straddles a target bin edge")]
    IncompatibleGrid { line: usize, lower: f64, upper: f64 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{0} is outside the panel's date range")]
    DateRange(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line() as usize).unwrap_or(0);
        Error::Parse {
            line,
            message: err.to_string(),
        }
    }
}

impl Error {
    /// Errors caused by malformed inputs or configuration rather than by the computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidGrid(_)
                | Error::InvalidForecast(_)
                | Error::IncompatibleGrid { .. }
                | Error::Parse { .. }
                | Error::Config(_)
                | Error::DateRange(_)
                | Error::Io(_)
                | Error::EnumerationTooLarge { .. }
                | Error::MissingCell { .. }
                | Error::MissingRealization(_)
        )
    }
}
