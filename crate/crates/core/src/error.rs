use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },

    #[error("line {line}: inconsistent OHLC for {ticker} on {date}: {reason}")]
    OhlcInconsistent {
        line: u64,
        ticker: String,
        date: NaiveDate,
        reason: String,
    },

    #[error("duplicate bar for {ticker} on {date}")]
    DuplicateBar { ticker: String, date: NaiveDate },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("no session after {0}")]
    NoneAfter(NaiveDate),

    #[error("{ticker}: no entry session after {day}")]
    NoEntry { ticker: String, day: NaiveDate },

    #[error("{ticker}: insufficient history, need {needed} sessions from entry, have {available}")]
    InsufficientHistory {
        ticker: String,
        needed: usize,
        available: usize,
    },

    #[error("duplicate signal for {ticker} created {created} horizon {horizon}")]
    DuplicateSignal {
        ticker: String,
        created: NaiveDate,
        horizon: u8,
    },

    #[error("line {line}: horizon {horizon} outside 1..=10")]
    HorizonOutOfRange { line: u64, horizon: i64 },

    #[error("{ticker}: no scenario with at least {min_trades} trades")]
    NoQualifyingScenario { ticker: String, min_trades: usize },

    #[error("schedule needs at least 7 quarters, got {quarters}")]
    InsufficientSpan { quarters: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input files rather than by computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Csv(_)
                | Error::MalformedRow { .. }
                | Error::OhlcInconsistent { .. }
                | Error::DuplicateBar { .. }
                | Error::Schema(_)
                | Error::DuplicateSignal { .. }
                | Error::HorizonOutOfRange { .. }
        )
    }
}
