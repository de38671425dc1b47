//! Error type shared by every stage of the pipeline.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A map of ids did not match what the ranking system declares.
    #[error("schema error: {0}")]
    Schema(String),

    /// An input violated a declared constraint.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("no baseline recorded for {subject}")]
    NoBaseline { subject: String },

    #[error("training error for indicator `{indicator}`: {reason}")]
    Training { indicator: String, reason: String },

    /// Two ensembles that must be member-aligned disagree on size.
    #[error("contract error: {0}")]
    Contract(String),

    #[error("scenario product of {count} exceeds capacity {cap}")]
    Capacity { count: u128, cap: usize },

    #[error("attribute `{attribute}`: both perturbations of {value} by {step} leave the domain [{min}, {max}]")]
    Domain {
        attribute: String,
        value: f64,
        step: f64,
        min: f64,
        max: f64,
    },

    #[error("rival `{rival}`: {method} needs {needed} year(s) of history, found {found}")]
    InsufficientHistory {
        rival: String,
        method: String,
        needed: usize,
        found: usize,
    },

    /// A data file row failed validation. `row` is the 1-based line number.
    #[error("{source_name}: line {row}{}: {message}", column.as_ref().map(|c| format!(", column `{c}`")).unwrap_or_default())]
    Ingest {
        source_name: String,
        row: usize,
        column: Option<String>,
        message: String,
    },

    #[error("malformed JSON at byte {offset} (line {line}, column {column}): {message}")]
    Parse {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("session format version {found} cannot be loaded by this build (expects {expected}); re-create the session or migrate it")]
    Migration { found: u32, expected: u32 },

    #[error("session replay diverged: {0}")]
    Replay(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("session `{0}` is being modified by another request")]
    Busy(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Short machine-readable code used by the HTTP envelope and CLI diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::Validation(_) => "validation",
            Error::NoBaseline { .. } => "no_baseline",
            Error::Training { .. } => "training",
            Error::Contract(_) => "contract",
            Error::Capacity { .. } => "capacity",
            Error::Domain { .. } => "domain",
            Error::InsufficientHistory { .. } => "insufficient_history",
            Error::Ingest { .. } => "ingest",
            Error::Parse { .. } => "parse",
            Error::Migration { .. } => "migration",
            Error::Replay(_) => "replay",
            Error::NotFound(_) => "not_found",
            Error::Busy(_) => "busy",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    /// Converts a serde_json error into a [`Error::Parse`] carrying the byte offset into `input`.
    pub fn from_json(err: serde_json::Error, input: &str) -> Self {
        let (line, column) = (err.line(), err.column());
        Error::Parse {
            offset: byte_offset(input, line, column),
            line,
            column,
            message: err.to_string(),
        }
    }
}

fn byte_offset(input: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = input
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(input.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_error_reports_byte_offset() {
        let input = "{\n  \"a\": 1,\n  \"b\": ]\n}";
        let err = serde_json::from_str::<serde_json::Value>(input).unwrap_err();
        match Error::from_json(err, input) {
            Error::Parse { offset, line, .. } => {
                assert_eq!(line, 3);
                assert_eq!(&input[offset..offset + 1], "]");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
