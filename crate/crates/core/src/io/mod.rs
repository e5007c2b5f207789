//! File formats and synthetic data generation.

mod beams;
mod declarations;
mod generate;
mod trace;

pub use beams::{read_beam_list, write_beam_list, BeamListFile};
pub use declarations::{parse_declarations, write_declarations, DeclarationError};
pub use generate::{
    gen_beam_list, gen_motion_trace, quantile, AxisParams, ChangeEvent, EventKind, GenerateError,
    TraceSpec,
};
pub use trace::{read_trace, write_trace, MotionTrace};

use std::fmt::Write as _;

use thiserror::Error;

/// A CSV problem with its 1-based line and, when known, column.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("line {line}, column {column}: {message}")]
    Field {
        line: u64,
        column: usize,
        message: String,
    },
    #[error("missing header row")]
    MissingHeader,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Shortest decimal text that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    let mut s = String::new();
    let _ = write!(s, "{v:?}");
    s
}

pub(crate) fn field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    column: usize,
    what: &str,
) -> Result<T, FormatError> {
    let line = record.position().map_or(0, |p| p.line());
    let raw = record.get(column).ok_or_else(|| FormatError::Field {
        line,
        column: column + 1,
        message: format!("missing {what}"),
    })?;
    raw.trim().parse().map_err(|_| FormatError::Field {
        line,
        column: column + 1,
        message: format!("cannot parse {what} from {raw:?}"),
    })
}

pub(crate) fn reader<R: std::io::Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

pub(crate) fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}
