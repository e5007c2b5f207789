use std::collections::HashSet;
use std::io::{Read, Write};

use super::{field, fmt_f64, line_of, reader, FormatError};
use crate::beam::{AxisBounds, BeamSpec};

const HEADER_1D: &str = "ID,Time[ms],Threshold[mm]";
const HEADER_3D: &str = "ID,Time[ms],XLo[mm],XHi[mm],YLo[mm],YHi[mm],ZLo[mm],ZHi[mm]";

/// A treatment's beam list.
///
/// 1D files carry one symmetric threshold per beam; 3D files carry explicit
/// lower and upper bounds for each axis.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamListFile {
    pub beams: Vec<BeamSpec>,
}

impl BeamListFile {
    pub fn axes(&self) -> usize {
        self.beams.first().map_or(1, BeamSpec::axes)
    }
}

pub fn read_beam_list<R: Read>(input: R) -> Result<BeamListFile, FormatError> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    let axes = match headers.len() {
        3 => 1,
        8 => 3,
        0 => return Err(FormatError::MissingHeader),
        n => {
            return Err(FormatError::Row {
                line: 1,
                message: format!("beam list header must have 3 or 8 columns, found {n}"),
            })
        }
    };
    let mut seen = HashSet::new();
    let mut beams = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        if record.len() != headers.len() {
            return Err(FormatError::Row {
                line,
                message: format!("expected {} columns, found {}", headers.len(), record.len()),
            });
        }
        let id: u64 = field(&record, 0, "beam id")?;
        let time: u64 = field(&record, 1, "delivery time")?;
        if time == 0 {
            return Err(FormatError::Field {
                line,
                column: 2,
                message: "delivery time must be positive".into(),
            });
        }
        if !seen.insert(id) {
            return Err(FormatError::Field {
                line,
                column: 1,
                message: format!("duplicate beam id {id}"),
            });
        }
        let bounds = if axes == 1 {
            let th: f64 = field(&record, 2, "threshold")?;
            if !(th.is_finite() && th >= 0.0) {
                return Err(FormatError::Field {
                    line,
                    column: 3,
                    message: format!("threshold must be finite and non-negative, got {th}"),
                });
            }
            vec![AxisBounds::symmetric(th)]
        } else {
            let mut bounds = Vec::with_capacity(3);
            for a in 0..3 {
                let lo: f64 = field(&record, 2 + 2 * a, "lower bound")?;
                let hi: f64 = field(&record, 3 + 2 * a, "upper bound")?;
                let b = AxisBounds::new(lo, hi);
                if !b.is_valid() {
                    return Err(FormatError::Field {
                        line,
                        column: 3 + 2 * a,
                        message: format!("bounds [{lo}, {hi}] are inverted or not finite"),
                    });
                }
                bounds.push(b);
            }
            bounds
        };
        beams.push(BeamSpec::with_bounds(id, time, bounds));
    }
    Ok(BeamListFile { beams })
}

pub fn write_beam_list<W: Write>(list: &BeamListFile, mut out: W) -> Result<(), FormatError> {
    let axes = list.axes();
    writeln!(out, "{}", if axes == 1 { HEADER_1D } else { HEADER_3D })?;
    for b in &list.beams {
        let mut line = format!("{},{}", b.id, b.remaining_ms);
        if axes == 1 {
            line.push(',');
            line.push_str(&fmt_f64(b.bounds[0].upper));
        } else {
            for ax in &b.bounds {
                line.push(',');
                line.push_str(&fmt_f64(ax.lower));
                line.push(',');
                line.push_str(&fmt_f64(ax.upper));
            }
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}
