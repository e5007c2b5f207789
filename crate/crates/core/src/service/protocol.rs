//! Line-oriented CSV exchanged with the treatment client.
//!
//! ```text
//! BEAMS,<slot_hint>,<count>
//! id,remaining_ms,xlo,xhi,ylo,yhi,zlo,zhi,started,running     (3D)
//! id,remaining_ms,threshold[,started,running]                 (1D)
//!
//! RESULTS,<slot_index>,<OK|GAP>,<count>
//! id,px,py,pz,combined_p,completed,deliverable                (3D)
//! id,px,combined_p,completed,deliverable                      (1D)
//!
//! ERR,<message>
//! ```
//!
//! Flags are `0`/`1`; numbers use the shortest text that parses back to the
//! same `f64`.

use std::collections::HashSet;
use std::io::{self, BufRead, Write};

use thiserror::Error;

use super::{SlotResponse, SlotStatus};
use crate::beam::{AxisBounds, BeamId, BeamSpec};
use crate::io::fmt_f64;

/// Largest beam count a request or response may announce.
pub const MAX_ROWS: usize = 100_000;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("bad header {0:?}")]
    Header(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("connection closed after {got} of {expected} rows")]
    Truncated { got: usize, expected: usize },
    #[error("beam {0}: 1D bounds are not symmetric and cannot be sent as a threshold")]
    Asymmetric(BeamId),
    #[error("beams mix {0} and {1} axes")]
    MixedAxes(usize, usize),
    #[error("server error: {0}")]
    Remote(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub slot_hint: u64,
    pub beams: Vec<BeamSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub id: BeamId,
    /// One probability per axis.
    pub probs: Vec<f64>,
    pub combined_p: f64,
    pub completed: bool,
    pub deliverable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub slot_index: u64,
    pub status: SlotStatus,
    pub rows: Vec<ResultRow>,
}

impl Response {
    /// Wire form of a verification outcome for beams with `axes` axes.
    pub fn from_slot(slot: &SlotResponse, axes: usize) -> Self {
        let rows = slot
            .results
            .iter()
            .map(|r| {
                let mut probs: Vec<f64> = r.axes.iter().map(|e| e.p_hat).collect();
                probs.resize(axes, 0.0);
                ResultRow {
                    id: r.id,
                    probs,
                    combined_p: r.combined_p,
                    completed: r.completed,
                    deliverable: r.deliverable,
                }
            })
            .collect();
        Self {
            slot_index: slot.slot_index,
            status: slot.status,
            rows,
        }
    }

    /// Ids of beams cleared for delivery, in row order. Empty for gaps.
    pub fn deliverable(&self) -> Vec<BeamId> {
        if self.status == SlotStatus::Gap {
            return Vec::new();
        }
        self.rows.iter().filter(|r| r.deliverable).map(|r| r.id).collect()
    }
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn axes_of(beams: &[BeamSpec]) -> Result<usize, ProtocolError> {
    let Some(first) = beams.first() else { return Ok(1) };
    let axes = first.axes();
    if let Some(b) = beams.iter().find(|b| b.axes() != axes) {
        return Err(ProtocolError::MixedAxes(axes, b.axes()));
    }
    Ok(axes)
}

pub fn encode_request(req: &Request) -> Result<String, ProtocolError> {
    let axes = axes_of(&req.beams)?;
    let mut out = format!("BEAMS,{},{}\n", req.slot_hint, req.beams.len());
    for b in &req.beams {
        let mut row = format!("{},{}", b.id, b.remaining_ms);
        if axes == 1 {
            let bounds = b.bounds[0];
            if !bounds.is_symmetric() {
                return Err(ProtocolError::Asymmetric(b.id));
            }
            row.push(',');
            row.push_str(&fmt_f64(bounds.upper));
            if b.started || b.running {
                row.push_str(&format!(",{},{}", flag(b.started), flag(b.running)));
            }
        } else {
            for ax in &b.bounds {
                row.push_str(&format!(",{},{}", fmt_f64(ax.lower), fmt_f64(ax.upper)));
            }
            row.push_str(&format!(",{},{}", flag(b.started), flag(b.running)));
        }
        out.push_str(&row);
        out.push('\n');
    }
    Ok(out)
}

pub fn encode_response(resp: &Response) -> String {
    let status = match resp.status {
        SlotStatus::Ok => "OK",
        SlotStatus::Gap => "GAP",
    };
    let mut out = format!("RESULTS,{},{},{}\n", resp.slot_index, status, resp.rows.len());
    for r in &resp.rows {
        out.push_str(&r.id.to_string());
        for p in &r.probs {
            out.push(',');
            out.push_str(&fmt_f64(*p));
        }
        out.push_str(&format!(
            ",{},{},{}\n",
            fmt_f64(r.combined_p),
            flag(r.completed),
            flag(r.deliverable)
        ));
    }
    out
}

/// Single-line error reply. Line breaks in `message` become spaces.
pub fn encode_error(message: &str) -> String {
    format!("ERR,{}\n", message.replace(['\n', '\r'], " "))
}

/// Next line without its terminator, or `None` at end of input.
fn read_line<R: BufRead>(r: &mut R) -> io::Result<Option<String>> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    while line.ends_with(['\n', '\r']) {
        line.pop();
    }
    Ok(Some(line))
}

fn parse<T: std::str::FromStr>(text: &str, row: usize, what: &str) -> Result<T, ProtocolError> {
    text.trim().parse().map_err(|_| ProtocolError::Row {
        row,
        message: format!("cannot parse {what} from {text:?}"),
    })
}

fn parse_flag(text: &str, row: usize, what: &str) -> Result<bool, ProtocolError> {
    match text.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(ProtocolError::Row {
            row,
            message: format!("{what} must be 0 or 1, got {text:?}"),
        }),
    }
}

fn header<'a>(line: &'a str, tag: &str, fields: usize) -> Result<Vec<&'a str>, ProtocolError> {
    let parts: Vec<&str> = line.split(',').collect();
    if parts.first() == Some(&"ERR") {
        return Err(ProtocolError::Remote(line.get(4..).unwrap_or("").to_string()));
    }
    if parts.len() != fields || parts[0] != tag {
        return Err(ProtocolError::Header(line.to_string()));
    }
    Ok(parts)
}

fn count(text: &str, line: &str) -> Result<usize, ProtocolError> {
    match text.parse::<usize>() {
        Ok(n) if n <= MAX_ROWS => Ok(n),
        _ => Err(ProtocolError::Header(line.to_string())),
    }
}

/// Reads one request; `None` if the peer closed the connection cleanly.
pub fn read_request<R: BufRead>(r: &mut R) -> Result<Option<Request>, ProtocolError> {
    let Some(line) = read_line(r)? else { return Ok(None) };
    let parts = header(&line, "BEAMS", 3)?;
    let slot_hint = parts[1]
        .parse()
        .map_err(|_| ProtocolError::Header(line.clone()))?;
    let n = count(parts[2], &line)?;

    let mut beams = Vec::with_capacity(n);
    let mut ids = HashSet::new();
    let mut axes = None;
    for row in 1..=n {
        let text = read_line(r)?.ok_or(ProtocolError::Truncated {
            got: row - 1,
            expected: n,
        })?;
        let cols: Vec<&str> = text.split(',').collect();
        let (this_axes, flags_at) = match cols.len() {
            3 => (1, None),
            5 => (1, Some(3)),
            10 => (3, Some(8)),
            c => {
                return Err(ProtocolError::Row {
                    row,
                    message: format!("expected 3, 5 or 10 columns, found {c}"),
                })
            }
        };
        if let Some(prev) = axes.replace(this_axes) {
            if prev != this_axes {
                return Err(ProtocolError::MixedAxes(prev, this_axes));
            }
        }
        let id: u64 = parse(cols[0], row, "beam id")?;
        if !ids.insert(id) {
            return Err(ProtocolError::Row {
                row,
                message: format!("duplicate beam id {id}"),
            });
        }
        let remaining: u64 = parse(cols[1], row, "remaining time")?;
        let bounds = if this_axes == 1 {
            vec![AxisBounds::symmetric(parse(cols[2], row, "threshold")?)]
        } else {
            (0..3)
                .map(|a| {
                    Ok(AxisBounds::new(
                        parse(cols[2 + 2 * a], row, "lower bound")?,
                        parse(cols[3 + 2 * a], row, "upper bound")?,
                    ))
                })
                .collect::<Result<_, ProtocolError>>()?
        };
        let mut beam = BeamSpec::with_bounds(id, remaining, bounds);
        if let Some(at) = flags_at {
            beam.started = parse_flag(cols[at], row, "started")?;
            beam.running = parse_flag(cols[at + 1], row, "running")?;
        }
        beams.push(beam);
    }
    Ok(Some(Request { slot_hint, beams }))
}

pub fn read_response<R: BufRead>(r: &mut R) -> Result<Response, ProtocolError> {
    let line = read_line(r)?.ok_or(ProtocolError::Truncated { got: 0, expected: 1 })?;
    let parts = header(&line, "RESULTS", 4)?;
    let slot_index = parts[1]
        .parse()
        .map_err(|_| ProtocolError::Header(line.clone()))?;
    let status = match parts[2] {
        "OK" => SlotStatus::Ok,
        "GAP" => SlotStatus::Gap,
        _ => return Err(ProtocolError::Header(line.clone())),
    };
    let n = count(parts[3], &line)?;
    let mut rows = Vec::with_capacity(n);
    for row in 1..=n {
        let text = read_line(r)?.ok_or(ProtocolError::Truncated {
            got: row - 1,
            expected: n,
        })?;
        let cols: Vec<&str> = text.split(',').collect();
        let axes = match cols.len() {
            5 => 1,
            7 => 3,
            c => {
                return Err(ProtocolError::Row {
                    row,
                    message: format!("expected 5 or 7 columns, found {c}"),
                })
            }
        };
        let probs = cols[1..=axes]
            .iter()
            .map(|c| parse(c, row, "probability"))
            .collect::<Result<_, _>>()?;
        rows.push(ResultRow {
            id: BeamId(parse(cols[0], row, "beam id")?),
            probs,
            combined_p: parse(cols[axes + 1], row, "combined probability")?,
            completed: parse_flag(cols[axes + 2], row, "completed")?,
            deliverable: parse_flag(cols[axes + 3], row, "deliverable")?,
        });
    }
    Ok(Response {
        slot_index,
        status,
        rows,
    })
}

pub fn decode_request(text: &str) -> Result<Request, ProtocolError> {
    read_request(&mut text.as_bytes())?.ok_or(ProtocolError::Truncated { got: 0, expected: 1 })
}

pub fn decode_response(text: &str) -> Result<Response, ProtocolError> {
    read_response(&mut text.as_bytes())
}

pub fn write_request<W: Write>(w: &mut W, req: &Request) -> Result<(), ProtocolError> {
    w.write_all(encode_request(req)?.as_bytes())?;
    w.flush()?;
    Ok(())
}
