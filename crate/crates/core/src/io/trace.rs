use std::io::{Read, Write};

use super::{field, fmt_f64, line_of, reader, FormatError};

/// Timestamped positions, either one axis or three (x, y, z).
///
/// CSV form: header `t_ms,x_mm` or `t_ms,x_mm,y_mm,z_mm`, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionTrace {
    axes: usize,
    times: Vec<f64>,
    /// Row-major, `axes` values per sample.
    values: Vec<f64>,
}

impl MotionTrace {
    pub fn new(axes: usize) -> Self {
        assert!(axes == 1 || axes == 3, "traces carry 1 or 3 axes");
        Self {
            axes,
            times: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Appends a sample; times must increase strictly and values be finite.
    pub fn push(&mut self, t: f64, position: &[f64]) -> Result<(), String> {
        if position.len() != self.axes {
            return Err(format!("expected {} values, got {}", self.axes, position.len()));
        }
        if !t.is_finite() || self.times.last().is_some_and(|&last| t <= last) {
            return Err(format!("time {t} does not increase strictly"));
        }
        if position.iter().any(|v| !v.is_finite()) {
            return Err("non-finite position".into());
        }
        self.times.push(t);
        self.values.extend_from_slice(position);
        Ok(())
    }

    pub fn axes(&self) -> usize {
        self.axes
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn start(&self) -> Option<f64> {
        self.times.first().copied()
    }

    pub fn end(&self) -> Option<f64> {
        self.times.last().copied()
    }

    pub fn row(&self, i: usize) -> (f64, &[f64]) {
        (self.times[i], &self.values[i * self.axes..(i + 1) * self.axes])
    }

    pub fn rows(&self) -> impl Iterator<Item = (f64, &[f64])> {
        self.times
            .iter()
            .copied()
            .zip(self.values.chunks_exact(self.axes))
    }

    /// Index of the last sample at or before `t`.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        self.times.partition_point(|&s| s <= t).checked_sub(1)
    }

    /// Most recent position at or before `t` (zero-order hold).
    pub fn position_at(&self, t: f64) -> Option<&[f64]> {
        self.index_at(t).map(|i| self.row(i).1)
    }

    /// `(t, value)` samples of one axis with `from <= t <= to`.
    pub fn axis_window(&self, axis: usize, from: f64, to: f64) -> Vec<(f64, f64)> {
        let lo = self.times.partition_point(|&s| s < from);
        let hi = self.times.partition_point(|&s| s <= to);
        (lo..hi)
            .map(|i| (self.times[i], self.values[i * self.axes + axis]))
            .collect()
    }
}

pub fn read_trace<R: Read>(input: R) -> Result<MotionTrace, FormatError> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    let axes = match headers.len() {
        2 => 1,
        4 => 3,
        0 => return Err(FormatError::MissingHeader),
        n => {
            return Err(FormatError::Row {
                line: 1,
                message: format!("trace header must have 2 or 4 columns, found {n}"),
            })
        }
    };
    let mut trace = MotionTrace::new(axes);
    let mut pos = [0.0; 3];
    for record in rdr.records() {
        let record = record?;
        if record.len() != axes + 1 {
            return Err(FormatError::Row {
                line: line_of(&record),
                message: format!("expected {} columns, found {}", axes + 1, record.len()),
            });
        }
        let t: f64 = field(&record, 0, "time")?;
        for (a, p) in pos.iter_mut().take(axes).enumerate() {
            *p = field(&record, a + 1, "position")?;
        }
        trace.push(t, &pos[..axes]).map_err(|message| FormatError::Row {
            line: line_of(&record),
            message,
        })?;
    }
    Ok(trace)
}

pub fn write_trace<W: Write>(trace: &MotionTrace, mut out: W) -> Result<(), FormatError> {
    if trace.axes == 1 {
        writeln!(out, "t_ms,x_mm")?;
    } else {
        writeln!(out, "t_ms,x_mm,y_mm,z_mm")?;
    }
    for (t, p) in trace.rows() {
        let mut line = fmt_f64(t);
        for v in p {
            line.push(',');
            line.push_str(&fmt_f64(*v));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}
