//! Beams, their per-axis position bounds, query construction and the
//! order in which a verification slot works through them.

use std::fmt;

use thiserror::Error;

use crate::smc::InvariantQuery;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BeamId(pub u64);

impl fmt::Display for BeamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Allowed position interval on one axis, in mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisBounds {
    pub lower: f64,
    pub upper: f64,
}

impl AxisBounds {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    /// `[-threshold, +threshold]`.
    pub fn symmetric(threshold: f64) -> Self {
        Self {
            lower: -threshold,
            upper: threshold,
        }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }

    pub fn is_valid(&self) -> bool {
        self.lower.is_finite() && self.upper.is_finite() && self.lower <= self.upper
    }

    /// True for bounds produced by [`AxisBounds::symmetric`].
    pub fn is_symmetric(&self) -> bool {
        self.lower == -self.upper
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamSpec {
    pub id: BeamId,
    /// Beam-on time still to deliver, in ms.
    pub remaining_ms: u64,
    /// One entry in 1D mode, three (x, y, z) in 3D mode.
    pub bounds: Vec<AxisBounds>,
    pub started: bool,
    pub running: bool,
}

impl BeamSpec {
    /// 1D beam with symmetric threshold.
    pub fn symmetric(id: u64, remaining_ms: u64, threshold: f64) -> Self {
        Self {
            id: BeamId(id),
            remaining_ms,
            bounds: vec![AxisBounds::symmetric(threshold)],
            started: false,
            running: false,
        }
    }

    pub fn with_bounds(id: u64, remaining_ms: u64, bounds: Vec<AxisBounds>) -> Self {
        Self {
            id: BeamId(id),
            remaining_ms,
            bounds,
            started: false,
            running: false,
        }
    }

    pub fn axes(&self) -> usize {
        self.bounds.len()
    }

    /// Narrowest allowed interval over all axes.
    pub fn min_width(&self) -> f64 {
        self.bounds
            .iter()
            .map(AxisBounds::width)
            .fold(f64::INFINITY, f64::min)
    }

    /// Whether a 1D or 3D position lies within every axis' bounds.
    pub fn admits(&self, position: &[f64]) -> bool {
        self.bounds
            .iter()
            .zip(position)
            .all(|(b, &x)| b.contains(x))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BeamError {
    #[error("beam {id}: axis {axis} bounds [{lower}, {upper}] are inverted or not finite")]
    Bounds {
        id: BeamId,
        axis: usize,
        lower: f64,
        upper: f64,
    },
    #[error("beam {id}: expected {expected} axes, got {got}")]
    Axes {
        id: BeamId,
        expected: usize,
        got: usize,
    },
}

/// One invariant query per axis of `beam`, each over `scope_ms`.
pub fn build_queries(beam: &BeamSpec, scope_ms: f64) -> Result<Vec<InvariantQuery<f64>>, BeamError> {
    beam.bounds
        .iter()
        .enumerate()
        .map(|(axis, b)| {
            if !b.is_valid() {
                return Err(BeamError::Bounds {
                    id: beam.id,
                    axis,
                    lower: b.lower,
                    upper: b.upper,
                });
            }
            InvariantQuery::new(scope_ms, b.lower, b.upper).map_err(|_| BeamError::Bounds {
                id: beam.id,
                axis,
                lower: b.lower,
                upper: b.upper,
            })
        })
        .collect()
}

/// Verification order for one slot.
///
/// The running beam comes first, then every other started beam. The rest
/// alternate between the widest-bounds pick and the shortest-remaining-time
/// pick. Ties fall back to ascending id.
pub fn prioritize(beams: &[BeamSpec]) -> Vec<BeamSpec> {
    priority_order(beams).into_iter().map(|i| beams[i].clone()).collect()
}

/// [`prioritize`] as indices into `beams`.
pub fn priority_order(beams: &[BeamSpec]) -> Vec<usize> {
    let mut by_id: Vec<usize> = (0..beams.len()).collect();
    by_id.sort_by_key(|&i| beams[i].id);

    let mut out = Vec::with_capacity(beams.len());
    out.extend(by_id.iter().copied().filter(|&i| beams[i].running));
    out.extend(
        by_id
            .iter()
            .copied()
            .filter(|&i| !beams[i].running && beams[i].started),
    );

    let rest: Vec<usize> = by_id
        .into_iter()
        .filter(|&i| !beams[i].running && !beams[i].started)
        .collect();
    // stable sorts keep the id order among equal keys
    let mut wide = rest.clone();
    wide.sort_by(|&a, &b| beams[b].min_width().total_cmp(&beams[a].min_width()));
    let mut short = rest.clone();
    short.sort_by_key(|&i| beams[i].remaining_ms);

    let mut taken = vec![false; beams.len()];
    let mut cursors = [0usize, 0usize];
    let lists = [&wide, &short];
    let mut pick = 0;
    for _ in 0..rest.len() {
        let (list, cursor) = (lists[pick], &mut cursors[pick]);
        while taken[list[*cursor]] {
            *cursor += 1;
        }
        let i = list[*cursor];
        taken[i] = true;
        out.push(i);
        pick = 1 - pick;
    }
    out
}
