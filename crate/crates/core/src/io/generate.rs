//! Synthetic motion traces with scripted changes, and beam lists drawn from
//! the empirical distribution of a template list.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use super::{BeamListFile, MotionTrace};
use crate::beam::{AxisBounds, BeamSpec};
use crate::motion::{harmonic_sum, MotionModel1D, DEFAULT_DT_MS};

/// First id handed out by [`gen_beam_list`].
const FIRST_ID: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenerateError {
    #[error("a trace needs 1 or 3 axes, got {0}")]
    Axes(usize),
    #[error("duration and sample interval must be positive and finite")]
    Timing,
    #[error("noise sigma must be finite and non-negative, got {0}")]
    Noise(f64),
    #[error("event {0} is malformed: {1}")]
    Event(usize, String),
    #[error("events {0} and {1} overlap on the same axis")]
    Overlap(usize, usize),
    #[error("template beam list is empty")]
    EmptyTemplate,
    #[error("requested beam count must be at least 1")]
    Count,
}

/// Base motion and measurement noise for one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisParams {
    pub model: MotionModel1D<f64>,
    pub noise_sigma: f64,
}

impl AxisParams {
    pub fn new(model: MotionModel1D<f64>) -> Self {
        Self {
            model,
            noise_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    /// Multiplies the breathing period.
    PeriodScale(f64),
    /// Multiplies every harmonic coefficient.
    AmplitudeScale(f64),
    /// Shifts the baseline by this many mm.
    BaselineStep(f64),
    /// Sets the noise sigma to this value.
    Noise(f64),
}

/// A change that fades in linearly over `[at_ms, at_ms + fade_ms]` and
/// then persists. `axis: None` applies it to every axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChangeEvent {
    pub axis: Option<usize>,
    pub at_ms: f64,
    pub fade_ms: f64,
    pub kind: EventKind,
}

impl ChangeEvent {
    pub fn new(at_ms: f64, fade_ms: f64, kind: EventKind) -> Self {
        Self {
            axis: None,
            at_ms,
            fade_ms,
            kind,
        }
    }

    pub fn on_axis(mut self, axis: usize) -> Self {
        self.axis = Some(axis);
        self
    }

    fn end(&self) -> f64 {
        self.at_ms + self.fade_ms
    }

    /// Fraction of the change applied at time `t`.
    fn weight(&self, t: f64) -> f64 {
        if t <= self.at_ms {
            0.0
        } else if t >= self.end() {
            1.0
        } else {
            (t - self.at_ms) / self.fade_ms
        }
    }

    fn touches(&self, axis: usize) -> bool {
        self.axis.is_none_or(|a| a == axis)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSpec {
    pub axes: Vec<AxisParams>,
    pub interval_ms: f64,
    pub duration_ms: f64,
    pub events: Vec<ChangeEvent>,
}

impl TraceSpec {
    pub fn new(axes: Vec<AxisParams>, duration_ms: f64) -> Self {
        Self {
            axes,
            interval_ms: DEFAULT_DT_MS,
            duration_ms,
            events: Vec::new(),
        }
    }

    pub fn with_event(mut self, event: ChangeEvent) -> Self {
        self.events.push(event);
        self
    }

    fn validate(&self) -> Result<(), GenerateError> {
        let n = self.axes.len();
        if n != 1 && n != 3 {
            return Err(GenerateError::Axes(n));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.interval_ms) || !positive(self.duration_ms) {
            return Err(GenerateError::Timing);
        }
        for ax in &self.axes {
            if !(ax.noise_sigma.is_finite() && ax.noise_sigma >= 0.0) {
                return Err(GenerateError::Noise(ax.noise_sigma));
            }
        }
        for (i, e) in self.events.iter().enumerate() {
            let bad = |m: &str| Err(GenerateError::Event(i, m.to_string()));
            if !(e.at_ms.is_finite() && e.at_ms >= 0.0 && e.fade_ms.is_finite() && e.fade_ms >= 0.0) {
                return bad("onset and fade must be finite and non-negative");
            }
            if e.axis.is_some_and(|a| a >= n) {
                return bad("axis out of range");
            }
            match e.kind {
                EventKind::PeriodScale(s) | EventKind::AmplitudeScale(s) if !positive(s) => {
                    return bad("scale must be positive")
                }
                EventKind::BaselineStep(d) if !d.is_finite() => return bad("step must be finite"),
                EventKind::Noise(s) if !(s.is_finite() && s >= 0.0) => {
                    return bad("sigma must be finite and non-negative")
                }
                _ => {}
            }
        }
        for (i, a) in self.events.iter().enumerate() {
            for (j, b) in self.events.iter().enumerate().skip(i + 1) {
                let shared = match (a.axis, b.axis) {
                    (Some(x), Some(y)) => x == y,
                    _ => true,
                };
                let overlap = a.at_ms == b.at_ms || (a.at_ms < b.end() && b.at_ms < a.end());
                if shared && overlap {
                    return Err(GenerateError::Overlap(i, j));
                }
            }
        }
        Ok(())
    }
}

/// Per-axis state of all events at one instant.
struct Applied {
    period_scale: f64,
    amplitude_scale: f64,
    offset: f64,
    sigma: f64,
}

fn applied(events: &[(ChangeEvent, f64)], base_sigma: f64, t: f64) -> Applied {
    let mut out = Applied {
        period_scale: 1.0,
        amplitude_scale: 1.0,
        offset: 0.0,
        sigma: base_sigma,
    };
    for (e, sigma_delta) in events {
        let w = e.weight(t);
        match e.kind {
            EventKind::PeriodScale(s) => out.period_scale *= 1.0 + (s - 1.0) * w,
            EventKind::AmplitudeScale(s) => out.amplitude_scale *= 1.0 + (s - 1.0) * w,
            EventKind::BaselineStep(d) => out.offset += d * w,
            EventKind::Noise(_) => out.sigma += sigma_delta * w,
        }
    }
    out
}

/// Samples every `interval_ms` from 0 through `duration_ms`.
///
/// Without events and noise an axis reproduces `evaluate` exactly. Period
/// changes are applied to the instantaneous frequency, so phase stays
/// continuous through a fade.
pub fn gen_motion_trace(spec: &TraceSpec, seed: u64) -> Result<MotionTrace, GenerateError> {
    spec.validate()?;
    let steps = (spec.duration_ms / spec.interval_ms).floor() as usize;
    let mut columns = Vec::with_capacity(spec.axes.len());

    for (axis, params) in spec.axes.iter().enumerate() {
        let m = &params.model;
        let mut mine: Vec<ChangeEvent> = spec.events.iter().copied().filter(|e| e.touches(axis)).collect();
        mine.sort_by(|a, b| a.at_ms.total_cmp(&b.at_ms));
        // noise events set a level; store the change from the previous level
        let mut level = params.noise_sigma;
        let mine: Vec<(ChangeEvent, f64)> = mine
            .into_iter()
            .map(|e| match e.kind {
                EventKind::Noise(s) => {
                    let d = s - level;
                    level = s;
                    (e, d)
                }
                _ => (e, 0.0),
            })
            .collect();
        let reshapes = mine
            .iter()
            .any(|(e, _)| matches!(e.kind, EventKind::PeriodScale(_) | EventKind::AmplitudeScale(_)));

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(axis as u64);
        let f0 = m.frequency();
        let mut phase = 0.0;
        let mut prev_freq = f0;
        let mut col = Vec::with_capacity(steps + 1);
        for i in 0..=steps {
            let t = i as f64 * spec.interval_ms;
            let s = applied(&mine, params.noise_sigma, t);
            let clean = if reshapes {
                let freq = f0 / s.period_scale;
                if i > 0 {
                    phase += 0.5 * (prev_freq + freq) * spec.interval_ms;
                }
                prev_freq = freq;
                m.base + m.drift * t + s.amplitude_scale * harmonic_sum(&m.a, &m.b, phase)
            } else {
                m.evaluate(t)
            };
            let mut x = clean + s.offset;
            if s.sigma > 0.0 {
                // sigma is finite and positive here, so the constructor cannot fail
                x += Normal::new(0.0, s.sigma).map_or(0.0, |n| n.sample(&mut rng));
            }
            col.push(x);
        }
        columns.push(col);
    }

    let mut trace = MotionTrace::new(spec.axes.len());
    let mut row = Vec::with_capacity(spec.axes.len());
    for i in 0..=steps {
        row.clear();
        row.extend(columns.iter().map(|c| c[i]));
        trace
            .push(i as f64 * spec.interval_ms, &row)
            .map_err(|e| GenerateError::Event(0, e))?;
    }
    Ok(trace)
}

/// Sample quantile with linear interpolation between order statistics
/// (`h = (n - 1) p`). `sorted` must be ascending and non-empty.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v
}

/// `n` uniforms, one per stratum `[i/n, (i+1)/n)`, in random order. The
/// outer strata are pinned to 0 and 1 so the extremes are reproduced.
fn stratified(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut u: Vec<f64> = (0..n).map(|i| (i as f64 + rng.random::<f64>()) / n as f64).collect();
    if n > 1 {
        u[0] = 0.0;
        u[n - 1] = 1.0;
    }
    u.shuffle(rng);
    u
}

/// `n` beams whose times and bounds follow the template's empirical
/// distributions, drawn independently by inverse CDF.
///
/// Draws are stratified so that quantiles of the output track the
/// template's closely even for a few hundred beams. For 3D templates one
/// draw per axis couples the bounds: a wide lower bound goes with a wide
/// upper bound, as in a symmetric threshold.
pub fn gen_beam_list(template: &BeamListFile, n: usize, seed: u64) -> Result<BeamListFile, GenerateError> {
    if template.beams.is_empty() {
        return Err(GenerateError::EmptyTemplate);
    }
    if n == 0 {
        return Err(GenerateError::Count);
    }
    let axes = template.axes();
    let times = sorted(template.beams.iter().map(|b| b.remaining_ms as f64));
    let lowers: Vec<Vec<f64>> = (0..axes)
        .map(|a| sorted(template.beams.iter().map(|b| b.bounds[a].lower)))
        .collect();
    let uppers: Vec<Vec<f64>> = (0..axes)
        .map(|a| sorted(template.beams.iter().map(|b| b.bounds[a].upper)))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let time_u = stratified(&mut rng, n);
    let axis_u: Vec<Vec<f64>> = (0..axes).map(|_| stratified(&mut rng, n)).collect();
    let beams = (0..n)
        .map(|i| {
            let time = quantile(&times, time_u[i]).round().max(1.0) as u64;
            let bounds = (0..axes)
                .map(|a| {
                    let u = axis_u[a][i];
                    let hi = quantile(&uppers[a], u);
                    if axes == 1 {
                        return AxisBounds::symmetric(hi);
                    }
                    let lo = quantile(&lowers[a], 1.0 - u);
                    AxisBounds::new(lo.min(hi), lo.max(hi))
                })
                .collect();
            BeamSpec::with_bounds(FIRST_ID + i as u64, time, bounds)
        })
        .collect();
    Ok(BeamListFile { beams })
}
