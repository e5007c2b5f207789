//! One-axis respiratory motion model: a drifting base with four harmonics,
//! plus the randomly perturbed variant used for statistical checking.
//!
//! Time is in milliseconds since the model's creation, positions in mm.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::Scalar;

/// Number of harmonic terms carried by a model.
pub const HARMONICS: usize = 4;

/// Default simulation step in ms.
pub const DEFAULT_DT_MS: f64 = 38.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("period must be positive and finite, got {0}")]
    Period(f64),
    #[error("step duration must be positive and finite, got {0}")]
    Step(f64),
    #[error("accuracy must lie in [0, 100], got {0}")]
    Accuracy(f64),
    #[error("model parameter `{0}` is not finite")]
    NonFinite(&'static str),
    #[error("perturbation waits must satisfy 0 < min <= max, got [{0}, {1}]")]
    Waits(f64, f64),
    #[error("perturbation rate `{0}` must be finite and non-negative")]
    Rate(&'static str),
}

/// Motion along one spatial axis:
/// `x(t) = base + drift*t + sum_k a[k]*cos(k*f*t) + b[k]*sin(k*f*t)` with `f = 2*pi/period`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionModel1D<T> {
    pub period: T,
    pub drift: T,
    pub base: T,
    pub a: [T; HARMONICS],
    pub b: [T; HARMONICS],
    /// Percentage; 100 means no perturbation.
    pub accuracy: T,
    pub dt: T,
}

impl<T: Scalar> MotionModel1D<T> {
    /// Deterministic model (accuracy 100) stepped at 38 ms.
    pub fn new(
        period: T,
        drift: T,
        base: T,
        a: [T; HARMONICS],
        b: [T; HARMONICS],
    ) -> Result<Self, ModelError> {
        let m = Self {
            period,
            drift,
            base,
            a,
            b,
            accuracy: T::lit(100.0),
            dt: T::lit(DEFAULT_DT_MS),
        };
        m.validate()?;
        Ok(m)
    }

    /// A model with no harmonics: constant `base` plus drift.
    pub fn flat(base: T, drift: T, period: T) -> Result<Self, ModelError> {
        Self::new(period, drift, base, [T::zero(); HARMONICS], [T::zero(); HARMONICS])
    }

    pub fn with_accuracy(mut self, accuracy: T) -> Result<Self, ModelError> {
        self.accuracy = accuracy;
        self.validate()?;
        Ok(self)
    }

    pub fn with_dt(mut self, dt: T) -> Result<Self, ModelError> {
        self.dt = dt;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.period.is_finite() && self.period > T::zero()) {
            return Err(ModelError::Period(self.period.as_f64()));
        }
        if !(self.dt.is_finite() && self.dt > T::zero()) {
            return Err(ModelError::Step(self.dt.as_f64()));
        }
        if !(self.accuracy >= T::zero() && self.accuracy <= T::lit(100.0)) {
            return Err(ModelError::Accuracy(self.accuracy.as_f64()));
        }
        if !self.drift.is_finite() {
            return Err(ModelError::NonFinite("drift"));
        }
        if !self.base.is_finite() {
            return Err(ModelError::NonFinite("base"));
        }
        if self.a.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("a"));
        }
        if self.b.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("b"));
        }
        Ok(())
    }

    /// Angular frequency in rad/ms, always derived from `period`.
    #[inline]
    pub fn frequency(&self) -> T {
        T::TAU() / self.period
    }

    /// Position at `t` ms after model creation.
    #[inline]
    pub fn evaluate(&self, t: T) -> T {
        position(self.base, self.drift, &self.a, &self.b, self.frequency(), t)
    }

    /// Upper bound on `|x(t) - base - drift*t|`.
    pub fn amplitude_bound(&self) -> T {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(a, b)| a.hypot(*b))
            .sum()
    }

    /// Perturbation processes implied by this model's accuracy.
    pub fn perturbation(&self) -> PerturbationConfig<T> {
        // accuracy was validated on construction
        derive_perturbation(self.accuracy).unwrap_or_else(|_| PerturbationConfig::none())
    }
}

/// Sum of the harmonic terms at `phase = f*t`.
///
/// Higher harmonics come from the angle-addition recurrence so that one
/// `sin_cos` serves all four terms.
#[inline]
pub(crate) fn harmonic_sum<T: Scalar>(a: &[T; HARMONICS], b: &[T; HARMONICS], phase: T) -> T {
    let (s1, c1) = phase.sin_cos();
    let (mut s, mut c) = (s1, c1);
    let mut acc = a[0] * c + b[0] * s;
    for k in 1..HARMONICS {
        let next_c = c * c1 - s * s1;
        s = s * c1 + c * s1;
        c = next_c;
        acc = acc + a[k] * c + b[k] * s;
    }
    acc
}

#[inline]
pub(crate) fn position<T: Scalar>(
    base: T,
    drift: T,
    a: &[T; HARMONICS],
    b: &[T; HARMONICS],
    freq: T,
    t: T,
) -> T {
    base + drift * t + harmonic_sum(a, b, freq * t)
}

/// Rates and waits of the six random modifier processes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationConfig<T> {
    /// Applied independently to `a[k]` and `b[k]` of one harmonic per event.
    pub term_rate: T,
    pub base_rate: T,
    /// rad/ms, applied to the angular frequency.
    pub freq_rate: T,
    pub min_wait: T,
    pub max_wait: T,
}

impl<T: Scalar> PerturbationConfig<T> {
    pub fn none() -> Self {
        Self {
            term_rate: T::zero(),
            base_rate: T::zero(),
            freq_rate: T::zero(),
            min_wait: T::lit(10.0),
            max_wait: T::lit(1000.0),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = |v: T| v.is_finite() && v >= T::zero();
        if !ok(self.term_rate) {
            return Err(ModelError::Rate("term_rate"));
        }
        if !ok(self.base_rate) {
            return Err(ModelError::Rate("base_rate"));
        }
        if !ok(self.freq_rate) {
            return Err(ModelError::Rate("freq_rate"));
        }
        if !(self.min_wait > T::zero() && self.min_wait <= self.max_wait && self.max_wait.is_finite()) {
            return Err(ModelError::Waits(self.min_wait.as_f64(), self.max_wait.as_f64()));
        }
        Ok(())
    }

    /// True when every rate is zero, so all runs coincide with `evaluate`.
    pub fn is_deterministic(&self) -> bool {
        self.term_rate == T::zero() && self.base_rate == T::zero() && self.freq_rate == T::zero()
    }
}

/// Modifier rates for an accuracy percentage.
pub fn derive_perturbation<T: Scalar>(accuracy: T) -> Result<PerturbationConfig<T>, ModelError> {
    if !(accuracy >= T::zero() && accuracy <= T::lit(100.0)) {
        return Err(ModelError::Accuracy(accuracy.as_f64()));
    }
    let accrate = (T::lit(100.0) - accuracy) / T::lit(15.0);
    Ok(PerturbationConfig {
        term_rate: accrate * T::lit(0.1),
        base_rate: accrate * T::lit(0.25),
        freq_rate: accrate * T::lit(0.0001),
        min_wait: T::lit(10.0),
        max_wait: T::lit(1000.0),
    })
}

/// Positions at uniform `dt` spacing; `positions[i]` is at `start_time + i*dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub start_time: T,
    pub dt: T,
    pub positions: Vec<T>,
}

impl<T: Scalar> Trajectory<T> {
    /// `(step index, time, position)` triples.
    pub fn iter(&self) -> impl Iterator<Item = (usize, T, T)> + '_ {
        self.positions
            .iter()
            .enumerate()
            .map(move |(i, &x)| (i, self.start_time + T::lit(i as f64) * self.dt, x))
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Index of the last step whose time does not exceed `horizon`.
pub(crate) fn last_step<T: Scalar>(horizon: T, dt: T) -> usize {
    let n = (horizon / dt).floor();
    if n.is_finite() && n > T::zero() {
        n.to_usize().unwrap_or(usize::MAX)
    } else {
        0
    }
}

const MODIFIERS: usize = HARMONICS + 2;
const BASE_MOD: usize = HARMONICS;
const FREQ_MOD: usize = HARMONICS + 1;

/// Step-by-step sampler of one perturbed run.
///
/// Yields `(step index, position)` starting at step 0 (time 0). Modifier
/// events that fall at or before a step's time are applied, in time order,
/// before that step's position is computed.
pub struct PerturbedRun<T> {
    base: T,
    drift: T,
    a: [T; HARMONICS],
    b: [T; HARMONICS],
    freq: T,
    dt: T,
    cfg: PerturbationConfig<T>,
    rng: ChaCha8Rng,
    next_fire: [T; MODIFIERS],
    step: usize,
}

impl<T: Scalar> PerturbedRun<T> {
    /// `stream` selects an independent random sequence for the same seed.
    pub fn new(model: &MotionModel1D<T>, cfg: &PerturbationConfig<T>, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut run = Self {
            base: model.base,
            drift: model.drift,
            a: model.a,
            b: model.b,
            freq: model.frequency(),
            dt: model.dt,
            cfg: *cfg,
            rng,
            next_fire: [T::infinity(); MODIFIERS],
            step: 0,
        };
        for m in 0..MODIFIERS {
            if run.rate_of(m) > T::zero() {
                run.next_fire[m] = run.wait();
            }
        }
        run
    }

    fn rate_of(&self, modifier: usize) -> T {
        match modifier {
            BASE_MOD => self.cfg.base_rate,
            FREQ_MOD => self.cfg.freq_rate,
            _ => self.cfg.term_rate,
        }
    }

    fn wait(&mut self) -> T {
        let (lo, hi) = (self.cfg.min_wait.as_f64(), self.cfg.max_wait.as_f64());
        T::lit(if lo < hi { self.rng.random_range(lo..=hi) } else { lo })
    }

    fn jitter(&mut self, rate: T) -> T {
        let r = rate.as_f64();
        T::lit(self.rng.random_range(-r..=r))
    }

    fn apply_due(&mut self, t: T) {
        loop {
            let mut due = None;
            for (m, &fire) in self.next_fire.iter().enumerate() {
                if fire <= t && due.is_none_or(|d: usize| fire < self.next_fire[d]) {
                    due = Some(m);
                }
            }
            let Some(m) = due else { break };
            let rate = self.rate_of(m);
            match m {
                BASE_MOD => self.base = self.base + self.jitter(rate),
                FREQ_MOD => self.freq = self.freq + self.jitter(rate),
                k => {
                    self.a[k] = self.a[k] + self.jitter(rate);
                    self.b[k] = self.b[k] + self.jitter(rate);
                }
            }
            let next = self.next_fire[m] + self.wait();
            self.next_fire[m] = next;
        }
    }

    /// Current (possibly perturbed) period.
    pub fn period(&self) -> T {
        T::TAU() / self.freq
    }
}

impl<T: Scalar> Iterator for PerturbedRun<T> {
    type Item = (usize, T);

    #[inline]
    fn next(&mut self) -> Option<Self::Item> {
        let i = self.step;
        let t = T::lit(i as f64) * self.dt;
        self.apply_due(t);
        self.step += 1;
        Some((i, position(self.base, self.drift, &self.a, &self.b, self.freq, t)))
    }
}

/// One perturbed trajectory covering `[0, horizon]` at the model's step.
pub fn simulate<T: Scalar>(
    model: &MotionModel1D<T>,
    cfg: &PerturbationConfig<T>,
    horizon: T,
    seed: u64,
) -> Trajectory<T> {
    let steps = last_step(horizon, model.dt) + 1;
    let positions = PerturbedRun::new(model, cfg, seed, 0)
        .take(steps)
        .map(|(_, x)| x)
        .collect();
    Trajectory {
        start_time: T::zero(),
        dt: model.dt,
        positions,
    }
}
