//! The online model-checking cadence.
//!
//! Every slot the axis models are refitted from the trailing window of
//! samples, checked against the observation one second into the slot, and
//! published together. A per-axis tier counter tracks repeated validation
//! failures; once every axis is at tier 3 or above the slot publishes a gap.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::fit::{self, FitError, SampleWindow, DEFAULT_WINDOW_MS};
use crate::io::MotionTrace;
use crate::motion::MotionModel1D;
use crate::smc::{check_reach_box, derive_seed, ReachBoxQuery, SmcConfig};

/// Highest tier an axis can reach.
pub const MAX_TIER: u8 = 4;
/// Tier from which an axis counts against the slot's validity.
pub const INVALID_TIER: u8 = 3;
/// Period given to a flat axis when no other axis yields one.
const FALLBACK_PERIOD_MS: f64 = 4000.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OmcError {
    #[error("feed ends at {end} ms, slot {slot} needs data up to {needed} ms")]
    FeedExhausted { slot: u64, end: f64, needed: f64 },
    #[error("feed is empty")]
    EmptyFeed,
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Time and position margins of the validation box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxParams {
    pub t_plus: f64,
    pub t_minus: f64,
    pub x_plus: f64,
    pub x_minus: f64,
}

impl Default for BoxParams {
    fn default() -> Self {
        Self {
            t_plus: 200.0,
            t_minus: 200.0,
            x_plus: 1.5,
            x_minus: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmcConfig {
    pub slot_interval_ms: f64,
    pub validity_window_ms: f64,
    /// How far into the slot the model is checked against an observation.
    pub validation_offset_ms: f64,
    pub fit_window_ms: f64,
    pub validation: BoxParams,
    /// Validation probability below which an axis moves up a tier.
    pub tp: f64,
    /// Accuracy given to each fitted axis model (x, y, z).
    pub accuracy: [f64; 3],
    pub smc: SmcConfig,
    pub seed: u64,
}

impl Default for OmcConfig {
    fn default() -> Self {
        Self {
            slot_interval_ms: 3000.0,
            validity_window_ms: 6000.0,
            validation_offset_ms: 1000.0,
            fit_window_ms: DEFAULT_WINDOW_MS,
            validation: BoxParams::default(),
            tp: 0.8,
            accuracy: [100.0; 3],
            smc: SmcConfig::default(),
            seed: 0,
        }
    }
}

impl OmcConfig {
    pub fn validate(&self) -> Result<(), OmcError> {
        let bad = |m: &str| Err(OmcError::Config(m.to_string()));
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let non_negative = |v: f64| v.is_finite() && v >= 0.0;
        if !positive(self.slot_interval_ms) || !positive(self.fit_window_ms) {
            return bad("slot interval and fit window must be positive");
        }
        if !(self.validity_window_ms.is_finite() && self.validity_window_ms >= self.slot_interval_ms) {
            return bad("validity window must cover at least one slot interval");
        }
        let b = &self.validation;
        if ![b.t_plus, b.t_minus, b.x_plus, b.x_minus, self.validation_offset_ms]
            .into_iter()
            .all(non_negative)
        {
            return bad("validation box margins and offset must be non-negative");
        }
        if b.t_minus > self.validation_offset_ms {
            return bad("validation box cannot start before the model's creation");
        }
        if !(0.0..=1.0).contains(&self.tp) {
            return bad("tp must lie in [0, 1]");
        }
        if !self.accuracy.iter().all(|a| (0.0..=100.0).contains(a)) {
            return bad("accuracy must lie in [0, 100]");
        }
        self.smc.validate().map_err(|e| OmcError::Config(e.to_string()))
    }

    /// First slot whose fit window lies entirely inside a feed starting at 0.
    pub fn first_full_slot(&self) -> u64 {
        (self.fit_window_ms / self.slot_interval_ms).ceil() as u64
    }
}

/// Per-axis escalation counters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TierState {
    tiers: Vec<u8>,
}

impl TierState {
    pub fn new(axes: usize) -> Self {
        Self { tiers: vec![0; axes] }
    }

    pub fn tiers(&self) -> &[u8] {
        &self.tiers
    }

    /// Moves each axis one tier up when its validation probability is below
    /// `tp` (or the axis has no model), one down otherwise.
    pub fn update(&self, probs: &[Option<f64>], tp: f64) -> Self {
        let tiers = self
            .tiers
            .iter()
            .zip(probs)
            .map(|(&t, p)| match p {
                Some(p) if *p >= tp => t.saturating_sub(1),
                _ => (t + 1).min(MAX_TIER),
            })
            .collect();
        Self { tiers }
    }

    /// True when every axis is at [`INVALID_TIER`] or above.
    pub fn invalid(&self) -> bool {
        self.tiers.iter().all(|&t| t >= INVALID_TIER)
    }
}

/// Why a slot carries no usable models.
#[derive(Debug, Clone, PartialEq)]
pub enum GapReason {
    /// Not enough history yet for a full fit window.
    Warmup,
    /// Every axis sits at a high tier.
    Tiers,
    /// At least one axis could not be fitted.
    Fit,
}

/// The models of one slot, fitted from the same window and sharing one
/// creation time.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotModelSet {
    pub slot_index: u64,
    pub created_at: f64,
    pub valid_until: f64,
    /// `None` for axes whose fit failed.
    pub models: Vec<Option<MotionModel1D<f64>>>,
    pub valid: bool,
    pub gap: Option<GapReason>,
    /// Validation probability per axis; 0 for axes without a model.
    pub validity_probs: Vec<f64>,
    pub fit_errors: Vec<Option<FitError>>,
    /// Tiers after this slot's update.
    pub tiers: Vec<u8>,
}

impl SlotModelSet {
    fn gap(slot_index: u64, created_at: f64, valid_until: f64, tiers: &TierState, reason: GapReason) -> Self {
        let axes = tiers.tiers.len();
        Self {
            slot_index,
            created_at,
            valid_until,
            models: vec![None; axes],
            valid: false,
            gap: Some(reason),
            validity_probs: vec![0.0; axes],
            fit_errors: vec![None; axes],
            tiers: tiers.tiers.clone(),
        }
    }

    pub fn axes(&self) -> usize {
        self.models.len()
    }

    /// The models, but only for a valid slot. An invalid slot never hands
    /// out its (possibly partial) fits.
    pub fn usable(&self) -> Option<Vec<MotionModel1D<f64>>> {
        if !self.valid {
            return None;
        }
        self.models.iter().copied().collect()
    }
}

fn slot_start(feed: &MotionTrace, slot: u64, cfg: &OmcConfig) -> Result<f64, OmcError> {
    let start = feed.start().ok_or(OmcError::EmptyFeed)?;
    Ok(start + slot as f64 * cfg.slot_interval_ms)
}

fn fit_axis(feed: &MotionTrace, axis: usize, from: f64, to: f64) -> Result<fit::Fit<f64>, FitError> {
    let window = SampleWindow::new(feed.axis_window(axis, from, to))?.with_origin(to);
    fit::fit_window(&window)
}

/// Runs one slot: fit every axis, validate against the feed, update tiers.
pub fn run_slot(
    feed: &MotionTrace,
    slot_index: u64,
    prev: &TierState,
    cfg: &OmcConfig,
) -> Result<(SlotModelSet, TierState), OmcError> {
    let created_at = slot_start(feed, slot_index, cfg)?;
    let valid_until = created_at + cfg.validity_window_ms;
    let t_o = created_at + cfg.validation_offset_ms;
    let end = feed.end().unwrap_or(f64::NEG_INFINITY);
    if end < t_o {
        return Err(OmcError::FeedExhausted {
            slot: slot_index,
            end,
            needed: t_o,
        });
    }
    let from = created_at - cfg.fit_window_ms;
    if from < feed.start().unwrap_or(0.0) {
        let set = SlotModelSet::gap(slot_index, created_at, valid_until, prev, GapReason::Warmup);
        return Ok((set, prev.clone()));
    }
    let axes = feed.axes();

    let mut fits: Vec<Result<fit::Fit<f64>, FitError>> = thread::scope(|s| {
        let handles: Vec<_> = (0..axes)
            .map(|axis| s.spawn(move || fit_axis(feed, axis, from, created_at)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("fit thread panicked"))
            .collect()
    });

    // a flat axis borrows its period from an oscillating one
    let borrowed = fits
        .iter()
        .find_map(|f| f.as_ref().ok().map(|f| f.model.period))
        .unwrap_or(FALLBACK_PERIOD_MS);
    for (axis, f) in fits.iter_mut().enumerate() {
        if matches!(f, Err(FitError::Flat(_))) {
            let window = SampleWindow::new(feed.axis_window(axis, from, created_at))
                .map(|w| w.with_origin(created_at));
            *f = window.and_then(|w| fit::fit(&w, borrowed));
        }
    }

    let observed = feed
        .position_at(t_o)
        .expect("feed covers the validation instant")
        .to_vec();
    let models: Vec<Option<MotionModel1D<f64>>> = fits
        .iter()
        .enumerate()
        .map(|(axis, f)| {
            f.as_ref()
                .ok()
                .and_then(|f| f.model.with_accuracy(cfg.accuracy[axis]).ok())
        })
        .collect();

    let probs: Vec<Option<f64>> = thread::scope(|s| {
        let handles: Vec<_> = models
            .iter()
            .enumerate()
            .map(|(axis, m)| {
                let x_obs = observed[axis];
                s.spawn(move || {
                    let m = m.as_ref()?;
                    let b = &cfg.validation;
                    let q = ReachBoxQuery::around_observation(
                        cfg.validation_offset_ms,
                        x_obs,
                        b.t_plus,
                        b.t_minus,
                        b.x_plus,
                        b.x_minus,
                    )
                    .ok()?;
                    let seed = derive_seed(cfg.seed, &[slot_index, axis as u64]);
                    Some(check_reach_box(m, &m.perturbation(), &q, &cfg.smc, seed).p_hat)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("validation thread panicked"))
            .collect()
    });

    let tiers = prev.update(&probs, cfg.tp);
    let all_fitted = models.iter().all(Option::is_some);
    let gap = if !all_fitted {
        Some(GapReason::Fit)
    } else if tiers.invalid() {
        Some(GapReason::Tiers)
    } else {
        None
    };
    let set = SlotModelSet {
        slot_index,
        created_at,
        valid_until,
        valid: gap.is_none(),
        gap,
        models,
        validity_probs: probs.iter().map(|p| p.unwrap_or(0.0)).collect(),
        fit_errors: fits.into_iter().map(Result::err).collect(),
        tiers: tiers.tiers.clone(),
    };
    Ok((set, tiers))
}

/// Replays a feed slot by slot, keeping tier state between slots and every
/// published set.
#[derive(Debug, Clone)]
pub struct OmcPipeline {
    feed: Arc<MotionTrace>,
    cfg: OmcConfig,
    tiers: TierState,
    published: BTreeMap<u64, SlotModelSet>,
    next_slot: u64,
}

impl OmcPipeline {
    pub fn new(feed: Arc<MotionTrace>, cfg: OmcConfig) -> Result<Self, OmcError> {
        cfg.validate()?;
        if feed.is_empty() {
            return Err(OmcError::EmptyFeed);
        }
        let tiers = TierState::new(feed.axes());
        Ok(Self {
            feed,
            cfg,
            tiers,
            published: BTreeMap::new(),
            next_slot: 0,
        })
    }

    pub fn config(&self) -> &OmcConfig {
        &self.cfg
    }

    pub fn feed(&self) -> &MotionTrace {
        &self.feed
    }

    /// Slot containing feed time `t`.
    pub fn slot_at(&self, t: f64) -> u64 {
        let start = self.feed.start().unwrap_or(0.0);
        ((t - start) / self.cfg.slot_interval_ms).floor().max(0.0) as u64
    }

    /// Start time of `slot`.
    pub fn slot_time(&self, slot: u64) -> f64 {
        self.feed.start().unwrap_or(0.0) + slot as f64 * self.cfg.slot_interval_ms
    }

    /// Runs every slot up to and including `slot` and returns its set.
    pub fn advance_to(&mut self, slot: u64) -> Result<&SlotModelSet, OmcError> {
        while self.next_slot <= slot {
            let (set, tiers) = run_slot(&self.feed, self.next_slot, &self.tiers, &self.cfg)?;
            self.tiers = tiers;
            self.published.insert(self.next_slot, set);
            self.next_slot += 1;
        }
        Ok(&self.published[&slot])
    }

    pub fn published(&self) -> impl Iterator<Item = &SlotModelSet> {
        self.published.values()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    /// Boundaries are produced as fast as they are consumed.
    Batch,
    /// Each boundary is held back until that much wall time has passed.
    Live,
}

/// Slot boundaries `start, start + interval, ...` as `(index, time)`.
#[derive(Debug, Clone)]
pub struct SlotClock {
    start: f64,
    interval: f64,
    next: u64,
    mode: ClockMode,
    epoch: Instant,
}

impl Iterator for SlotClock {
    type Item = (u64, f64);

    fn next(&mut self) -> Option<Self::Item> {
        let offset = self.next as f64 * self.interval;
        if self.mode == ClockMode::Live {
            let due = self.epoch + Duration::from_secs_f64(offset / 1000.0);
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
        let item = (self.next, self.start + offset);
        self.next += 1;
        Some(item)
    }
}

pub fn slot_clock(start: f64, cfg: &OmcConfig, mode: ClockMode) -> SlotClock {
    SlotClock {
        start,
        interval: cfg.slot_interval_ms,
        next: 0,
        mode,
        epoch: Instant::now(),
    }
}
