//! Per-slot beam verification: one invariant query per beam axis, run in
//! priority order on a deadline-bounded pool of workers.

pub mod protocol;
pub mod server;

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use crate::beam::{build_queries, priority_order, BeamError, BeamId, BeamSpec};
use crate::motion::MotionModel1D;
use crate::omc::SlotModelSet;
use crate::smc::{check_invariant_within, derive_seed, Budget, ProbabilityEstimate, SmcConfig};

pub use server::{serve, BeamService};

/// Probability a beam needs to be considered deliverable by default.
pub const DEFAULT_CUTOFF: f64 = 0.5;
/// The stricter cutoff suggested for clinical use.
pub const STRICT_CUTOFF: f64 = 0.91;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyConfig {
    pub cutoff: f64,
    pub scope_ms: f64,
    /// Wall-clock budget for the whole slot; `None` runs to completion.
    pub deadline: Option<Duration>,
    pub workers: usize,
    pub smc: SmcConfig,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            cutoff: DEFAULT_CUTOFF,
            scope_ms: 3000.0,
            deadline: Some(Duration::from_millis(3000)),
            workers: thread::available_parallelism().map_or(1, |n| n.get()),
            smc: SmcConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationResult {
    pub id: BeamId,
    pub slot_index: u64,
    /// One estimate per axis; empty for gaps and malformed beams.
    pub axes: Vec<ProbabilityEstimate>,
    /// Minimum over axes.
    pub combined_p: f64,
    pub completed: bool,
    pub deliverable: bool,
    pub error: Option<BeamError>,
}

impl VerificationResult {
    fn refused(id: BeamId, slot_index: u64, error: Option<BeamError>) -> Self {
        Self {
            id,
            slot_index,
            axes: Vec::new(),
            combined_p: 0.0,
            completed: false,
            deliverable: false,
            error,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotStatus {
    Ok,
    /// No valid models; the client must pause.
    Gap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotResponse {
    pub slot_index: u64,
    pub status: SlotStatus,
    /// One result per requested beam, in request order.
    pub results: Vec<VerificationResult>,
}

impl SlotResponse {
    /// Every beam refused because the slot has no valid models.
    pub fn gap(slot_index: u64, beams: &[BeamSpec]) -> Self {
        Self {
            slot_index,
            status: SlotStatus::Gap,
            results: beams
                .iter()
                .map(|b| VerificationResult::refused(b.id, slot_index, None))
                .collect(),
        }
    }
}

fn verify_beam(
    beam: &BeamSpec,
    set: &SlotModelSet,
    models: &[MotionModel1D<f64>],
    cfg: &VerifyConfig,
    budget: Budget,
) -> VerificationResult {
    let slot = set.slot_index;
    if beam.axes() != models.len() {
        let err = BeamError::Axes {
            id: beam.id,
            expected: models.len(),
            got: beam.axes(),
        };
        return VerificationResult::refused(beam.id, slot, Some(err));
    }
    let queries = match build_queries(beam, cfg.scope_ms) {
        Ok(q) => q,
        Err(e) => return VerificationResult::refused(beam.id, slot, Some(e)),
    };
    let mut smc = cfg.smc;
    smc.deadline = None;
    let mut axes = Vec::with_capacity(queries.len());
    for (axis, (q, m)) in queries.iter().zip(models).enumerate() {
        let seed = derive_seed(cfg.seed, &[slot, beam.id.0, axis as u64]);
        let est = check_invariant_within(m, &m.perturbation(), q, &smc, seed, budget);
        let done = est.completed;
        axes.push(est);
        if !done {
            break;
        }
    }
    while axes.len() < queries.len() {
        axes.push(ProbabilityEstimate::incomplete());
    }
    let combined_p = axes.iter().map(|e| e.p_hat).fold(1.0, f64::min);
    let completed = axes.iter().all(|e| e.completed);
    VerificationResult {
        id: beam.id,
        slot_index: slot,
        deliverable: completed && combined_p >= cfg.cutoff,
        axes,
        combined_p,
        completed,
        error: None,
    }
}

/// Verifies every beam against the slot's models.
///
/// Beams are taken in [`crate::beam::prioritize`] order by `cfg.workers`
/// threads. Beams not finished when the deadline passes are reported
/// incomplete and not deliverable. An invalid model set yields a gap
/// response.
pub fn verify_slot(beams: &[BeamSpec], set: &SlotModelSet, cfg: &VerifyConfig) -> SlotResponse {
    verify_slot_cancellable(beams, set, cfg, None)
}

/// As [`verify_slot`], also stopping as soon as `cancel` is raised.
pub fn verify_slot_cancellable(
    beams: &[BeamSpec],
    set: &SlotModelSet,
    cfg: &VerifyConfig,
    cancel: Option<&AtomicBool>,
) -> SlotResponse {
    let started = Instant::now();
    let Some(models) = set.usable() else {
        return SlotResponse::gap(set.slot_index, beams);
    };
    let mut budget = match cfg.deadline {
        Some(d) => Budget::until(started + d),
        None => Budget::unlimited(),
    };
    if let Some(flag) = cancel {
        budget = budget.with_cancel(flag);
    }

    let order = priority_order(beams);
    let next = AtomicUsize::new(0);
    let done: Mutex<Vec<Option<VerificationResult>>> = Mutex::new(vec![None; beams.len()]);
    let workers = cfg.workers.clamp(1, order.len().max(1));
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= order.len() || budget.expired() {
                    break;
                }
                let i = order[k];
                let r = verify_beam(&beams[i], set, &models, cfg, budget);
                done.lock().expect("result lock poisoned")[i] = Some(r);
            });
        }
    });

    let results = beams
        .iter()
        .zip(done.into_inner().expect("result lock poisoned"))
        .map(|(b, r)| {
            r.unwrap_or_else(|| {
                let mut r = VerificationResult::refused(b.id, set.slot_index, None);
                r.axes = vec![ProbabilityEstimate::incomplete(); b.axes()];
                r
            })
        })
        .collect();
    SlotResponse {
        slot_index: set.slot_index,
        status: SlotStatus::Ok,
        results,
    }
}
