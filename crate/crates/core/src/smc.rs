//! Statistical model checking of motion models by Monte-Carlo simulation.
//!
//! Three query forms are supported:
//!
//! * invariance: the position stays inside `[lower, upper]` at every step
//!   within `scope` ms,
//! * bounding-box reachability: some step inside `[t_lo, t_hi]` has its
//!   position inside `[x_lo, x_hi]`,
//! * expected extrema: the mean over runs of each run's minimum and maximum.
//!
//! The number of runs is fixed up front by the Chernoff-Hoeffding bound
//! `ceil(ln(2/delta) / (2*epsilon^2))`, so the worst-case cost of a query is
//! known before it starts. Run `i` of a query draws from random stream `i` of
//! the query seed, which makes results independent of how runs are split
//! across threads.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::motion::{last_step, MotionModel1D, PerturbationConfig, PerturbedRun};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryError {
    #[error("query bounds are inverted or not finite: [{0}, {1}]")]
    Bounds(f64, f64),
    #[error("query scope must be positive, got {0}")]
    Scope(f64),
    #[error("time window [{0}, {1}] must satisfy t_lo <= t_hi <= horizon = {2}")]
    Window(f64, f64, f64),
    #[error("epsilon must lie in (0, 0.5) and delta in (0, 1)")]
    Confidence,
}

/// `Pr[<= scope] ([] lower <= x && x <= upper)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvariantQuery<T> {
    pub scope: T,
    pub lower: T,
    pub upper: T,
}

impl<T: Scalar> InvariantQuery<T> {
    pub fn new(scope: T, lower: T, upper: T) -> Result<Self, QueryError> {
        if !(scope.is_finite() && scope > T::zero()) {
            return Err(QueryError::Scope(scope.as_f64()));
        }
        if !(lower.is_finite() && upper.is_finite() && lower <= upper) {
            return Err(QueryError::Bounds(lower.as_f64(), upper.as_f64()));
        }
        Ok(Self { scope, lower, upper })
    }
}

/// `Pr[<> within horizon] (t_lo <= t <= t_hi && x_lo <= x <= x_hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReachBoxQuery<T> {
    pub horizon: T,
    pub t_lo: T,
    pub t_hi: T,
    pub x_lo: T,
    pub x_hi: T,
}

impl<T: Scalar> ReachBoxQuery<T> {
    /// Box around an observation `x_obs` made `since_creation` ms after the
    /// model was created.
    pub fn around_observation(
        since_creation: T,
        x_obs: T,
        t_plus: T,
        t_minus: T,
        x_plus: T,
        x_minus: T,
    ) -> Result<Self, QueryError> {
        Self::new(
            since_creation + t_plus,
            since_creation - t_minus,
            since_creation + t_plus,
            x_obs - x_minus,
            x_obs + x_plus,
        )
    }

    pub fn new(horizon: T, t_lo: T, t_hi: T, x_lo: T, x_hi: T) -> Result<Self, QueryError> {
        if !(t_lo.is_finite() && t_hi.is_finite() && t_lo <= t_hi && t_hi <= horizon) {
            return Err(QueryError::Window(t_lo.as_f64(), t_hi.as_f64(), horizon.as_f64()));
        }
        if !(x_lo.is_finite() && x_hi.is_finite() && x_lo <= x_hi) {
            return Err(QueryError::Bounds(x_lo.as_f64(), x_hi.as_f64()));
        }
        Ok(Self {
            horizon,
            t_lo,
            t_hi,
            x_lo,
            x_hi,
        })
    }
}

/// Accuracy target of an estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmcConfig {
    /// Half-width of the probability interval.
    pub epsilon: f64,
    /// Probability that the true value lies outside the interval.
    pub delta: f64,
    /// Wall-clock budget, measured from the start of the query.
    pub deadline: Option<Duration>,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            delta: 0.05,
            deadline: None,
        }
    }
}

impl SmcConfig {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self, QueryError> {
        let cfg = Self {
            epsilon,
            delta,
            deadline: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_deadline(mut self, deadline: Duration) -> Self {
        self.deadline = Some(deadline);
        self
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        if self.epsilon > 0.0 && self.epsilon < 0.5 && self.delta > 0.0 && self.delta < 1.0 {
            Ok(())
        } else {
            Err(QueryError::Confidence)
        }
    }

    /// Chernoff-Hoeffding run count.
    pub fn run_count(&self) -> usize {
        let n = ((2.0 / self.delta).ln() / (2.0 * self.epsilon * self.epsilon)).ceil();
        (n as usize).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbabilityEstimate {
    pub p_hat: f64,
    pub runs_used: usize,
    /// False iff the budget ran out before all runs finished.
    pub completed: bool,
}

impl ProbabilityEstimate {
    pub fn incomplete() -> Self {
        Self {
            p_hat: 0.0,
            runs_used: 0,
            completed: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtremaEstimate<T> {
    pub min: T,
    pub max: T,
    pub runs_used: usize,
    pub completed: bool,
}

/// When a query must give up: an absolute deadline and/or a shared cancel flag.
#[derive(Debug, Clone, Copy, Default)]
pub struct Budget<'a> {
    pub deadline: Option<Instant>,
    pub cancel: Option<&'a AtomicBool>,
}

impl<'a> Budget<'a> {
    pub fn unlimited() -> Self {
        Self::default()
    }

    pub fn until(deadline: Instant) -> Self {
        Self {
            deadline: Some(deadline),
            cancel: None,
        }
    }

    pub fn with_cancel(mut self, flag: &'a AtomicBool) -> Self {
        self.cancel = Some(flag);
        self
    }

    /// The tighter of `self` and a relative deadline starting now.
    fn tightened(self, relative: Option<Duration>) -> Self {
        let Some(rel) = relative else { return self };
        let candidate = Instant::now() + rel;
        Self {
            deadline: Some(self.deadline.map_or(candidate, |d| d.min(candidate))),
            cancel: self.cancel,
        }
    }

    #[inline]
    pub fn expired(&self) -> bool {
        if let Some(flag) = self.cancel {
            if flag.load(Ordering::Relaxed) {
                return true;
            }
        }
        self.deadline.is_some_and(|d| Instant::now() >= d)
    }
}

/// Outcome of stepping one run under a budget.
enum RunOutcome<R> {
    Done(R),
    OutOfTime,
}

/// Steps one run through `steps` positions, asking `judge` after each step
/// whether the run is decided. `finish` gives the verdict when all steps pass
/// without a decision.
fn drive_run<T: Scalar, R>(
    run: PerturbedRun<T>,
    steps: usize,
    budget: &Budget,
    mut judge: impl FnMut(usize, T) -> Option<R>,
    finish: impl FnOnce() -> R,
) -> RunOutcome<R> {
    for (i, x) in run.take(steps) {
        if budget.expired() {
            return RunOutcome::OutOfTime;
        }
        if let Some(r) = judge(i, x) {
            return RunOutcome::Done(r);
        }
    }
    RunOutcome::Done(finish())
}

/// Counts satisfying runs among `runs` Bernoulli trials.
fn bernoulli<T: Scalar>(
    model: &MotionModel1D<T>,
    cfg: &PerturbationConfig<T>,
    runs: usize,
    seed: u64,
    budget: &Budget,
    trial: impl Fn(PerturbedRun<T>, &Budget) -> RunOutcome<bool>,
) -> ProbabilityEstimate {
    if budget.expired() {
        return ProbabilityEstimate::incomplete();
    }
    if cfg.is_deterministic() {
        // every run is the same trajectory
        return match trial(PerturbedRun::new(model, cfg, seed, 0), budget) {
            RunOutcome::Done(ok) => ProbabilityEstimate {
                p_hat: if ok { 1.0 } else { 0.0 },
                runs_used: runs,
                completed: true,
            },
            RunOutcome::OutOfTime => ProbabilityEstimate::incomplete(),
        };
    }
    let mut hits = 0usize;
    for i in 0..runs {
        match trial(PerturbedRun::new(model, cfg, seed, i as u64), budget) {
            RunOutcome::Done(ok) => hits += ok as usize,
            RunOutcome::OutOfTime => {
                return ProbabilityEstimate {
                    p_hat: if i == 0 { 0.0 } else { hits as f64 / i as f64 },
                    runs_used: i,
                    completed: false,
                };
            }
        }
    }
    ProbabilityEstimate {
        p_hat: hits as f64 / runs as f64,
        runs_used: runs,
        completed: true,
    }
}

fn invariant_trial<T: Scalar>(
    q: InvariantQuery<T>,
    steps: usize,
) -> impl Fn(PerturbedRun<T>, &Budget) -> RunOutcome<bool> {
    move |run, budget| {
        drive_run(
            run,
            steps,
            budget,
            |_, x| (!(x >= q.lower && x <= q.upper)).then_some(false),
            || true,
        )
    }
}

fn reach_trial<T: Scalar>(
    q: ReachBoxQuery<T>,
    dt: T,
) -> impl Fn(PerturbedRun<T>, &Budget) -> RunOutcome<bool> {
    let steps = last_step(q.horizon.min(q.t_hi), dt) + 1;
    move |run, budget| {
        drive_run(
            run,
            steps,
            budget,
            |i, x| {
                let t = T::lit(i as f64) * dt;
                (t >= q.t_lo && x >= q.x_lo && x <= q.x_hi).then_some(true)
            },
            || false,
        )
    }
}

/// Seed for one query, mixed from a session seed and identifying numbers
/// (slot, beam, axis) so that every query gets an unrelated stream.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    // splitmix64 finaliser applied after folding in each part
    let mix = |mut z: u64| {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    parts
        .iter()
        .fold(mix(base), |acc, &p| mix(acc.wrapping_add(0x9e37_79b9_7f4a_7c15) ^ p))
}

/// Probability that the position stays within the query bounds over its scope.
pub fn check_invariant<T: Scalar>(
    model: &MotionModel1D<T>,
    cfg: &PerturbationConfig<T>,
    q: &InvariantQuery<T>,
    smc: &SmcConfig,
    seed: u64,
) -> ProbabilityEstimate {
    check_invariant_within(model, cfg, q, smc, seed, Budget::unlimited())
}

/// As [`check_invariant`], additionally stopping when `budget` runs out.
pub fn check_invariant_within<T: Scalar>(
    model: &MotionModel1D<T>,
    cfg: &PerturbationConfig<T>,
    q: &InvariantQuery<T>,
    smc: &SmcConfig,
    seed: u64,
    budget: Budget,
) -> ProbabilityEstimate {
    let budget = budget.tightened(smc.deadline);
    let steps = last_step(q.scope, model.dt) + 1;
    bernoulli(model, cfg, smc.run_count(), seed, &budget, invariant_trial(*q, steps))
}

/// Probability that some step inside the time window lands inside the box.
pub fn check_reach_box<T: Scalar>(
    model: &MotionModel1D<T>,
    cfg: &PerturbationConfig<T>,
    q: &ReachBoxQuery<T>,
    smc: &SmcConfig,
    seed: u64,
) -> ProbabilityEstimate {
    check_reach_box_within(model, cfg, q, smc, seed, Budget::unlimited())
}

pub fn check_reach_box_within<T: Scalar>(
    model: &MotionModel1D<T>,
    cfg: &PerturbationConfig<T>,
    q: &ReachBoxQuery<T>,
    smc: &SmcConfig,
    seed: u64,
    budget: Budget,
) -> ProbabilityEstimate {
    let budget = budget.tightened(smc.deadline);
    bernoulli(model, cfg, smc.run_count(), seed, &budget, reach_trial(*q, model.dt))
}

/// Invariant probability from an explicit number of runs spread over
/// `threads` threads. Gives the same answer as a sequential run with the same
/// count, since run `i` always uses stream `i`.
pub fn check_invariant_runs<T: Scalar>(
    model: &MotionModel1D<T>,
    cfg: &PerturbationConfig<T>,
    q: &InvariantQuery<T>,
    runs: usize,
    seed: u64,
    threads: usize,
) -> f64 {
    let steps = last_step(q.scope, model.dt) + 1;
    parallel_fraction(model, cfg, runs, seed, threads, invariant_trial(*q, steps))
}

/// Reach-box counterpart of [`check_invariant_runs`].
pub fn check_reach_box_runs<T: Scalar>(
    model: &MotionModel1D<T>,
    cfg: &PerturbationConfig<T>,
    q: &ReachBoxQuery<T>,
    runs: usize,
    seed: u64,
    threads: usize,
) -> f64 {
    parallel_fraction(model, cfg, runs, seed, threads, reach_trial(*q, model.dt))
}

fn parallel_fraction<T: Scalar>(
    model: &MotionModel1D<T>,
    cfg: &PerturbationConfig<T>,
    runs: usize,
    seed: u64,
    threads: usize,
    trial: impl Fn(PerturbedRun<T>, &Budget) -> RunOutcome<bool> + Sync,
) -> f64 {
    let threads = threads.clamp(1, runs.max(1));
    let chunk = runs.div_ceil(threads);
    let budget = Budget::unlimited();
    let hits: usize = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                let trial = &trial;
                let budget = &budget;
                s.spawn(move || {
                    let lo = w * chunk;
                    let hi = ((w + 1) * chunk).min(runs);
                    (lo..hi)
                        .filter(|&i| {
                            matches!(
                                trial(PerturbedRun::new(model, cfg, seed, i as u64), budget),
                                RunOutcome::Done(true)
                            )
                        })
                        .count()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).sum()
    });
    hits as f64 / runs as f64
}

/// Mean of per-run minimum and maximum position over `[0, scope]`.
pub fn estimate_extrema<T: Scalar>(
    model: &MotionModel1D<T>,
    cfg: &PerturbationConfig<T>,
    scope: T,
    smc: &SmcConfig,
    seed: u64,
) -> ExtremaEstimate<T> {
    extrema_runs(model, cfg, scope, smc.run_count(), seed, Budget::unlimited().tightened(smc.deadline))
}

/// Extrema estimate from an explicit run count.
pub fn extrema_runs<T: Scalar>(
    model: &MotionModel1D<T>,
    cfg: &PerturbationConfig<T>,
    scope: T,
    runs: usize,
    seed: u64,
    budget: Budget,
) -> ExtremaEstimate<T> {
    let steps = last_step(scope, model.dt) + 1;
    let one_run = |stream: u64| -> Option<(T, T)> {
        let mut lo = T::infinity();
        let mut hi = T::neg_infinity();
        for (_, x) in PerturbedRun::new(model, cfg, seed, stream).take(steps) {
            if budget.expired() {
                return None;
            }
            lo = lo.min(x);
            hi = hi.max(x);
        }
        Some((lo, hi))
    };
    let runs = if cfg.is_deterministic() { runs.min(1) } else { runs };
    let (mut sum_lo, mut sum_hi, mut used) = (T::zero(), T::zero(), 0usize);
    for i in 0..runs {
        match one_run(i as u64) {
            Some((lo, hi)) => {
                sum_lo = sum_lo + lo;
                sum_hi = sum_hi + hi;
                used += 1;
            }
            None => break,
        }
    }
    if used == 0 {
        return ExtremaEstimate {
            min: T::nan(),
            max: T::nan(),
            runs_used: 0,
            completed: false,
        };
    }
    let n = T::lit(used as f64);
    ExtremaEstimate {
        min: sum_lo / n,
        max: sum_hi / n,
        runs_used: used,
        completed: used == runs,
    }
}
