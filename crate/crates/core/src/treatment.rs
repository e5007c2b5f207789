//! Simulated treatment sessions against a recorded motion trace.
//!
//! Time is kept in whole milliseconds of trace time. A beam only delivers
//! while the trace position (held between samples) lies within its bounds;
//! the log splits the session into delivering, moving and idle intervals
//! that add up to the makespan exactly.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{self, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};

use thiserror::Error;

use crate::beam::{BeamId, BeamSpec};
use crate::io::{gen_beam_list, BeamListFile, GenerateError, MotionTrace};
use crate::service::protocol::{read_response, write_request, ProtocolError, Request, Response};
use crate::service::{BeamService, SlotStatus};
use crate::smc::derive_seed;

pub const DEFAULT_TRANSITION_MS: u64 = 1500;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("trace has {trace} axes but beams have {beams}")]
    Axes { trace: usize, beams: usize },
    #[error(transparent)]
    Generate(#[from] GenerateError),
}

/// Robot travel time between beam positions.
#[derive(Debug, Clone, PartialEq)]
pub enum TransitionModel {
    Constant(u64),
    /// Symmetric matrix of travel times in ms.
    Matrix(Vec<Vec<u64>>),
    /// Beam positions in mm and a travel speed in mm/ms.
    Coordinates { points: Vec<[f64; 3]>, speed: f64 },
}

impl TransitionModel {
    /// Travel time from beam `from` to beam `to`; zero when staying put.
    pub fn cost(&self, from: usize, to: usize) -> u64 {
        if from == to {
            return 0;
        }
        match self {
            Self::Constant(c) => *c,
            Self::Matrix(m) => m[from][to],
            Self::Coordinates { points, speed } => {
                let (p, q) = (points[from], points[to]);
                let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
                (d / speed).ceil() as u64
            }
        }
    }

    fn validate(&self, n: usize) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Plan(m));
        match self {
            Self::Constant(_) => Ok(()),
            Self::Matrix(m) => {
                if m.len() != n || m.iter().any(|r| r.len() != n) {
                    return bad(format!("transition matrix must be {n}x{n}"));
                }
                for (i, row) in m.iter().enumerate() {
                    for (j, &c) in row.iter().enumerate() {
                        if c != m[j][i] {
                            return bad(format!("transition matrix is not symmetric at ({i}, {j})"));
                        }
                    }
                }
                Ok(())
            }
            Self::Coordinates { points, speed } => {
                if points.len() != n {
                    return bad(format!("{} coordinates for {n} beams", points.len()));
                }
                if !(speed.is_finite() && *speed > 0.0) {
                    return bad("travel speed must be positive".into());
                }
                if points.iter().flatten().any(|v| !v.is_finite()) {
                    return bad("coordinates must be finite".into());
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentPlan {
    pub beams: Vec<BeamSpec>,
    pub transitions: TransitionModel,
    /// Index of the beam the robot starts at.
    pub initial: usize,
}

impl TreatmentPlan {
    pub fn new(beams: Vec<BeamSpec>) -> Self {
        Self {
            beams,
            transitions: TransitionModel::Constant(DEFAULT_TRANSITION_MS),
            initial: 0,
        }
    }

    pub fn with_transitions(mut self, transitions: TransitionModel) -> Self {
        self.transitions = transitions;
        self
    }

    pub fn with_initial(mut self, initial: usize) -> Self {
        self.initial = initial;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let n = self.beams.len();
        if n == 0 {
            return Err(SimError::Plan("no beams".into()));
        }
        if self.initial >= n {
            return Err(SimError::Plan(format!("initial beam {} out of range", self.initial)));
        }
        if let Some(b) = self.beams.iter().find(|b| b.remaining_ms == 0) {
            return Err(SimError::Plan(format!("beam {} has no delivery time", b.id)));
        }
        let axes = self.beams[0].axes();
        if self.beams.iter().any(|b| b.axes() != axes) {
            return Err(SimError::Plan("beams mix 1D and 3D bounds".into()));
        }
        self.transitions.validate(n)
    }

    fn axes(&self) -> usize {
        self.beams[0].axes()
    }
}

/// Nearest-neighbour chain over the beams flagged in `open`, starting at
/// `from` (included first if open). Ties go to the lower index.
fn greedy_chain(transitions: &TransitionModel, from: usize, open: &[bool]) -> Vec<usize> {
    let mut open = open.to_vec();
    let mut chain = Vec::new();
    let mut at = from;
    if open[at] {
        open[at] = false;
        chain.push(at);
    }
    while let Some(next) = (0..open.len())
        .filter(|&i| open[i])
        .min_by_key(|&i| (transitions.cost(at, i), i))
    {
        open[next] = false;
        chain.push(next);
        at = next;
    }
    chain
}

/// Delivery order for a static target: greedy nearest neighbour from the
/// plan's initial beam.
pub fn static_order(plan: &TreatmentPlan) -> Vec<usize> {
    greedy_chain(&plan.transitions, plan.initial, &vec![true; plan.beams.len()])
}

/// What the session was doing over an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activity {
    Delivering(BeamId),
    Moving(BeamId),
    /// At a beam whose bounds the patient currently violates.
    Blocked(BeamId),
    /// The service reported no valid model.
    Gap,
    /// No beam was cleared for delivery.
    Unscheduled,
}

impl Activity {
    pub fn is_idle(&self) -> bool {
        matches!(self, Self::Blocked(_) | Self::Gap | Self::Unscheduled)
    }

    fn label(&self) -> (&'static str, Option<BeamId>) {
        match *self {
            Self::Delivering(b) => ("deliver", Some(b)),
            Self::Moving(b) => ("move", Some(b)),
            Self::Blocked(b) => ("blocked", Some(b)),
            Self::Gap => ("gap", None),
            Self::Unscheduled => ("unscheduled", None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval {
    pub start_ms: u64,
    pub end_ms: u64,
    pub activity: Activity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Static,
    Omc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentLog {
    pub mode: Mode,
    pub start_ms: u64,
    pub end_ms: u64,
    /// Consecutive, non-overlapping intervals covering `[start_ms, end_ms)`.
    pub intervals: Vec<Interval>,
    /// Times at which an in-progress beam was halted by a bound violation.
    pub halts: Vec<(u64, BeamId)>,
    pub finished: Vec<(u64, BeamId)>,
    pub beam_on_ms: u64,
    pub transition_ms: u64,
    pub idle_ms: u64,
    /// Part of `idle_ms` spent in gap slots.
    pub gap_ms: u64,
    pub interruptions: u64,
    pub beams_total: usize,
    pub complete: bool,
    /// Why the session stopped early, if it did.
    pub aborted: Option<String>,
}

impl TreatmentLog {
    fn new(mode: Mode, start_ms: u64, beams_total: usize) -> Self {
        Self {
            mode,
            start_ms,
            end_ms: start_ms,
            intervals: Vec::new(),
            halts: Vec::new(),
            finished: Vec::new(),
            beam_on_ms: 0,
            transition_ms: 0,
            idle_ms: 0,
            gap_ms: 0,
            interruptions: 0,
            beams_total,
            complete: false,
            aborted: None,
        }
    }

    pub fn makespan_ms(&self) -> u64 {
        self.end_ms - self.start_ms
    }

    pub fn beams_completed(&self) -> usize {
        self.finished.len()
    }

    /// Makespan equals beam-on plus transition plus idle time, and the
    /// intervals tile the session.
    pub fn is_conserved(&self) -> bool {
        let tiled = self
            .intervals
            .windows(2)
            .all(|w| w[0].end_ms == w[1].start_ms)
            && self.intervals.first().is_none_or(|i| i.start_ms == self.start_ms)
            && self.intervals.last().is_none_or(|i| i.end_ms == self.end_ms);
        tiled && self.makespan_ms() == self.beam_on_ms + self.transition_ms + self.idle_ms
    }

    fn record(&mut self, from: u64, to: u64, activity: Activity) {
        debug_assert!(from == self.end_ms && to >= from);
        if to == from {
            return;
        }
        let d = to - from;
        match activity {
            Activity::Delivering(_) => self.beam_on_ms += d,
            Activity::Moving(_) => self.transition_ms += d,
            Activity::Gap => {
                self.idle_ms += d;
                self.gap_ms += d;
            }
            _ => self.idle_ms += d,
        }
        match self.intervals.last_mut() {
            Some(last) if last.activity == activity && last.end_ms == from => last.end_ms = to,
            _ => self.intervals.push(Interval {
                start_ms: from,
                end_ms: to,
                activity,
            }),
        }
        self.end_ms = to;
    }

    fn halt(&mut self, t: u64, id: BeamId) {
        self.interruptions += 1;
        self.halts.push((t, id));
    }
}

/// Session timing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionConfig {
    /// Trace time at which treatment begins.
    pub start_ms: u64,
    /// Sessions still running this long after the start are cut off.
    pub max_duration_ms: u64,
    /// Slot length used by the OMC client; must match the service.
    pub slot_interval_ms: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            start_ms: 21_000,
            max_duration_ms: 4 * 3_600_000,
            slot_interval_ms: 3000,
        }
    }
}

/// Trace lookups in whole milliseconds.
struct Feed<'a> {
    trace: &'a MotionTrace,
    origin: f64,
    /// First millisecond the session may not reach.
    horizon: u64,
}

impl<'a> Feed<'a> {
    fn new(trace: &'a MotionTrace, cfg: &SessionConfig) -> Self {
        let end = trace.end().map_or(0, |e| e.floor().max(0.0) as u64);
        Self {
            trace,
            origin: trace.start().unwrap_or(0.0),
            horizon: end.min(cfg.start_ms.saturating_add(cfg.max_duration_ms)),
        }
    }

    fn admits(&self, beam: &BeamSpec, t: u64) -> bool {
        self.trace.position_at(t as f64).is_some_and(|p| beam.admits(p))
    }

    /// First millisecond after `t` at which the held position may change.
    fn next_change(&self, t: u64) -> u64 {
        let times = self.trace.times();
        let i = self.trace.index_at(t as f64).map_or(0, |i| i + 1);
        times
            .get(i)
            .map_or(self.horizon, |&s| (s.ceil() as u64).max(t + 1))
            .min(self.horizon)
    }

    fn slot_of(&self, t: u64, interval: u64) -> u64 {
        ((t as f64 - self.origin) / interval as f64).floor().max(0.0) as u64
    }

    fn slot_start(&self, slot: u64, interval: u64) -> u64 {
        (self.origin + (slot * interval) as f64).ceil() as u64
    }
}

fn check_axes(plan: &TreatmentPlan, trace: &MotionTrace) -> Result<(), SimError> {
    plan.validate()?;
    if plan.axes() != trace.axes() {
        return Err(SimError::Axes {
            trace: trace.axes(),
            beams: plan.axes(),
        });
    }
    Ok(())
}

/// Delivers beams strictly in [`static_order`], waiting out every bound
/// violation on the current beam.
pub fn run_static(plan: &TreatmentPlan, trace: &MotionTrace, cfg: &SessionConfig) -> Result<TreatmentLog, SimError> {
    check_axes(plan, trace)?;
    let feed = Feed::new(trace, cfg);
    let order = static_order(plan);
    let mut log = TreatmentLog::new(Mode::Static, cfg.start_ms, plan.beams.len());
    let mut remaining: Vec<u64> = plan.beams.iter().map(|b| b.remaining_ms).collect();
    let mut t = cfg.start_ms;
    let mut delivering = false;

    for (k, &i) in order.iter().enumerate() {
        let beam = &plan.beams[i];
        if k > 0 {
            let prev = order[k - 1];
            let arrive = t + plan.transitions.cost(prev, i);
            let stop = arrive.min(feed.horizon.max(t));
            log.record(t, stop, Activity::Moving(beam.id));
            t = stop;
        }
        while remaining[i] > 0 && t < feed.horizon {
            let next = feed.next_change(t);
            if feed.admits(beam, t) {
                let end = next.min(t + remaining[i]);
                log.record(t, end, Activity::Delivering(beam.id));
                remaining[i] -= end - t;
                delivering = true;
                t = end;
            } else {
                if delivering {
                    log.halt(t, beam.id);
                }
                delivering = false;
                log.record(t, next, Activity::Blocked(beam.id));
                t = next;
            }
        }
        if remaining[i] > 0 {
            break;
        }
        delivering = false;
        log.finished.push((t, beam.id));
    }
    log.complete = log.finished.len() == plan.beams.len();
    Ok(log)
}

/// Source of per-slot verification results.
pub trait VerificationClient {
    fn verify(&mut self, req: &Request) -> Result<Response, ProtocolError>;
}

impl<F: FnMut(&Request) -> Result<Response, ProtocolError>> VerificationClient for F {
    fn verify(&mut self, req: &Request) -> Result<Response, ProtocolError> {
        self(req)
    }
}

/// Calls a [`BeamService`] directly, without a socket.
#[derive(Debug, Clone)]
pub struct InProcessClient {
    pub service: BeamService,
}

impl VerificationClient for InProcessClient {
    fn verify(&mut self, req: &Request) -> Result<Response, ProtocolError> {
        Ok(self.service.respond(req))
    }
}

/// One connection to a running beam service.
pub struct TcpClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl TcpClient {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> io::Result<Self> {
        let writer = TcpStream::connect(addr)?;
        writer.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(writer.try_clone()?),
            writer,
        })
    }
}

impl VerificationClient for TcpClient {
    fn verify(&mut self, req: &Request) -> Result<Response, ProtocolError> {
        write_request(&mut self.writer, req)?;
        read_response(&mut self.reader)
    }
}

/// Runs the online-model-checking schedule.
///
/// At every slot boundary the outstanding beams are sent to `client`. On a
/// gap the session pauses for the slot. Otherwise the robot works through
/// the cleared beams, always taking the first one along the nearest-neighbour
/// chain from its current position. A beam that is blocked in reality is
/// left for another cleared beam when one exists.
pub fn run_omc<C: VerificationClient + ?Sized>(
    plan: &TreatmentPlan,
    trace: &MotionTrace,
    client: &mut C,
    cfg: &SessionConfig,
) -> Result<TreatmentLog, SimError> {
    check_axes(plan, trace)?;
    let feed = Feed::new(trace, cfg);
    let n = plan.beams.len();
    let index: HashMap<BeamId, usize> = plan.beams.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
    let mut log = TreatmentLog::new(Mode::Omc, cfg.start_ms, n);
    let mut remaining: Vec<u64> = plan.beams.iter().map(|b| b.remaining_ms).collect();
    let mut t = cfg.start_ms;
    let mut pos = plan.initial;
    let mut moving_until: Option<u64> = None;
    let mut delivering: Option<usize> = None;

    while log.finished.len() < n && t < feed.horizon {
        let slot = feed.slot_of(t, cfg.slot_interval_ms);
        let slot_end = feed.slot_start(slot + 1, cfg.slot_interval_ms).min(feed.horizon);
        let beams: Vec<BeamSpec> = (0..n)
            .filter(|&i| remaining[i] > 0)
            .map(|i| {
                let mut b = plan.beams[i].clone();
                b.remaining_ms = remaining[i];
                b.started = remaining[i] < plan.beams[i].remaining_ms;
                b.running = delivering == Some(i);
                b
            })
            .collect();
        let resp = match client.verify(&Request { slot_hint: slot, beams }) {
            Ok(r) => r,
            Err(e) => {
                log.aborted = Some(e.to_string());
                break;
            }
        };
        let mut cleared = vec![false; n];
        if resp.status == SlotStatus::Ok {
            for id in resp.deliverable() {
                if let Some(&i) = index.get(&id) {
                    cleared[i] = remaining[i] > 0;
                }
            }
        }

        while t < slot_end && log.finished.len() < n {
            if let Some(arrive) = moving_until {
                let stop = arrive.min(slot_end);
                log.record(t, stop, Activity::Moving(plan.beams[pos].id));
                t = stop;
                if t == arrive {
                    moving_until = None;
                }
                continue;
            }
            if resp.status == SlotStatus::Gap {
                delivering = None;
                log.record(t, slot_end, Activity::Gap);
                t = slot_end;
                break;
            }
            if !cleared[pos] {
                delivering = None;
                let open: Vec<bool> = (0..n).map(|i| remaining[i] > 0).collect();
                let pick = greedy_chain(&plan.transitions, pos, &open)
                    .into_iter()
                    .find(|&i| cleared[i]);
                match pick {
                    None => {
                        log.record(t, slot_end, Activity::Unscheduled);
                        t = slot_end;
                    }
                    Some(next) => {
                        let cost = plan.transitions.cost(pos, next);
                        pos = next;
                        if cost > 0 {
                            moving_until = Some(t + cost);
                        }
                    }
                }
                continue;
            }

            let beam = &plan.beams[pos];
            let next = feed.next_change(t).min(slot_end);
            if feed.admits(beam, t) {
                let end = next.min(t + remaining[pos]);
                log.record(t, end, Activity::Delivering(beam.id));
                remaining[pos] -= end - t;
                delivering = Some(pos);
                t = end;
                if remaining[pos] == 0 {
                    log.finished.push((t, beam.id));
                    cleared[pos] = false;
                    delivering = None;
                }
            } else {
                if delivering == Some(pos) {
                    log.halt(t, beam.id);
                }
                delivering = None;
                let elsewhere = (0..n).any(|i| i != pos && cleared[i]);
                if elsewhere {
                    // leave it for this slot and move on to another cleared beam
                    cleared[pos] = false;
                } else {
                    log.record(t, next, Activity::Blocked(beam.id));
                    t = next;
                }
            }
        }
    }
    log.complete = log.finished.len() == n;
    Ok(log)
}

/// `start_ms,end_ms,activity,beam` rows, halts as zero-length `halt` rows.
pub fn write_log_csv<W: Write>(log: &TreatmentLog, mut out: W) -> io::Result<()> {
    writeln!(out, "start_ms,end_ms,activity,beam")?;
    let mut halts = log.halts.iter().peekable();
    for iv in &log.intervals {
        while let Some(&&(t, id)) = halts.peek() {
            if t > iv.start_ms {
                break;
            }
            writeln!(out, "{t},{t},halt,{id}")?;
            halts.next();
        }
        let (label, beam) = iv.activity.label();
        let beam = beam.map_or(String::new(), |b| b.to_string());
        writeln!(out, "{},{},{label},{beam}", iv.start_ms, iv.end_ms)?;
    }
    for (t, id) in halts {
        writeln!(out, "{t},{t},halt,{id}")?;
    }
    Ok(())
}

/// Human-readable totals.
pub fn summarize(log: &TreatmentLog) -> String {
    let mut s = String::new();
    let mode = match log.mode {
        Mode::Static => "static",
        Mode::Omc => "omc",
    };
    let secs = |ms: u64| ms as f64 / 1000.0;
    let _ = writeln!(s, "mode            {mode}");
    let _ = writeln!(
        s,
        "beams           {}/{}{}",
        log.beams_completed(),
        log.beams_total,
        if log.complete { "" } else { " (incomplete)" }
    );
    let _ = writeln!(s, "makespan        {:.3} s", secs(log.makespan_ms()));
    let _ = writeln!(s, "beam-on         {:.3} s", secs(log.beam_on_ms));
    let _ = writeln!(s, "transitions     {:.3} s", secs(log.transition_ms));
    let _ = writeln!(s, "idle            {:.3} s (gaps {:.3} s)", secs(log.idle_ms), secs(log.gap_ms));
    let _ = writeln!(s, "interruptions   {}", log.interruptions);
    if let Some(why) = &log.aborted {
        let _ = writeln!(s, "aborted         {why}");
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareConfig {
    pub repetitions: usize,
    pub beams: usize,
    pub seed: u64,
    pub session: SessionConfig,
    pub transition_ms: u64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            repetitions: 30,
            beams: 100,
            seed: 0,
            session: SessionConfig::default(),
            transition_ms: DEFAULT_TRANSITION_MS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Totals {
    pub idle_ms: u64,
    pub gap_ms: u64,
    pub interruptions: u64,
    pub makespan_ms: u64,
    pub transition_ms: u64,
    pub beam_on_ms: u64,
    pub complete: bool,
}

impl From<&TreatmentLog> for Totals {
    fn from(log: &TreatmentLog) -> Self {
        Self {
            idle_ms: log.idle_ms,
            gap_ms: log.gap_ms,
            interruptions: log.interruptions,
            makespan_ms: log.makespan_ms(),
            transition_ms: log.transition_ms,
            beam_on_ms: log.beam_on_ms,
            complete: log.complete,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Repetition {
    pub rep: usize,
    pub seed: u64,
    pub static_run: Totals,
    pub omc_run: Totals,
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareSummary {
    pub reps: Vec<Repetition>,
    pub static_idle_ms: Stat,
    pub omc_idle_ms: Stat,
    pub static_interruptions: Stat,
    pub omc_interruptions: Stat,
    /// `(static - omc) / static` of the mean idle times, in percent.
    pub reduction_pct: f64,
    pub omc_wins: usize,
    pub ties: usize,
    /// One-sided sign-test p-value for "OMC idles less".
    pub sign_p: f64,
}

/// `P(X >= k)` for `X ~ Binomial(n, 1/2)`.
pub fn sign_test_p(k: usize, n: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    // log-space binomial coefficients keep large n finite
    let ln_choose = |n: usize, r: usize| -> f64 {
        (1..=r).map(|i| ((n - r + i) as f64).ln() - (i as f64).ln()).sum()
    };
    (k..=n)
        .map(|j| (ln_choose(n, j) - n as f64 * std::f64::consts::LN_2).exp())
        .sum::<f64>()
        .min(1.0)
}

/// Percent reduction of `omc` relative to `base`; 0 when both are 0.
pub fn reduction_pct(base: f64, omc: f64) -> f64 {
    if base == 0.0 {
        if omc == 0.0 { 0.0 } else { f64::NEG_INFINITY }
    } else {
        (base - omc) / base * 100.0
    }
}

/// Static and OMC sessions on `repetitions` beam lists drawn from `template`.
pub fn compare<C: VerificationClient + ?Sized>(
    template: &BeamListFile,
    trace: &MotionTrace,
    client: &mut C,
    cfg: &CompareConfig,
) -> Result<CompareSummary, SimError> {
    let mut reps = Vec::with_capacity(cfg.repetitions);
    for rep in 0..cfg.repetitions {
        let seed = derive_seed(cfg.seed, &[rep as u64]);
        let list = gen_beam_list(template, cfg.beams, seed)?;
        let plan = TreatmentPlan::new(list.beams).with_transitions(TransitionModel::Constant(cfg.transition_ms));
        let s = run_static(&plan, trace, &cfg.session)?;
        let o = run_omc(&plan, trace, client, &cfg.session)?;
        reps.push(Repetition {
            rep,
            seed,
            static_run: Totals::from(&s),
            omc_run: Totals::from(&o),
        });
    }
    Ok(summarize_reps(reps))
}

pub fn summarize_reps(reps: Vec<Repetition>) -> CompareSummary {
    let col = |f: &dyn Fn(&Repetition) -> f64| -> Vec<f64> { reps.iter().map(f).collect() };
    let static_idle = Stat::of(&col(&|r| r.static_run.idle_ms as f64));
    let omc_idle = Stat::of(&col(&|r| r.omc_run.idle_ms as f64));
    let wins = reps.iter().filter(|r| r.omc_run.idle_ms < r.static_run.idle_ms).count();
    let ties = reps.iter().filter(|r| r.omc_run.idle_ms == r.static_run.idle_ms).count();
    CompareSummary {
        static_interruptions: Stat::of(&col(&|r| r.static_run.interruptions as f64)),
        omc_interruptions: Stat::of(&col(&|r| r.omc_run.interruptions as f64)),
        reduction_pct: reduction_pct(static_idle.mean, omc_idle.mean),
        sign_p: sign_test_p(wins, reps.len() - ties),
        static_idle_ms: static_idle,
        omc_idle_ms: omc_idle,
        omc_wins: wins,
        ties,
        reps,
    }
}

/// Per-repetition table, one row per repetition.
pub fn write_reps_csv<W: Write>(summary: &CompareSummary, mut out: W) -> io::Result<()> {
    writeln!(
        out,
        "rep,seed,static_idle_ms,omc_idle_ms,omc_gap_ms,static_interruptions,omc_interruptions,static_makespan_ms,omc_makespan_ms,static_complete,omc_complete"
    )?;
    for r in &summary.reps {
        let (s, o) = (&r.static_run, &r.omc_run);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.rep,
            r.seed,
            s.idle_ms,
            o.idle_ms,
            o.gap_ms,
            s.interruptions,
            o.interruptions,
            s.makespan_ms,
            o.makespan_ms,
            s.complete as u8,
            o.complete as u8
        )?;
    }
    Ok(())
}

/// Aggregate table: one row per metric with mean and sd for both modes.
pub fn write_summary_csv<W: Write>(summary: &CompareSummary, mut out: W) -> io::Result<()> {
    writeln!(out, "metric,static_mean,static_sd,omc_mean,omc_sd,reduction_pct")?;
    let rows = [
        ("idle_s", summary.static_idle_ms, summary.omc_idle_ms, 1000.0),
        ("interruptions", summary.static_interruptions, summary.omc_interruptions, 1.0),
    ];
    for (name, s, o, scale) in rows {
        writeln!(
            out,
            "{name},{:.3},{:.3},{:.3},{:.3},{:.2}",
            s.mean / scale,
            s.sd / scale,
            o.mean / scale,
            o.sd / scale,
            reduction_pct(s.mean, o.mean)
        )?;
    }
    writeln!(out, "omc_wins,{},,,,", summary.omc_wins)?;
    writeln!(out, "sign_test_p,{:.6},,,,", summary.sign_p)?;
    Ok(())
}
