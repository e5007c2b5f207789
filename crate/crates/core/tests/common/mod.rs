//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use beamsched::beam::BeamSpec;
use beamsched::io::{
    gen_motion_trace, parse_declarations, read_beam_list, AxisParams, BeamListFile, ChangeEvent, EventKind,
    MotionTrace, TraceSpec,
};
use beamsched::motion::MotionModel1D;
use beamsched::omc::{OmcConfig, OmcPipeline};
use beamsched::service::protocol::{ProtocolError, Request, Response, ResultRow};
use beamsched::service::{BeamService, SlotStatus, VerifyConfig};
use beamsched::treatment::{InProcessClient, TreatmentPlan};

pub const BREATHING_X: &str = "const double period = 5088.0;
const double drift = -0.0;

double base = -3.6508;
double a[4] = { -0.608, 0.205, 0.0744, -0.0764 };
double b[4] = { 2.5745, -0.414, -0.0149, 0.0096 };
";

pub const BREATHING_Y: &str = "const double period = 5088.0;
const double drift = 0.0;

double base = 1.698;
double a[4] = { 0.2631, -0.0887, -0.0322, 0.0331 };
double b[4] = { -1.1144, 0.1792, 0.0065, -0.0041 };
";

pub const BREATHING_Z: &str = "const double period = 5088.0;
const double drift = 0.0;

double base = 1.8164;
double a[4] = { 0.0757, -0.0255, -0.0093, 0.0095 };
double b[4] = { -0.3202, 0.0516, 0.0019, -0.0012 };
";

pub const GLOBAL_DECLARATIONS: &str = "const double accuracy = 100.0;

const double period = 3469.0;
const double drift = 0.0;

double base = 2.5019;
double a[4] = { -0.1959, 0.0295, -0.0022, -0.0169 };
double b[4] = { -0.4023, 0.0294, 0.033, 0.013 };

double v[4];
double result;

double time;
broadcast chan step;

double frequency = 2 * 3.14159265358979323846 / period;
";

/// Beam list excerpt: id, beam-on time, symmetric threshold.
pub const BEAM_TEMPLATE: &str = "ID,Time[ms],Threshold[mm]
80731,24281,5.0
76503,11222,5.0
75681,13682,7.5
74528,23749,10.0
67108,2243,10.0
79427,7133,12.5
70571,16927,15.0
77460,4354,15.0
70211,16240,15.0
68851,1488,17.5
59592,7335,17.5
74430,14448,17.5
69894,29738,20.0
77674,1609,20.0
78301,16381,22.5
81561,3116,25.0
61025,17047,27.5
71430,1758,31.0
81038,21519,31.0
";

pub fn model(text: &str) -> MotionModel1D<f64> {
    parse_declarations(text).unwrap()
}

pub fn beam_template() -> BeamListFile {
    read_beam_list(BEAM_TEMPLATE.as_bytes()).unwrap()
}

pub fn breathing_axes() -> Vec<AxisParams> {
    [BREATHING_X, BREATHING_Y, BREATHING_Z].iter().map(|t| AxisParams::new(model(t))).collect()
}

/// X-axis breathing centred on zero (peak about 2.7 mm).
pub fn centred_x() -> MotionModel1D<f64> {
    let mut m = model(BREATHING_X);
    m.base = 0.0;
    m
}

pub const EPISODE_AT_MS: f64 = 600_000.0;
pub const EPISODE_FADE_MS: f64 = 20_000.0;
pub const EPISODE_HOLD_MS: f64 = 60_000.0;
pub const EPISODE_SHIFT_MM: f64 = 15.0;

/// Synthetic 1D patient: centred breathing with one baseline excursion of
/// 15 mm, ramped in and out over 20 s and held for 60 s. Beams below
/// roughly 17.7 mm are infeasible while it is held.
pub fn episode_patient(duration_ms: f64) -> TraceSpec {
    let back = EPISODE_AT_MS + EPISODE_FADE_MS + EPISODE_HOLD_MS;
    TraceSpec::new(vec![AxisParams::new(centred_x())], duration_ms)
        .with_event(ChangeEvent::new(EPISODE_AT_MS, EPISODE_FADE_MS, EventKind::BaselineStep(EPISODE_SHIFT_MM)))
        .with_event(ChangeEvent::new(back, EPISODE_FADE_MS, EventKind::BaselineStep(-EPISODE_SHIFT_MM)))
}

pub fn episode_trace(duration_ms: f64) -> Arc<MotionTrace> {
    Arc::new(gen_motion_trace(&episode_patient(duration_ms), 1).unwrap())
}

/// Service settings for reproducible batch runs: no wall-clock deadline.
pub fn batch_verify() -> VerifyConfig {
    VerifyConfig {
        deadline: None,
        ..VerifyConfig::default()
    }
}

pub fn in_process(trace: Arc<MotionTrace>) -> InProcessClient {
    let pipeline = OmcPipeline::new(trace, OmcConfig::default()).unwrap();
    InProcessClient {
        service: BeamService::new(pipeline, batch_verify()),
    }
}

/// Piecewise-constant 1D trace sampled every `step_ms` over `[0, end_ms]`.
pub fn scripted_trace(step_ms: u64, end_ms: u64, position: impl Fn(u64) -> f64) -> MotionTrace {
    let mut tr = MotionTrace::new(1);
    for t in (0..=end_ms).step_by(step_ms as usize) {
        tr.push(t as f64, &[position(t)]).unwrap();
    }
    tr
}

/// Verification stub that knows the future: a beam is cleared iff the trace
/// stays within its bounds for every sample of the slot.
pub fn oracle(
    trace: &MotionTrace,
    interval_ms: u64,
) -> impl FnMut(&Request) -> Result<Response, ProtocolError> + '_ {
    move |req: &Request| {
        let from = (req.slot_hint * interval_ms) as f64;
        let to = from + interval_ms as f64;
        let rows = req
            .beams
            .iter()
            .map(|b| {
                let ok = trace.rows().filter(|(t, _)| *t >= from && *t < to).all(|(_, p)| b.admits(p));
                let p = if ok { 1.0 } else { 0.0 };
                ResultRow {
                    id: b.id,
                    probs: vec![p; b.axes()],
                    combined_p: p,
                    completed: true,
                    deliverable: ok,
                }
            })
            .collect();
        Ok(Response {
            slot_index: req.slot_hint,
            status: SlotStatus::Ok,
            rows,
        })
    }
}

pub const BLOCK_FROM_MS: u64 = 21_000;
pub const BLOCK_TO_MS: u64 = 81_000;

/// Three beams where the first one in static order is blocked for exactly
/// 60 s from the start of the session while the other two stay feasible.
pub fn adversarial() -> (TreatmentPlan, MotionTrace) {
    let trace = scripted_trace(40, 300_000, |t| if (BLOCK_FROM_MS..BLOCK_TO_MS).contains(&t) { 10.0 } else { 0.0 });
    let plan = TreatmentPlan::new(vec![
        BeamSpec::symmetric(1, 10_000, 5.0),
        BeamSpec::symmetric(2, 28_000, 20.0),
        BeamSpec::symmetric(3, 28_000, 20.0),
    ]);
    (plan, trace)
}
