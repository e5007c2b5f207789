mod common;

use std::sync::Arc;

use beamsched::io::{gen_motion_trace, AxisParams, ChangeEvent, EventKind, MotionTrace, TraceSpec};
use beamsched::motion::MotionModel1D;
use beamsched::omc::{run_slot, GapReason, OmcConfig, OmcError, OmcPipeline, TierState};

use common::*;

fn slots(trace: MotionTrace, range: std::ops::Range<u64>) -> Vec<beamsched::omc::SlotModelSet> {
    let mut p = OmcPipeline::new(Arc::new(trace), OmcConfig::default()).unwrap();
    range.map(|k| p.advance_to(k).unwrap().clone()).collect()
}

const STEP_AT: f64 = 45_500.0;

#[test]
fn self_consistent_feed_stays_valid() {
    let trace = gen_motion_trace(&TraceSpec::new(breathing_axes(), 180_000.0), 3).unwrap();
    for s in slots(trace, 7..59) {
        assert!(s.valid, "slot {} {:?}", s.slot_index, s.gap);
        assert_eq!(s.tiers, vec![0, 0, 0]);
        assert!(s.validity_probs.iter().all(|&p| p == 1.0));
    }
}

#[test]
fn step_raises_then_clears_tiers() {
    let spec = TraceSpec::new(breathing_axes(), 120_000.0).with_event(ChangeEvent::new(STEP_AT, 0.0, EventKind::BaselineStep(20.0)));
    let cfg = OmcConfig::default();
    let interval = cfg.slot_interval_ms;
    // first slot validated against a post-step sample, and first slot whose
    // fit window lies wholly after the step
    let hit = ((STEP_AT - cfg.validation_offset_ms) / interval).floor() as u64 + 1;
    let clear = ((STEP_AT + cfg.fit_window_ms) / interval).ceil() as u64;
    assert_eq!((hit, clear), (15, 22));

    let run = slots(gen_motion_trace(&spec, 1).unwrap(), 7..40);
    let at = |k: u64| &run[(k - 7) as usize];
    let trail: Vec<_> = run.iter().map(|s| (s.slot_index, s.tiers[0], s.valid)).collect();

    for k in 7..hit {
        assert!(at(k).valid && at(k).tiers == vec![0, 0, 0], "{trail:?}");
    }
    assert!(at(hit).validity_probs.iter().all(|&p| p < cfg.tp), "{trail:?}");
    assert_eq!(at(hit).tiers, vec![1, 1, 1]);
    for k in hit + 1..clear {
        for axis in 0..3 {
            assert!(at(k).tiers[axis] >= at(k - 1).tiers[axis], "{trail:?}");
        }
    }
    assert!((hit..clear).any(|k| !at(k).valid), "{trail:?}");
    for k in clear..clear + 4 {
        for axis in 0..3 {
            let (prev, now) = (at(k - 1).tiers[axis], at(k).tiers[axis]);
            assert_eq!(now, prev.saturating_sub(1), "{trail:?}");
        }
    }
    for k in clear + 3..40 {
        assert!(at(k).valid && at(k).tiers == vec![0, 0, 0], "{trail:?}");
    }
}

#[test]
fn single_axis_excursion_never_invalidates() {
    let spec = TraceSpec::new(breathing_axes(), 120_000.0)
        .with_event(ChangeEvent::new(STEP_AT, 0.0, EventKind::BaselineStep(20.0)).on_axis(1));
    for s in slots(gen_motion_trace(&spec, 1).unwrap(), 7..40) {
        assert_eq!((s.tiers[0], s.tiers[2]), (0, 0));
        assert!(s.valid || s.gap == Some(GapReason::Fit), "slot {} {:?}", s.slot_index, s.gap);
    }
}

#[test]
fn flat_axis_keeps_the_set_valid() {
    let flat = MotionModel1D::flat(4.0, 0.0, 5088.0).unwrap();
    let mut axes = breathing_axes();
    axes[2] = AxisParams::new(flat);
    let run = slots(gen_motion_trace(&TraceSpec::new(axes, 60_000.0), 1).unwrap(), 7..19);
    for s in run {
        assert!(s.valid, "slot {} {:?} {:?}", s.slot_index, s.gap, s.fit_errors);
        let z = s.models[2].unwrap();
        assert!((z.evaluate(0.0) - 4.0).abs() < 1e-9);
    }
}

#[test]
fn warmup_and_exhaustion() {
    let trace = Arc::new(gen_motion_trace(&TraceSpec::new(breathing_axes(), 40_000.0), 1).unwrap());
    let cfg = OmcConfig::default();
    let (set, tiers) = run_slot(&trace, 3, &TierState::new(3), &cfg).unwrap();
    assert_eq!(set.gap, Some(GapReason::Warmup));
    assert_eq!(tiers.tiers(), &[0, 0, 0]);
    // slot 13 needs an observation at 40 s, the last sample is before it
    match run_slot(&trace, 13, &tiers, &cfg) {
        Err(OmcError::FeedExhausted { slot, .. }) => assert_eq!(slot, 13),
        other => panic!("{other:?}"),
    }
    assert!(run_slot(&trace, 12, &tiers, &cfg).is_ok());
}

#[test]
fn published_sets_share_one_creation_time() {
    let trace = Arc::new(gen_motion_trace(&TraceSpec::new(breathing_axes(), 60_000.0), 1).unwrap());
    let mut p = OmcPipeline::new(trace, OmcConfig::default()).unwrap();
    p.advance_to(12).unwrap();
    for s in p.published() {
        assert_eq!(s.created_at, s.slot_index as f64 * 3000.0);
        assert_eq!(s.valid_until, s.created_at + 6000.0);
        assert_eq!(s.models.len(), 3);
    }
}

#[test]
fn episode_patient_is_tracked_through_ramps() {
    // gaps on a ramped excursion are sporadic, never a long run
    let trace = episode_trace(EPISODE_AT_MS + 140_000.0);
    let mut p = OmcPipeline::new(trace, OmcConfig::default()).unwrap();
    let first = (EPISODE_AT_MS / 3000.0) as u64 - 10;
    let mut run = 0;
    let mut longest = 0;
    for k in first..first + 50 {
        if p.advance_to(k).unwrap().valid {
            run = 0;
        } else {
            run += 1;
            longest = longest.max(run);
        }
    }
    assert!(longest <= 6, "longest gap run {longest}");
}
