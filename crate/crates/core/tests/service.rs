mod common;

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use beamsched::beam::{AxisBounds, BeamId, BeamSpec};
use beamsched::io::{gen_motion_trace, TraceSpec};
use beamsched::motion::MotionModel1D;
use beamsched::omc::{OmcConfig, OmcPipeline, SlotModelSet};
use beamsched::service::protocol::{
    decode_request, decode_response, encode_request, encode_response, Request, Response, ResultRow,
};
use beamsched::service::{serve, verify_slot, BeamService, SlotStatus, VerifyConfig};
use beamsched::treatment::{TcpClient, VerificationClient};
use proptest::prelude::*;

use common::*;

fn slot_set(models: Vec<MotionModel1D<f64>>) -> SlotModelSet {
    let n = models.len();
    SlotModelSet {
        slot_index: 7,
        created_at: 21_000.0,
        valid_until: 27_000.0,
        models: models.into_iter().map(Some).collect(),
        valid: true,
        gap: None,
        validity_probs: vec![1.0; n],
        fit_errors: vec![None; n],
        tiers: vec![0; n],
    }
}

fn breathing_set() -> SlotModelSet {
    slot_set([BREATHING_X, BREATHING_Y, BREATHING_Z].iter().map(|t| model(t)).collect())
}

/// `(min, max)` over every step of the scope, evaluated directly.
fn dense_extrema(m: &MotionModel1D<f64>, scope: f64) -> (f64, f64) {
    let steps = (scope / m.dt).floor() as usize;
    (0..=steps)
        .map(|k| m.evaluate(k as f64 * m.dt))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
}

fn wide_beams(n: usize) -> Vec<BeamSpec> {
    (0..n)
        .map(|i| {
            let w = 10.0 + (i % 7) as f64;
            BeamSpec::with_bounds(i as u64 + 1, 1000 + i as u64, vec![AxisBounds::new(-w, w); 3])
        })
        .collect()
}

#[test]
fn full_list_checked_within_slot() {
    let set = breathing_set();
    let cfg = VerifyConfig::default();
    let t0 = Instant::now();
    let r = verify_slot(&wide_beams(250), &set, &cfg);
    assert!(t0.elapsed() < Duration::from_millis(3000), "{:?}", t0.elapsed());
    assert_eq!(r.status, SlotStatus::Ok);
    assert_eq!(r.results.len(), 250);
    assert!(r.results.iter().all(|b| b.completed && b.deliverable && b.combined_p == 1.0));
}

#[test]
fn zero_deadline_refuses_everything() {
    let cfg = VerifyConfig {
        deadline: Some(Duration::ZERO),
        ..VerifyConfig::default()
    };
    let r = verify_slot(&wide_beams(40), &breathing_set(), &cfg);
    assert_eq!(r.status, SlotStatus::Ok);
    assert!(r.results.iter().all(|b| !b.completed && !b.deliverable));
    assert!(r.results.iter().all(|b| b.axes.len() == 3));
}

#[test]
fn bounds_at_the_trajectory_edge() {
    let set = breathing_set();
    let scope = VerifyConfig::default().scope_ms;
    let ext: Vec<_> = [BREATHING_X, BREATHING_Y, BREATHING_Z].iter().map(|t| dense_extrema(&model(t), scope)).collect();
    let widened: Vec<_> = ext.iter().map(|&(lo, hi)| AxisBounds::new(lo - 1e-6, hi + 1e-6)).collect();
    let mut clipped = widened.clone();
    clipped[2].upper = ext[2].1 - 1e-6;
    let beams = vec![
        BeamSpec::with_bounds(1, 500, widened),
        BeamSpec::with_bounds(2, 500, clipped),
    ];
    let r = verify_slot(&beams, &set, &VerifyConfig::default());
    assert_eq!(r.results[0].combined_p, 1.0);
    assert!(r.results[0].deliverable);
    assert_eq!(r.results[1].axes[2].p_hat, 0.0);
    assert_eq!(r.results[1].combined_p, 0.0);
    assert!(r.results[1].completed && !r.results[1].deliverable);
}

#[test]
fn wider_bounds_never_lower_probability() {
    let noisy: Vec<_> = [BREATHING_X, BREATHING_Y, BREATHING_Z]
        .iter()
        .map(|t| model(t).with_accuracy(85.0).unwrap())
        .collect();
    let set = slot_set(noisy);
    let cfg = VerifyConfig {
        deadline: None,
        seed: 9,
        ..VerifyConfig::default()
    };
    let beams: Vec<_> = (0..6)
        .map(|i| {
            let w = 2.0 + i as f64;
            BeamSpec::with_bounds(1, 500, vec![AxisBounds::new(-w - 3.6, w - 3.6), AxisBounds::new(-w + 1.7, w + 1.7), AxisBounds::new(-w + 1.8, w + 1.8)])
        })
        .collect();
    let mut last = 0.0;
    for b in beams {
        let p = verify_slot(std::slice::from_ref(&b), &set, &cfg).results[0].combined_p;
        assert!(p >= last, "{p} < {last}");
        last = p;
    }
    assert_eq!(last, 1.0);
}

#[test]
fn tight_deadline_returns_promptly() {
    let noisy: Vec<_> = [BREATHING_X, BREATHING_Y, BREATHING_Z]
        .iter()
        .map(|t| model(t).with_accuracy(85.0).unwrap())
        .collect();
    let cfg = VerifyConfig {
        deadline: Some(Duration::from_millis(50)),
        ..VerifyConfig::default()
    };
    let t0 = Instant::now();
    let r = verify_slot(&wide_beams(250), &slot_set(noisy), &cfg);
    assert!(t0.elapsed() < Duration::from_millis(100), "{:?}", t0.elapsed());
    assert!(r.results.iter().any(|b| !b.completed));
    assert!(r.results.iter().filter(|b| !b.completed).all(|b| !b.deliverable));
}

#[test]
fn invalid_set_is_a_gap() {
    let mut set = breathing_set();
    set.valid = false;
    let r = verify_slot(&wide_beams(3), &set, &VerifyConfig::default());
    assert_eq!(r.status, SlotStatus::Gap);
    assert!(r.results.iter().all(|b| !b.deliverable));
}

#[test]
fn malformed_beams_are_refused_individually() {
    let beams = vec![
        BeamSpec::with_bounds(1, 100, vec![AxisBounds::new(2.0, -2.0); 3]),
        BeamSpec::symmetric(2, 100, 10.0),
        BeamSpec::with_bounds(3, 100, vec![AxisBounds::new(-20.0, 20.0); 3]),
    ];
    let r = verify_slot(&beams, &breathing_set(), &VerifyConfig::default());
    assert!(r.results[0].error.is_some() && !r.results[0].deliverable);
    assert!(r.results[1].error.is_some() && !r.results[1].deliverable);
    assert!(r.results[2].deliverable);
}

fn service(axes: usize) -> BeamService {
    let spec = if axes == 3 {
        TraceSpec::new(breathing_axes(), 60_000.0)
    } else {
        TraceSpec::new(vec![breathing_axes().remove(0)], 60_000.0)
    };
    let trace = Arc::new(gen_motion_trace(&spec, 1).unwrap());
    BeamService::new(OmcPipeline::new(trace, OmcConfig::default()).unwrap(), batch_verify())
}

fn spawn_server(svc: BeamService, sessions: usize) -> (std::net::SocketAddr, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let h = thread::spawn(move || serve(listener, &svc, Some(sessions)).unwrap());
    (addr, h)
}

#[test]
fn tcp_round_trip_matches_in_process() {
    let svc = service(3);
    let (addr, h) = spawn_server(svc.clone(), 1);
    let mut client = TcpClient::connect(addr).unwrap();
    for slot in [3u64, 8, 9] {
        let req = Request {
            slot_hint: slot,
            beams: wide_beams(5),
        };
        let remote = client.verify(&req).unwrap();
        assert_eq!(remote, svc.respond(&req));
        let expect = if slot < 7 { SlotStatus::Gap } else { SlotStatus::Ok };
        assert_eq!(remote.status, expect);
    }
    drop(client);
    h.join().unwrap();
}

#[test]
fn one_dimensional_session() {
    let (addr, h) = spawn_server(service(1), 1);
    let mut client = TcpClient::connect(addr).unwrap();
    let req = Request {
        slot_hint: 10,
        beams: vec![BeamSpec::symmetric(7, 2000, 1.0), BeamSpec::symmetric(8, 2000, 12.0)],
    };
    let resp = client.verify(&req).unwrap();
    assert_eq!(resp.deliverable(), vec![BeamId(8)]);
    assert!(resp.rows.iter().all(|r| r.probs.len() == 1));
    drop(client);
    h.join().unwrap();
}

#[test]
fn malformed_request_gets_err_line() {
    let (addr, h) = spawn_server(service(3), 1);
    let mut s = TcpStream::connect(addr).unwrap();
    s.write_all(b"BEAMS,1,1\n1,100,-1,1,-1,1\n").unwrap();
    let mut line = String::new();
    BufReader::new(s.try_clone().unwrap()).read_line(&mut line).unwrap();
    assert!(line.starts_with("ERR,"), "{line}");
    h.join().unwrap();
}

fn bounds() -> impl Strategy<Value = AxisBounds> {
    (-50.0..0.0f64, 0.0..50.0f64).prop_map(|(lo, hi)| AxisBounds::new(lo, hi))
}

fn beam_set() -> impl Strategy<Value = Vec<BeamSpec>> {
    let one = (1u64..u64::MAX, 1u64..10_000_000, prop::collection::vec(bounds(), 3), any::<(bool, bool)>());
    let three = prop::collection::vec(one, 0..40).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (id, t, b, (s, r)))| {
                // distinct ids, spread over a wide range
                let mut beam = BeamSpec::with_bounds(i as u64 * 1_000_003 + id % 1_000_000, t, b);
                beam.started = s;
                beam.running = r;
                beam
            })
            .collect::<Vec<_>>()
    });
    let single = prop::collection::vec((1u64..10_000_000, 0.0..60.0f64, any::<(bool, bool)>()), 0..40).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (t, th, (s, r)))| {
                let mut beam = BeamSpec::symmetric(i as u64, t, th);
                beam.started = s;
                beam.running = r;
                beam
            })
            .collect::<Vec<_>>()
    });
    prop_oneof![three, single]
}

fn response_rows(axes: usize) -> impl Strategy<Value = Vec<ResultRow>> {
    prop::collection::vec((prop::collection::vec(0.0..=1.0f64, axes), any::<(bool, bool)>()), 0..40).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (probs, (c, d)))| ResultRow {
                id: BeamId(i as u64 + 100_000),
                combined_p: probs.iter().cloned().fold(1.0, f64::min),
                probs,
                completed: c,
                deliverable: d,
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn request_round_trip(slot in 0u64..1_000_000, beams in beam_set()) {
        let req = Request { slot_hint: slot, beams };
        let text = encode_request(&req).unwrap();
        let back = decode_request(&text).unwrap();
        prop_assert_eq!(&back, &req);
        prop_assert_eq!(encode_request(&back).unwrap(), text);
    }

    #[test]
    fn response_round_trip(slot in 0u64..1_000_000, three in any::<bool>(), gap in any::<bool>(), seed_rows in response_rows(3)) {
        let axes = if three { 3 } else { 1 };
        let rows = seed_rows.into_iter().map(|mut r| { r.probs.truncate(axes); r }).collect();
        let status = if gap { SlotStatus::Gap } else { SlotStatus::Ok };
        let resp = Response { slot_index: slot, status, rows };
        let text = encode_response(&resp);
        let back = decode_response(&text).unwrap();
        prop_assert_eq!(&back, &resp);
        prop_assert_eq!(encode_response(&back), text);
    }
}
