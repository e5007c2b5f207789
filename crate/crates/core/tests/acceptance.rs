//! One line per acceptance criterion; exits non-zero if any fails.

mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use beamsched::beam::{AxisBounds, BeamSpec};
use beamsched::fit::{fit_window, SampleWindow};
use beamsched::io::{gen_motion_trace, parse_declarations, write_declarations, TraceSpec};
use beamsched::motion::{derive_perturbation, simulate, MotionModel1D, PerturbationConfig};
use beamsched::omc::{OmcConfig, OmcPipeline};
use beamsched::service::protocol::{decode_request, decode_response, encode_request, encode_response, Request, Response, ResultRow};
use beamsched::service::{verify_slot, SlotStatus, VerifyConfig};
use beamsched::smc::{check_invariant, check_invariant_runs, InvariantQuery, SmcConfig};
use beamsched::treatment::{compare, run_omc, run_static, CompareConfig, SessionConfig, TreatmentLog};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Position by the textbook formula, without the model's recurrence.
fn direct(m: &MotionModel1D<f64>, t: f64) -> f64 {
    let w = std::f64::consts::TAU / m.period;
    (0..4).fold(m.base + m.drift * t, |x, k| {
        let kw = (k + 1) as f64 * w * t;
        x + m.a[k] * kw.cos() + m.b[k] * kw.sin()
    })
}

fn formula_fidelity() -> Outcome {
    let m = model(GLOBAL_DECLARATIONS);
    let got = m.evaluate(0.0);
    // 2.5019 - 0.1959 + 0.0295 - 0.0022 - 0.0169
    let hand = 2.3164;
    let dense_ok = (0..2000).all(|i| {
        let t = i as f64 * 7.3;
        (m.evaluate(t) - direct(&m, t)).abs() < 1e-9
    });
    check(
        (got - hand).abs() <= 1e-9 && (direct(&m, 0.0) - hand).abs() <= 1e-9 && dense_ok,
        format!("evaluate(0) = {got:.10}, dense evaluation agrees: {dense_ok}"),
    )
}

fn rel(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs()
}

fn fit_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let signed = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
        let v = rng.random_range(lo..hi);
        if rng.random_bool(0.5) { v } else { -v }
    };
    for _ in 0..50 {
        let mut a = [0.0; 4];
        let mut b = [0.0; 4];
        for k in 0..4 {
            let scale = 3.0 / (k + 1) as f64;
            a[k] = signed(&mut rng, 0.05 * scale, scale);
            b[k] = signed(&mut rng, 0.05 * scale, scale);
        }
        let period = rng.random_range(2500.0..6000.0);
        let drift = signed(&mut rng, 1e-5, 1e-4);
        let base = signed(&mut rng, 0.5, 10.0);
        let m = MotionModel1D::new(period, drift, base, a, b).unwrap();
        let tr = simulate(&m, &PerturbationConfig::none(), 20_000.0, 0);
        let w = SampleWindow::new(tr.iter().map(|(_, t, x)| (t, x)).collect()).unwrap();
        let f = match fit_window(&w) {
            Ok(f) => f.model,
            Err(e) => return Err(format!("fit failed: {e}")),
        };
        worst = worst.max(rel(f.period, period)).max(rel(f.base, base)).max(rel(f.drift, drift));
        for k in 0..4 {
            worst = worst.max(rel(f.a[k], a[k])).max(rel(f.b[k], b[k]));
        }
    }
    check(worst <= 1e-6, format!("50 models, worst relative error {worst:.2e}"))
}

fn smc_vs_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for i in 0..200 {
        let a = [rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3), rng.random_range(-0.1..0.1)];
        let b = [rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3), rng.random_range(-0.1..0.1)];
        let m: MotionModel1D<f64> = MotionModel1D::new(rng.random_range(2500.0..6000.0), rng.random_range(-1e-3..1e-3), rng.random_range(-5.0..5.0), a, b).unwrap();
        let lower = m.base + rng.random_range(-6.0..0.0);
        let upper = m.base + rng.random_range(0.0..6.0);
        let q = InvariantQuery::new(3000.0, lower, upper).unwrap();
        let steps = (3000.0 / m.dt).floor() as usize;
        let inside = (0..=steps).all(|k| {
            let x = direct(&m, k as f64 * m.dt);
            x >= lower && x <= upper
        });
        let e = check_invariant(&m, &PerturbationConfig::none(), &q, &SmcConfig::default(), i);
        if e.p_hat != if inside { 1.0 } else { 0.0 } {
            mismatches += 1;
        }
    }

    let base = model(GLOBAL_DECLARATIONS).with_accuracy(85.0).unwrap();
    let cfg = derive_perturbation(85.0).unwrap();
    let amp = base.amplitude_bound();
    let queries = [0.5, 0.25, 1.0, 0.0].map(|pad| InvariantQuery::new(3000.0, base.base - amp - pad, base.base + amp + pad).unwrap());
    let mut within = 0;
    for (j, q) in queries.iter().enumerate() {
        let reference = check_invariant_runs(&base, &cfg, q, 100_000, 1000 + j as u64, 1);
        for trial in 0..25 {
            let e = check_invariant(&base, &cfg, q, &SmcConfig::default(), 50_000 + (j * 25 + trial) as u64);
            if e.runs_used == 738 && (e.p_hat - reference).abs() <= 0.05 {
                within += 1;
            }
        }
    }
    check(
        mismatches == 0 && within >= 95,
        format!("deterministic mismatches {mismatches}/200, stochastic within 0.05: {within}/100"),
    )
}

fn slot_deadline() -> Outcome {
    let set = |acc: f64| {
        let models: Vec<_> = [BREATHING_X, BREATHING_Y, BREATHING_Z].iter().map(|t| model(t).with_accuracy(acc).unwrap()).collect();
        beamsched::omc::SlotModelSet {
            slot_index: 7,
            created_at: 21_000.0,
            valid_until: 27_000.0,
            models: models.into_iter().map(Some).collect(),
            valid: true,
            gap: None,
            validity_probs: vec![1.0; 3],
            fit_errors: vec![None; 3],
            tiers: vec![0; 3],
        }
    };
    let beams: Vec<_> = (0..250)
        .map(|i| BeamSpec::with_bounds(i + 1, 1000, vec![AxisBounds::new(-12.0, 12.0); 3]))
        .collect();
    let t0 = Instant::now();
    let full = verify_slot(&beams, &set(100.0), &VerifyConfig::default());
    let full_time = t0.elapsed();
    let all_done = full.results.iter().all(|r| r.completed && r.deliverable);

    let tight = VerifyConfig {
        deadline: Some(Duration::from_millis(50)),
        ..VerifyConfig::default()
    };
    let t1 = Instant::now();
    let cut = verify_slot(&beams, &set(85.0), &tight);
    let cut_time = t1.elapsed();
    let incomplete = cut.results.iter().filter(|r| !r.completed).count();
    let refused = cut.results.iter().filter(|r| !r.completed).all(|r| !r.deliverable);
    check(
        all_done && full_time < Duration::from_millis(3000) && refused && cut_time < Duration::from_millis(100),
        format!(
            "250 beams all deliverable in {full_time:.2?}; 50 ms deadline returned in {cut_time:.2?} with {incomplete} incomplete, all refused: {refused}"
        ),
    )
}

fn protocol_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = 0;
    for case in 0..400 {
        let three = case % 2 == 0;
        let n = rng.random_range(0..60);
        let beams: Vec<_> = (0..n)
            .map(|i| {
                let mut b = if three {
                    let bounds = (0..3).map(|_| AxisBounds::new(-rng.random_range(0.0..40.0), rng.random_range(0.0..40.0))).collect();
                    BeamSpec::with_bounds(i * 7 + 3, rng.random_range(1..40_000), bounds)
                } else {
                    BeamSpec::symmetric(i * 7 + 3, rng.random_range(1..40_000), rng.random_range(0.0..40.0))
                };
                b.started = rng.random_bool(0.3);
                b.running = b.started && rng.random_bool(0.3);
                b
            })
            .collect();
        let req = Request { slot_hint: rng.random_range(0..100_000), beams };
        let text = encode_request(&req).unwrap();
        let ok_req = decode_request(&text).is_ok_and(|r| r == req && encode_request(&r).unwrap() == text);

        let axes = if three { 3 } else { 1 };
        let rows = req
            .beams
            .iter()
            .map(|b| {
                let probs: Vec<f64> = (0..axes).map(|_| rng.random::<f64>()).collect();
                ResultRow {
                    id: b.id,
                    combined_p: probs.iter().cloned().fold(1.0, f64::min),
                    probs,
                    completed: rng.random_bool(0.9),
                    deliverable: rng.random_bool(0.5),
                }
            })
            .collect();
        let status = if rng.random_bool(0.2) { SlotStatus::Gap } else { SlotStatus::Ok };
        let resp = Response { slot_index: req.slot_hint, status, rows };
        let text = encode_response(&resp);
        let ok_resp = decode_response(&text).is_ok_and(|r| r == resp && encode_response(&r) == text);
        failures += usize::from(!(ok_req && ok_resp));
    }
    check(failures == 0, format!("400 randomized request/response pairs, {failures} failed"))
}

fn tier_behavior() -> Outcome {
    let step = TraceSpec::new(breathing_axes(), 120_000.0)
        .with_event(beamsched::io::ChangeEvent::new(45_500.0, 0.0, beamsched::io::EventKind::BaselineStep(20.0)));
    let mut p = OmcPipeline::new(Arc::new(gen_motion_trace(&step, 1).unwrap()), OmcConfig::default()).unwrap();
    // slot 15 validates against a post-step sample; from slot 22 the fit
    // window lies wholly after the step
    let tiers: Vec<u8> = (7..30).map(|k| *p.advance_to(k).unwrap().tiers.iter().min().unwrap()).collect();
    let at = |k: usize| tiers[k - 7];
    let rises = at(14) == 0 && at(15) == 1 && (16..22).all(|k| at(k) >= at(k - 1)) && at(21) >= 3;
    let decays = (22..26).all(|k| at(k) == at(k - 1).saturating_sub(1)) && at(25) == 0;

    let calm = TraceSpec::new(breathing_axes(), 600_000.0 + 1000.0);
    let mut p = OmcPipeline::new(Arc::new(gen_motion_trace(&calm, 2).unwrap()), OmcConfig::default()).unwrap();
    let t0 = Instant::now();
    let mut gaps = 0;
    for k in 0..200 {
        gaps += usize::from(!p.advance_to(k).unwrap().valid && k >= 7);
    }
    let batch = t0.elapsed();
    check(
        rises && decays && gaps == 0 && batch < Duration::from_secs(60),
        format!("step tiers {tiers:?}; 10-minute self-consistent feed: {gaps} invalid slots, batch {batch:.2?}"),
    )
}

fn conserved_totals(t: &beamsched::treatment::Totals) -> bool {
    t.makespan_ms == t.beam_on_ms + t.transition_ms + t.idle_ms
}

fn idle_reduction(audit: &mut Vec<bool>) -> Outcome {
    let trace = episode_trace(2_400_000.0);
    let cfg = CompareConfig::default();
    let s = compare(&beam_template(), &trace, &mut in_process(trace.clone()), &cfg).map_err(|e| e.to_string())?;
    for r in &s.reps {
        audit.push(conserved_totals(&r.static_run) && conserved_totals(&r.omc_run));
    }
    let cohort = s.omc_idle_ms.mean < s.static_idle_ms.mean && s.sign_p < 0.05;

    // three beams, first in static order blocked for exactly 60 s
    let (plan, scripted) = adversarial();
    let session = SessionConfig::default();
    let st = run_static(&plan, &scripted, &session).map_err(|e| e.to_string())?;
    let om = run_omc(&plan, &scripted, &mut oracle(&scripted, 3000), &session).map_err(|e| e.to_string())?;
    let derived = st.idle_ms == 60_000 && om.idle_ms == 1000;
    let three = (st.idle_ms - om.idle_ms) as f64 / st.idle_ms as f64 * 100.0;

    // the same three beams against the fitted pipeline on the episode patient
    let live_plan = beamsched::treatment::TreatmentPlan::new(vec![
        BeamSpec::symmetric(1, 10_000, 5.0),
        BeamSpec::symmetric(2, 28_000, 25.0),
        BeamSpec::symmetric(3, 28_000, 25.0),
    ]);
    let live_session = SessionConfig {
        start_ms: EPISODE_AT_MS as u64,
        ..SessionConfig::default()
    };
    let ls = run_static(&live_plan, &trace, &live_session).map_err(|e| e.to_string())?;
    let lo = run_omc(&live_plan, &trace, &mut in_process(trace.clone()), &live_session).map_err(|e| e.to_string())?;
    let live = (ls.idle_ms as f64 - lo.idle_ms as f64) / ls.idle_ms as f64 * 100.0;
    for log in [&st, &om, &ls, &lo] {
        audit.push(log.is_conserved());
    }

    check(
        cohort && derived && three >= 50.0 && live >= 50.0,
        format!(
            "30 reps: static idle {:.2} s (sd {:.2}), OMC {:.2} s (sd {:.2}), reduction {:.2}%, OMC wins {}/30, sign test p = {:.2e}; \
             3-beam scripted {} s -> {} s ({three:.2}%), on fitted models {:.3} s -> {:.3} s ({live:.2}%)",
            s.static_idle_ms.mean / 1000.0,
            s.static_idle_ms.sd / 1000.0,
            s.omc_idle_ms.mean / 1000.0,
            s.omc_idle_ms.sd / 1000.0,
            s.reduction_pct,
            s.omc_wins,
            s.sign_p,
            st.idle_ms / 1000,
            om.idle_ms as f64 / 1000.0,
            ls.idle_ms as f64 / 1000.0,
            lo.idle_ms as f64 / 1000.0,
        ),
    )
}

fn conservation(audit: &[bool], extra: &[TreatmentLog]) -> Outcome {
    let all = audit.iter().copied().chain(extra.iter().map(TreatmentLog::is_conserved));
    let n = audit.len() + extra.len();
    let bad = all.filter(|ok| !ok).count();
    check(n > 0 && bad == 0, format!("{n} session checks, {bad} violations"))
}

fn declarations() -> Outcome {
    let x = model(BREATHING_X);
    let g = model(GLOBAL_DECLARATIONS);
    let listed = x.period == 5088.0
        && x.drift == 0.0
        && x.base == -3.6508
        && x.a == [-0.608, 0.205, 0.0744, -0.0764]
        && x.b == [2.5745, -0.414, -0.0149, 0.0096]
        && model(BREATHING_Y).base == 1.698
        && model(BREATHING_Z).b == [-0.3202, 0.0516, 0.0019, -0.0012]
        && g.accuracy == 100.0
        && g.period == 3469.0
        && g.base == 2.5019
        && g.a == [-0.1959, 0.0295, -0.0022, -0.0169]
        && g.b == [-0.4023, 0.0294, 0.033, 0.013];
    let round = [BREATHING_X, BREATHING_Y, BREATHING_Z, GLOBAL_DECLARATIONS].iter().all(|t| {
        let m = model(t);
        let back: MotionModel1D<f64> = parse_declarations(&write_declarations(&m).unwrap()).unwrap();
        back.period.to_bits() == m.period.to_bits()
            && back.base.to_bits() == m.base.to_bits()
            && back.drift.to_bits() == m.drift.to_bits()
            && back.a.iter().zip(m.a).all(|(p, q)| p.to_bits() == q.to_bits())
            && back.b.iter().zip(m.b).all(|(p, q)| p.to_bits() == q.to_bits())
    });
    check(listed && round, format!("listed values match: {listed}, bit-exact round trip: {round}"))
}

fn main() {
    let mut audit = Vec::new();
    let mut extra = Vec::new();
    let t0 = Instant::now();
    let mut results: Vec<(u32, &str, Outcome, Duration)> = Vec::new();
    let mut run = |n: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let r = f();
        let d = t.elapsed();
        let (tag, detail) = match &r {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} {n}. {name} [{d:.1?}]: {detail}");
        results.push((n, name, r, d));
    };
    run(1, "formula fidelity", &mut formula_fidelity);
    run(2, "fit round trip", &mut fit_round_trip);
    run(3, "SMC against oracles", &mut smc_vs_oracle);
    run(4, "slot deadline", &mut slot_deadline);
    run(5, "protocol round trip", &mut protocol_round_trip);
    run(6, "tier behaviour", &mut tier_behavior);
    run(7, "idle-time reduction", &mut || idle_reduction(&mut audit));
    {
        // a few more sessions with halts and cut-offs for the audit
        let (plan, trace) = adversarial();
        let short = SessionConfig { max_duration_ms: 30_000, ..SessionConfig::default() };
        extra.push(run_static(&plan, &trace, &short).unwrap());
        extra.push(run_omc(&plan, &trace, &mut oracle(&trace, 3000), &short).unwrap());
        let wave = scripted_trace(40, 200_000, |t| if t % 2000 < 1000 { 0.0 } else { 10.0 });
        let plan = beamsched::treatment::TreatmentPlan::new(vec![BeamSpec::symmetric(9, 10_000, 5.0)]);
        extra.push(run_static(&plan, &wave, &SessionConfig::default()).unwrap());
    }
    run(8, "conservation audit", &mut || conservation(&audit, &extra));
    run(9, "declaration parsing", &mut declarations);

    let failed: Vec<_> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!("{} of {} criteria passed in {:.1?}", results.len() - failed.len(), results.len(), t0.elapsed());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
