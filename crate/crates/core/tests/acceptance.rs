//! Acceptance criteria 1 to 9. All criteria run from a single test so their
//! wall-clock budgets are measured without other tests competing for the
//! CPU. Each criterion prints one `PASS` or `FAIL` line; the test fails if
//! any criterion fails.

use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use flatdrive::estimation::{
    denoise, differentiate, estimate_f_order1, estimate_f_order2, EstimatorConfig, Order,
    SlidingWindow,
};
use flatdrive::flatness::{
    decoupling, delta_matrix, det_delta_closed_form, flat_outputs, state_from_flat, y2_rate,
};
use flatdrive::harness::compare::compare_controllers;
use flatdrive::harness::config::{ControllerKind, NoiseConfig, Perturbation, ScenarioConfig};
use flatdrive::harness::scenario::{run_prepared, run_scenario, PreparedScenario};
use flatdrive::mfc::{IntelligentController, IntelligentGains, LoopConfig, TrackingReference};
use flatdrive::plant::quasi_static_wheel_accels;
use flatdrive::{ControlInput, Plant, VehicleParams, VehicleState};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict { passed, detail: detail.into() }
}

fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}

fn window_of(period: f64, span: f64, t_end: f64, f: impl Fn(f64) -> f64) -> SlidingWindow<f64> {
    let mut w = SlidingWindow::new(period, span).unwrap();
    let n = (span / period).round() as usize;
    for k in 0..=n {
        let t = t_end - span + k as f64 * period;
        w.push(t, f(t)).unwrap();
    }
    w
}

fn criterion_1() -> Verdict {
    let (period, span) = (1e-3, 0.1);
    let mut runner = TestRunner::new(ProptestConfig { cases: 64, ..ProptestConfig::default() });
    let slopes = prop::sample::select(vec![-5.0, 0.1, 3.0]);
    let ramps = runner.run(&(slopes, -100.0..100.0f64, 0.0..50.0f64), |(a, b, t_end)| {
        let w = window_of(period, span, t_end + span, |t| a * t + b);
        let d = differentiate(&w).unwrap();
        prop_assert!(rel_err(d, a) < 1e-3, "slope {a}: got {d}");
        Ok(())
    });
    let consts = runner.run(&(-1e3..1e3f64, 0.0..50.0f64), |(c, t_end)| {
        prop_assume!(c.abs() > 1e-3);
        let w = window_of(period, span, t_end + span, |_| c);
        let v = denoise(&w).unwrap();
        prop_assert!(rel_err(v, c) < 1e-6, "constant {c}: got {v}");
        let u = window_of(period, span, t_end + span, |_| 0.0);
        let f = estimate_f_order1(&w, &u, 1.0).unwrap();
        prop_assert!(f.abs() < 1e-6, "F on constant {c}: got {f}");
        Ok(())
    });
    match (ramps, consts) {
        (Ok(()), Ok(())) => verdict(true, "ramps, constants and constant-y F over 64 cases each"),
        (r, c) => verdict(false, format!("ramps: {r:?}; constants: {c:?}")),
    }
}

fn criterion_2() -> Verdict {
    let (period, span) = (1e-3, 0.05);
    let t_end = span;
    // y' = 2 + sin t with alpha = 1 and u = sin t
    let y1 = window_of(period, span, t_end, |t| 2.0 * t - t.cos());
    let u = window_of(period, span, t_end, f64::sin);
    let f1 = estimate_f_order1(&y1, &u, 1.0).unwrap();
    // y'' = -1 + 2 sin t with alpha = 2 and u = sin t
    let y2 = window_of(period, span, t_end, |t| -0.5 * t * t - 2.0 * t.sin());
    let f2 = estimate_f_order2(&y2, &u, 2.0).unwrap();
    let (e1, e2) = (rel_err(f1, 2.0), rel_err(f2, -1.0));
    verdict(
        e1 < 0.01 && e2 < 0.02,
        format!("order 1 F = {f1:.6} (rel {e1:.1e}), order 2 F = {f2:.6} (rel {e2:.1e})"),
    )
}

fn criterion_3() -> Verdict {
    let p = VehicleParams::<f64>::nominal();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_round = 0.0f64;
    let mut worst_det = 0.0f64;
    for _ in 0..10_000 {
        let state = VehicleState {
            vx: rng.random_range(1.0..50.0),
            vy: rng.random_range(-2.0..2.0),
            psi_dot: rng.random_range(-1.0..1.0),
            ..Default::default()
        };
        let (y1, y2) = flat_outputs(&state, &p);
        let y2d = y2_rate(state.vx, state.vy, state.psi_dot, &p);
        let (vx, vy, r) = state_from_flat(y1, y2, y2d, &p).unwrap();
        let back = VehicleState { vx, vy, psi_dot: r, ..Default::default() };
        let (b1, b2) = flat_outputs(&back, &p);
        let bd = y2_rate(vx, vy, r, &p);
        for (got, want) in [(b1, y1), (b2, y2), (bd, y2d)] {
            worst_round = worst_round.max((got - want).abs() / want.abs().max(1.0));
        }
        let wdot = rng.random_range(-30.0..30.0);
        let det = delta_matrix(y1, y2, y2d, &p, wdot).unwrap().det;
        let closed = det_delta_closed_form(y1, &p, wdot).unwrap();
        worst_det = worst_det.max(rel_err(det, closed));
    }
    let nonzero = (0..=490).all(|i| {
        let y1 = 1.0 + 0.1 * i as f64;
        det_delta_closed_form(y1, &p, 0.0).is_ok_and(|d| d.abs() > 0.0)
    });
    verdict(
        worst_round < 1e-9 && worst_det < 1e-9 && nonzero,
        format!(
            "round trip max rel {worst_round:.1e}, det max rel {worst_det:.1e}, nonzero on [1, 50] m/s: {nonzero}"
        ),
    )
}

/// Max over a 2 s manoeuvre of `|finite difference of [y1; y2'] - (Delta u + Phi)|`,
/// scaled per channel.
fn phi_delta_residual(dt: f64) -> f64 {
    let p = VehicleParams::<f64>::nominal();
    let mut plant = Plant::new(p).unwrap();
    let mut state = VehicleState::cruising(15.0, 0.0, 0.0, 0.0, &p);
    let steps = (2.0 / dt).round() as usize;
    let mut worst = [0.0f64; 2];
    for k in 0..steps {
        let t = k as f64 * dt;
        let u = ControlInput::new(300.0 * (1.3 * t).sin(), 0.04 * (2.1 * t).sin());
        let (y1, y2) = flat_outputs(&state, &p);
        let y2d = y2_rate(state.vx, state.vy, state.psi_dot, &p);
        let wa = quasi_static_wheel_accels(&state, &u, &p).unwrap();
        let (delta, phi) = decoupling(y1, y2, y2d, &p, wa).unwrap();
        let model = delta.apply([u.torque, u.steer]);
        let next = plant.step(&state, &u, dt).unwrap();
        let fd = [
            (next.vx - state.vx) / dt,
            (y2_rate(next.vx, next.vy, next.psi_dot, &p) - y2d) / dt,
        ];
        for i in 0..2 {
            worst[i] = worst[i].max((fd[i] - (model[i] + phi[i])).abs());
        }
        state = next;
    }
    // y2'' is of order m * Vx * r-dot; bring both channels to comparable units
    worst[0].max(worst[1] / (p.lf * p.m))
}

fn criterion_4() -> Verdict {
    let (e1, e2) = (phi_delta_residual(2e-3), phi_delta_residual(1e-3));
    let ratio = e1 / e2;
    verdict(
        (1.7..2.3).contains(&ratio),
        format!("residual {e1:.3e} at 2 ms, {e2:.3e} at 1 ms, ratio {ratio:.2} (first order: 2)"),
    )
}

/// Closed loop of an intelligent controller around `y^(nu) = F + alpha u`,
/// started at the trim input for its `F`, with a unit step of the reference
/// at 0.3 s followed by a sinusoid. Returns the error trajectory.
fn ultra_local_errors(order: Order, f: f64) -> Vec<f64> {
    let (dt, alpha) = (1e-3, 2.0);
    let (gains, derivative_span) = match order {
        Order::First => (IntelligentGains::new(8.0, 4.0, 0.0), 0.05),
        Order::Second => (IntelligentGains::new(25.0, 0.0, 10.0), 0.05),
    };
    let config = LoopConfig {
        estimator: EstimatorConfig { span: 0.05, alpha, order },
        gains,
        derivative_span,
        initial_u: -f / alpha,
        u_max: None,
    };
    let mut ctl = IntelligentController::new(config, dt).unwrap();
    let (mut y, mut v) = (0.0, 0.0);
    let mut errors = Vec::new();
    for k in 0..2000 {
        let t = k as f64 * dt;
        let reference = if t < 0.3 {
            TrackingReference::new(0.0, 0.0, 0.0)
        } else {
            let s = t - 0.3;
            TrackingReference::new(1.0 + 0.2 * s.sin(), 0.2 * s.cos(), -0.2 * s.sin())
        };
        let out = ctl.step(t, y, &reference).unwrap();
        errors.push(out.e);
        let a = f + alpha * out.u;
        match order {
            Order::First => y += a * dt,
            Order::Second => {
                y += v * dt + 0.5 * a * dt * dt;
                v += a * dt;
            }
        }
    }
    errors
}

fn criterion_5() -> Verdict {
    let mut worst = 0.0f64;
    let mut moved = 0.0f64;
    for order in [Order::First, Order::Second] {
        let base = ultra_local_errors(order, 0.0);
        for f in [3.0, -40.0] {
            let other = ultra_local_errors(order, f);
            for (a, b) in base.iter().zip(&other) {
                worst = worst.max((a - b).abs());
                moved = moved.max(a.abs());
            }
        }
    }
    verdict(
        worst < 1e-9 && moved > 0.5,
        format!("max error difference {worst:.1e} across F in {{0, 3, -40}}, orders 1 and 2"),
    )
}

/// Lateral RMS pins of the default zero-noise scenario: flatness,
/// mfc-flat, mfc-natural.
const NOMINAL_LATERAL_PINS: [(ControllerKind, f64); 3] = [
    (ControllerKind::Flatness, 0.002409968846106838),
    (ControllerKind::MfcFlat, 0.04054510204458612),
    (ControllerKind::MfcNatural, 0.0005055395011747946),
];

fn criterion_6() -> Verdict {
    let cfg = ScenarioConfig { noise: NoiseConfig::ZERO, ..ScenarioConfig::default() };
    let prep = PreparedScenario::new(&cfg).unwrap();
    let mut ok = true;
    let mut detail = format!("track {:.0} m;", prep.track.length());
    for (kind, pin) in NOMINAL_LATERAL_PINS {
        let r = run_prepared(&ScenarioConfig { controller: kind, ..cfg.clone() }, &prep).unwrap();
        let m = r.metrics;
        let pinned = rel_err(m.lateral_rms, pin) < 1e-6;
        ok &= r.status.is_completed() && m.speed_rms < 0.1 && m.lateral_rms < 0.1 && pinned;
        detail += &format!(
            " {kind}: speed {:.2e} lateral {:.2e}{}",
            m.speed_rms,
            m.lateral_rms,
            if pinned { "" } else { " (pin moved)" }
        );
    }
    verdict(ok, detail)
}

fn criterion_7() -> Verdict {
    // default noise, default perturbation list (0.3 Cf, 0.3 Cr)
    let cfg = ScenarioConfig::default();
    let pert = Perturbation { cf_scale: 0.3, cr_scale: 0.3 };
    assert_eq!(cfg.compare_perturbations, vec![pert]);
    let table = compare_controllers(&cfg).unwrap();
    let lateral = |kind, p| {
        let e = table.get(kind, p).unwrap();
        let r = e.outcome.as_ref().unwrap();
        (r.metrics.lateral_rms, r.status.is_completed())
    };
    let (flat_nom, _) = lateral(ControllerKind::Flatness, Perturbation::NONE);
    let (flat_pert, flat_done) = lateral(ControllerKind::Flatness, pert);
    let (nat_nom, _) = lateral(ControllerKind::MfcNatural, Perturbation::NONE);
    let (nat_pert, nat_done) = lateral(ControllerKind::MfcNatural, pert);
    let flat_ratio = flat_pert / flat_nom;
    let nat_ratio = nat_pert / nat_nom;
    let winner = table.winner(pert);
    let ok = flat_ratio >= 2.0
        && nat_done
        && nat_ratio <= 1.2
        && winner == Some(ControllerKind::MfcNatural);
    verdict(
        ok,
        format!(
            "flatness {flat_nom:.3e} -> {flat_pert:.3e} ({flat_ratio:.1}x{}); mfc-natural {nat_nom:.3e} -> {nat_pert:.3e} ({nat_ratio:.2}x); first on perturbed plant: {}",
            if flat_done { "" } else { ", left the corridor" },
            winner.map_or("none", |k| k.as_str())
        ),
    )
}

fn criterion_8() -> Verdict {
    let mut ok = true;
    let mut rows = 0;
    for kind in ControllerKind::ALL {
        let cfg = ScenarioConfig { controller: kind, duration: 15.0, seed: 7, ..ScenarioConfig::default() };
        let a = run_scenario(&cfg).unwrap().telemetry.to_csv();
        let b = run_scenario(&cfg).unwrap().telemetry.to_csv();
        ok &= a == b;
        rows += a.lines().count() - 1;
    }
    verdict(ok, format!("three controllers, {rows} noisy telemetry rows compared byte for byte"))
}

/// Cornering manoeuvre from straight running: constant torque and steer.
fn corner_state(dt: f64) -> VehicleState<f64> {
    let p = VehicleParams::<f64>::nominal();
    let mut plant = Plant::new(p).unwrap();
    let mut s = VehicleState::cruising(20.0, 0.0, 0.0, 0.0, &p);
    let u = ControlInput::new(400.0, 0.06);
    for _ in 0..(1.0 / dt).round() as usize {
        s = plant.step(&s, &u, dt).unwrap();
    }
    s
}

fn state_distance(a: &VehicleState<f64>, b: &VehicleState<f64>) -> f64 {
    [a.vx - b.vx, a.vy - b.vy, a.psi_dot - b.psi_dot, a.psi - b.psi, a.x - b.x, a.y - b.y]
        .iter()
        .fold(0.0f64, |m, d| m.max(d.abs()))
}

fn criterion_9() -> Verdict {
    let steps = [0.04, 0.02, 0.01];
    let reference = corner_state(steps[2] / 16.0);
    let errs: Vec<f64> = steps.iter().map(|&dt| state_distance(&corner_state(dt), &reference)).collect();
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let ok = orders.iter().all(|o| (3.5..4.6).contains(o));
    verdict(
        ok,
        format!(
            "errors {:.2e}, {:.2e}, {:.2e} at 40, 20, 10 ms; observed orders {:.2}, {:.2}",
            errs[0], errs[1], errs[2], orders[0], orders[1]
        ),
    )
}

#[test]
fn acceptance_criteria() {
    type Criterion = (u32, &'static str, Duration, fn() -> Verdict);
    let criteria: [Criterion; 9] = [
        (1, "estimator exactness", Duration::from_secs(1), criterion_1),
        (2, "F recovery", Duration::from_secs(1), criterion_2),
        (3, "flatness round trip", Duration::from_secs(1), criterion_3),
        (4, "Phi/Delta consistency", Duration::from_secs(10), criterion_4),
        (5, "F cancellation", Duration::from_secs(1), criterion_5),
        (6, "nominal tracking", Duration::from_secs(60), criterion_6),
        (7, "robustness to 0.3 Cf / 0.3 Cr", Duration::from_secs(60), criterion_7),
        (8, "determinism", Duration::from_secs(10), criterion_8),
        (9, "integrator order", Duration::from_secs(5), criterion_9),
    ];
    let mut failed = Vec::new();
    for (n, name, budget, check) in criteria {
        let start = Instant::now();
        let v = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let pass = v.passed && in_time;
        println!(
            "criterion {n} ({name}): {} [{:.2} s of {} s] {}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs(),
            v.detail
        );
        if !pass {
            failed.push(n);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
