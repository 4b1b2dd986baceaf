use flatdrive::harness::compare::{compare_controllers, COMPARISON_COLUMNS};
use flatdrive::harness::config::{ControllerKind, NoiseConfig, Perturbation, ScenarioConfig};
use flatdrive::harness::scenario::{
    run_prepared, run_scenario, PreparedScenario, RunStatus, Telemetry, TrackingMetrics,
};

fn short(kind: ControllerKind, duration: f64) -> ScenarioConfig {
    ScenarioConfig { controller: kind, duration, ..ScenarioConfig::default() }
}

#[test]
fn same_seed_gives_identical_csv_and_other_seed_differs() {
    let cfg = short(ControllerKind::MfcNatural, 8.0);
    let a = run_scenario(&cfg).unwrap().telemetry.to_csv();
    let b = run_scenario(&cfg).unwrap().telemetry.to_csv();
    assert_eq!(a, b);
    let c = run_scenario(&ScenarioConfig { seed: cfg.seed + 1, ..cfg }).unwrap().telemetry.to_csv();
    assert_ne!(a, c);
}

#[test]
fn zero_sigma_measurements_equal_truth() {
    let cfg = ScenarioConfig { noise: NoiseConfig::ZERO, ..short(ControllerKind::MfcNatural, 4.0) };
    let tel = run_scenario(&cfg).unwrap().telemetry;
    let col = |n| tel.require(n).unwrap();
    let (vx, vref, dev, e1, e2) = (col("Vx"), col("Vx_ref"), col("e_lat"), col("e1"), col("e2"));
    for row in &tel.rows {
        assert_eq!(row[e1], row[vx] - row[vref]);
        assert_eq!(row[e2], row[dev]);
    }

    let noisy = run_scenario(&short(ControllerKind::MfcNatural, 4.0)).unwrap().telemetry;
    let differs = noisy.rows.iter().filter(|r| r[e2] != r[dev]).count();
    assert_eq!(differs, noisy.rows.len());
}

#[test]
fn metrics_recomputed_from_csv_match() {
    for kind in ControllerKind::ALL {
        let cfg = short(kind, 6.0);
        let result = run_scenario(&cfg).unwrap();
        let parsed = Telemetry::from_csv(&result.telemetry.to_csv()).unwrap();
        assert_eq!(parsed.header, result.telemetry.header);
        let again = TrackingMetrics::from_telemetry(&parsed, cfg.warmup(), cfg.dt).unwrap();
        for ((name, want), (_, got)) in result.metrics.entries().iter().zip(again.entries()) {
            assert!((want - got).abs() <= 1e-12 * want.abs().max(1.0), "{kind} {name}: {want} vs {got}");
        }
    }
}

#[test]
fn metrics_text_lists_every_metric() {
    let result = run_scenario(&short(ControllerKind::Flatness, 2.0)).unwrap();
    let text = result.metrics_text();
    for (name, value) in result.metrics.entries() {
        assert!(text.contains(&format!("{name}={value}\n")), "{name} missing");
    }
    assert!(text.contains("status=completed\n"));
    assert!(text.contains("partial=false\n"));
}

#[test]
fn off_track_guard_fires_on_the_first_step_outside_the_corridor() {
    let mut cfg = ScenarioConfig {
        noise: NoiseConfig::ZERO,
        perturbation: Perturbation { cf_scale: 0.3, cr_scale: 0.3 },
        ..short(ControllerKind::Flatness, 60.0)
    };
    cfg.track.corridor = 0.5;
    let result = run_scenario(&cfg).unwrap();
    let RunStatus::OffTrack { t, deviation } = result.status else {
        panic!("expected off-track, got {}", result.status);
    };
    assert!(deviation.abs() > 0.5);
    let tel = &result.telemetry;
    let (tc, dc) = (tel.require("t").unwrap(), tel.require("e_lat").unwrap());
    let last = tel.rows.last().unwrap();
    assert!(last[dc].abs() <= 0.5);
    assert!((t - last[tc] - cfg.dt).abs() < 1e-9);
    assert!(result.metrics_text().contains("partial=true\n"));
}

#[test]
fn speed_collapse_is_reported_as_divergence() {
    // reversed control direction drives the speed to zero
    let mut cfg = ScenarioConfig { noise: NoiseConfig::ZERO, ..short(ControllerKind::MfcNatural, 60.0) };
    cfg.mfc_natural.longitudinal.alpha = -1.0 / 450.0;
    cfg.torque_max = 3000.0;
    let result = run_scenario(&cfg).unwrap();
    match &result.status {
        RunStatus::Diverged { t, .. } => {
            let tel = &result.telemetry;
            let tc = tel.require("t").unwrap();
            assert!((t - tel.rows.last().unwrap()[tc] - cfg.dt).abs() < 1e-9);
        }
        other => panic!("expected divergence, got {other}"),
    }
}

#[test]
fn empty_perturbation_list_gives_three_ranked_rows() {
    let cfg = ScenarioConfig {
        compare_perturbations: Vec::new(),
        noise: NoiseConfig::ZERO,
        ..short(ControllerKind::MfcNatural, 5.0)
    };
    let table = compare_controllers(&cfg).unwrap();
    assert_eq!(table.entries.len(), 3);
    let mut ranks: Vec<usize> = table.entries.iter().map(|e| e.rank).collect();
    ranks.sort();
    assert_eq!(ranks, [1, 2, 3]);
    let csv = table.to_csv();
    assert_eq!(csv.lines().count(), 4);
    for line in csv.lines() {
        assert_eq!(line.split(',').count(), COMPARISON_COLUMNS.len());
    }
}

#[test]
fn comparison_matches_individual_runs_and_marks_failed_cells() {
    let bad = Perturbation { cf_scale: -1.0, cr_scale: 1.0 };
    let good = Perturbation { cf_scale: 0.5, cr_scale: 0.5 };
    let cfg = ScenarioConfig {
        compare_perturbations: vec![good, bad],
        ..short(ControllerKind::MfcNatural, 5.0)
    };
    let table = compare_controllers(&cfg).unwrap();
    assert_eq!(table.entries.len(), 9);
    for kind in ControllerKind::ALL {
        let e = table.get(kind, bad).unwrap();
        assert_eq!(e.status_label(), "error");
        assert!(e.outcome.is_err());
    }
    let prep = PreparedScenario::new(&cfg).unwrap();
    for kind in ControllerKind::ALL {
        let alone = run_prepared(&ScenarioConfig { controller: kind, perturbation: good, ..cfg.clone() }, &prep).unwrap();
        let cell = table.get(kind, good).unwrap().outcome.as_ref().unwrap();
        assert_eq!(cell.telemetry.to_csv(), alone.telemetry.to_csv());
    }
    let csv = table.to_csv();
    assert_eq!(csv.lines().count(), 10);
    assert!(csv.lines().all(|l| l.split(',').count() == COMPARISON_COLUMNS.len()));
}

#[test]
fn completed_runs_rank_ahead_of_failed_ones() {
    let mut cfg = ScenarioConfig {
        compare_perturbations: Vec::new(),
        noise: NoiseConfig::ZERO,
        ..short(ControllerKind::MfcNatural, 0.0)
    };
    // on the full lap only mfc-natural stays within 5 mm of the path
    cfg.track.corridor = 0.005;
    let table = compare_controllers(&cfg).unwrap();
    let first = table.entries.iter().find(|e| e.rank == 1).unwrap();
    assert_eq!(first.controller, ControllerKind::MfcNatural);
    assert!(first.completed_lateral_rms().is_some());
    for e in table.entries.iter().filter(|e| e.rank > 1) {
        assert_eq!(e.status_label(), "off-track", "{}", e.controller);
    }
}
