//! Closed-loop runs of one controller against one plant configuration.

use std::fmt::{self, Write as _};

use crate::estimation::{EstimatorConfig, Order};
use crate::flatness::{y2_rate, FlatOutputs, FlatReference, FlatnessController, FlatnessGains};
use crate::mfc::{
    FlatOutputMap, IntelligentGains, LoopConfig, MfcFlatController, MfcNaturalController,
    MfcOutput, TrackingReference,
};
use crate::plant::{ControlInput, Plant, VehicleState};

use super::config::{ControllerKind, LoopSettings, ScenarioConfig};
use super::noise::{Channel, NoiseSource};
use super::reference::{record_flat_reference, ReferenceTrajectory};
use super::track::{lateral_deviation, Track};
use super::HarnessError;

/// Plant columns every telemetry file starts with.
pub const BASE_COLUMNS: [&str; 9] = ["t", "Vx", "Vy", "psi_dot", "psi", "X", "Y", "T_w", "delta"];
/// Tracking columns written by the harness after the plant columns.
pub const TRACKING_COLUMNS: [&str; 5] = ["Vx_ref", "e_lat", "e_psi", "sat_T", "sat_delta"];
pub const FLATNESS_COLUMNS: [&str; 3] = ["e_y1", "e_y2", "det_delta"];
pub const MFC_COLUMNS: [&str; 6] = ["F1_est", "F2_est", "u1", "u2", "e1", "e2"];

/// Per-step log of a run. Missing values (cold estimators) are NaN in
/// memory and empty fields in CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Telemetry {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Telemetry {
    pub fn for_controller(kind: ControllerKind) -> Self {
        let extra: &[&str] = match kind {
            ControllerKind::Flatness => &FLATNESS_COLUMNS,
            _ => &MFC_COLUMNS,
        };
        let header = BASE_COLUMNS
            .iter()
            .chain(TRACKING_COLUMNS.iter())
            .chain(extra.iter())
            .map(|s| s.to_string())
            .collect();
        Self { header, rows: Vec::new() }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn require(&self, name: &str) -> Result<usize, HarnessError> {
        self.column(name)
            .ok_or_else(|| HarnessError::Schema(format!("telemetry has no column '{name}'")))
    }

    pub fn values(&self, name: &str) -> Result<impl Iterator<Item = f64> + '_, HarnessError> {
        let i = self.require(name)?;
        Ok(self.rows.iter().map(move |r| r[i]))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.rows.len() * self.header.len() * 12);
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                if !v.is_nan() {
                    let _ = write!(out, "{v}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, HarnessError> {
        let mut lines = text.lines();
        let header: Vec<String> = match lines.next() {
            Some(h) if !h.trim().is_empty() => h.split(',').map(|s| s.trim().to_string()).collect(),
            _ => return Err(HarnessError::Schema("telemetry has no header".into())),
        };
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|f| {
                    let f = f.trim();
                    if f.is_empty() {
                        Ok(f64::NAN)
                    } else {
                        f.parse::<f64>()
                    }
                })
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| HarnessError::Schema(format!("row {}: {e}", i + 2)))?;
            if row.len() != header.len() {
                return Err(HarnessError::Schema(format!(
                    "row {} has {} fields, header has {}",
                    i + 2,
                    row.len(),
                    header.len()
                )));
            }
            rows.push(row);
        }
        Ok(Self { header, rows })
    }
}

/// Tracking quality over the post-warmup part of a run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrackingMetrics {
    pub samples: usize,
    pub lateral_max: f64,
    pub lateral_rms: f64,
    pub yaw_max: f64,
    pub yaw_rms: f64,
    pub speed_rms: f64,
    /// `int T_w^2 dt`
    pub effort_torque: f64,
    /// `int delta^2 dt`
    pub effort_steer: f64,
    /// Fraction of samples with the torque saturated.
    pub saturation_torque: f64,
    pub saturation_steer: f64,
}

impl TrackingMetrics {
    /// Metrics over the rows with `t >= warmup`. This is the only place
    /// metrics are computed, so a run's metrics can be reproduced from its
    /// CSV.
    pub fn from_telemetry(tel: &Telemetry, warmup: f64, dt: f64) -> Result<Self, HarnessError> {
        let col = |n: &str| tel.require(n);
        let (t, vx, vref, el, ep, tw, de, st, sd) = (
            col("t")?,
            col("Vx")?,
            col("Vx_ref")?,
            col("e_lat")?,
            col("e_psi")?,
            col("T_w")?,
            col("delta")?,
            col("sat_T")?,
            col("sat_delta")?,
        );
        let mut m = TrackingMetrics::default();
        let (mut lat, mut yaw, mut spd, mut sat_t, mut sat_d) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for r in tel.rows.iter().filter(|r| r[t] >= warmup) {
            m.samples += 1;
            m.lateral_max = m.lateral_max.max(r[el].abs());
            m.yaw_max = m.yaw_max.max(r[ep].abs());
            lat += r[el] * r[el];
            yaw += r[ep] * r[ep];
            let ev = r[vx] - r[vref];
            spd += ev * ev;
            m.effort_torque += r[tw] * r[tw] * dt;
            m.effort_steer += r[de] * r[de] * dt;
            sat_t += r[st];
            sat_d += r[sd];
        }
        if m.samples > 0 {
            let n = m.samples as f64;
            m.lateral_rms = (lat / n).sqrt();
            m.yaw_rms = (yaw / n).sqrt();
            m.speed_rms = (spd / n).sqrt();
            m.saturation_torque = sat_t / n;
            m.saturation_steer = sat_d / n;
        }
        Ok(m)
    }

    pub fn entries(&self) -> [(&'static str, f64); 10] {
        [
            ("samples", self.samples as f64),
            ("lateral_max", self.lateral_max),
            ("lateral_rms", self.lateral_rms),
            ("yaw_max", self.yaw_max),
            ("yaw_rms", self.yaw_rms),
            ("speed_rms", self.speed_rms),
            ("effort_torque", self.effort_torque),
            ("effort_steer", self.effort_steer),
            ("saturation_torque", self.saturation_torque),
            ("saturation_steer", self.saturation_steer),
        ]
    }
}

/// How a run ended.
#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    OffTrack { t: f64, deviation: f64 },
    Diverged { t: f64, reason: String },
    ControllerFault { t: f64, reason: String },
}

impl RunStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, RunStatus::Completed)
    }

    /// Time at which a failed run stopped.
    pub fn end_time(&self) -> Option<f64> {
        match self {
            RunStatus::Completed => None,
            RunStatus::OffTrack { t, .. }
            | RunStatus::Diverged { t, .. }
            | RunStatus::ControllerFault { t, .. } => Some(*t),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::OffTrack { .. } => "off-track",
            RunStatus::Diverged { .. } => "diverged",
            RunStatus::ControllerFault { .. } => "controller-fault",
        }
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunStatus::Completed => f.write_str("completed"),
            RunStatus::OffTrack { t, deviation } => {
                write!(f, "off-track at t = {t} s (lateral deviation {deviation} m)")
            }
            RunStatus::Diverged { t, reason } => write!(f, "diverged at t = {t} s: {reason}"),
            RunStatus::ControllerFault { t, reason } => {
                write!(f, "controller fault at t = {t} s: {reason}")
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub controller: ControllerKind,
    pub variant: String,
    pub status: RunStatus,
    pub metrics: TrackingMetrics,
    pub telemetry: Telemetry,
}

impl ScenarioResult {
    /// `metric=value` lines.
    pub fn metrics_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "controller={}", self.controller);
        let _ = writeln!(out, "variant={}", self.variant);
        let _ = writeln!(out, "status={}", self.status.label());
        let _ = writeln!(out, "partial={}", !self.status.is_completed());
        if let Some(t) = self.status.end_time() {
            let _ = writeln!(out, "terminated_at={t}");
        }
        for (k, v) in self.metrics.entries() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

/// Track, time reference and recorded flat-output reference shared by all
/// runs of a configuration.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub track: Track,
    pub reference: ReferenceTrajectory,
    pub flat: Vec<FlatReference<f64>>,
    /// Lateral RMS of the reference driver that produced `flat`.
    pub driver_lateral_rms: f64,
}

impl PreparedScenario {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, HarnessError> {
        cfg.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        let track = Track::new(cfg.track.to_spec())?;
        let duration = (cfg.duration > 0.0).then_some(cfg.duration);
        let reference = ReferenceTrajectory::from_track(&track, cfg.dt, duration)?;
        let record = record_flat_reference(
            &track,
            &reference,
            &cfg.params,
            cfg.wheel_policy(),
            &cfg.limits(),
            &cfg.driver,
        )?;
        Ok(Self {
            track,
            reference,
            flat: record.flat,
            driver_lateral_rms: record.lateral_rms,
        })
    }
}

fn loop_config(s: &LoopSettings, span: f64, derivative_span: f64, order: Order) -> LoopConfig<f64> {
    LoopConfig {
        estimator: EstimatorConfig { span, alpha: s.alpha, order },
        gains: IntelligentGains::new(s.kp, s.ki, s.kd),
        derivative_span,
        initial_u: 0.0,
        u_max: None,
    }
}

enum Active {
    Flatness(FlatnessController<f64>),
    MfcFlat(MfcFlatController<f64>),
    MfcNatural(MfcNaturalController<f64>),
}

impl Active {
    fn new(cfg: &ScenarioConfig) -> Result<Self, HarnessError> {
        let limits = cfg.limits();
        Ok(match cfg.controller {
            ControllerKind::Flatness => {
                let gains = FlatnessGains::from_poles(
                    cfg.flatness.longitudinal_pole,
                    cfg.flatness.lateral_pole,
                );
                Active::Flatness(FlatnessController::new(cfg.params, gains)?)
            }
            ControllerKind::MfcFlat => {
                let s = &cfg.mfc_flat;
                let map = FlatOutputMap { m: cfg.params.m, iz: cfg.params.iz, lf: cfg.params.lf };
                Active::MfcFlat(MfcFlatController::from_limits(
                    map,
                    loop_config(&s.longitudinal, s.span, s.span, Order::First),
                    loop_config(&s.lateral, s.span, s.span, Order::First),
                    &limits,
                    cfg.dt,
                )?)
            }
            ControllerKind::MfcNatural => {
                let s = &cfg.mfc_natural;
                Active::MfcNatural(MfcNaturalController::from_limits(
                    loop_config(&s.longitudinal, s.span, s.derivative_span, Order::First),
                    loop_config(&s.lateral, s.span, s.derivative_span, Order::Second),
                    &limits,
                    cfg.dt,
                )?)
            }
        })
    }
}

fn mfc_columns(out: &MfcOutput<f64>) -> [f64; 6] {
    [
        out.longitudinal.f_est.unwrap_or(f64::NAN),
        out.lateral.f_est.unwrap_or(f64::NAN),
        out.longitudinal.u_raw,
        out.lateral.u_raw,
        out.longitudinal.e,
        out.lateral.e,
    ]
}

/// Runs `cfg` from scratch.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioResult, HarnessError> {
    run_prepared(cfg, &PreparedScenario::new(cfg)?)
}

/// Runs `cfg` on an already prepared track and reference. Invalid
/// configurations are errors; faults during the run end it early and are
/// reported in the result's status.
pub fn run_prepared(cfg: &ScenarioConfig, prep: &PreparedScenario) -> Result<ScenarioResult, HarnessError> {
    let plant_params = cfg.plant_params()?;
    let mut plant = Plant::with_policy(plant_params, cfg.wheel_policy())?;
    let mut controller = Active::new(cfg)?;
    let limits = cfg.limits();
    let noise = NoiseSource::new(cfg.seed);
    let sigma = cfg.noise;
    let dt = cfg.dt;
    let refs = prep.reference.samples();
    let first = refs[0];
    let mut state = VehicleState::cruising(first.vx, first.psi, first.x, first.y, &plant_params);
    let mut telemetry = Telemetry::for_controller(cfg.controller);
    telemetry.rows.reserve(refs.len());
    let mut hint = None;
    let mut saturated = [false; 2];
    let mut status = RunStatus::Completed;

    for (k, r) in refs.iter().enumerate() {
        let t = r.t;
        let step = k as u64;
        let (dev, heading_err, proj) = lateral_deviation(state.x, state.y, state.psi, &prep.track, hint);
        hint = Some(proj.index);
        if dev.abs() > cfg.track.corridor {
            status = RunStatus::OffTrack { t, deviation: dev };
            break;
        }

        let vx_m = noise.apply(state.vx, sigma.speed, Channel::Speed, step);
        let vy_m = noise.apply(state.vy, sigma.lateral_speed, Channel::LateralSpeed, step);
        let r_m = noise.apply(state.psi_dot, sigma.yaw_rate, Channel::YawRate, step);
        let dev_m = noise.apply(dev, sigma.lateral_deviation, Channel::LateralDeviation, step);

        let outcome: Result<(ControlInput<f64>, Vec<f64>), String> = match &mut controller {
            Active::Flatness(c) => {
                let p = *c.params();
                let measured = FlatOutputs {
                    y1: vx_m,
                    y2: p.lf * p.m * vy_m - p.iz * r_m,
                    y2_dot: y2_rate(vx_m, vy_m, r_m, &p),
                };
                let freeze = saturated[0] || saturated[1];
                c.control(&measured, &prep.flat[k], plant.wheel_accels(), dt, freeze)
                    .map(|(u, rep)| (u, vec![rep.e_y1, rep.e_y2, rep.det_delta]))
                    .map_err(|e| e.to_string())
            }
            Active::MfcFlat(c) => {
                let f = &prep.flat[k];
                c.control(
                    t,
                    vx_m,
                    vy_m,
                    r_m,
                    &TrackingReference::new(f.y1, f.y1_dot, 0.0),
                    &TrackingReference::new(f.y2, f.y2_dot, f.y2_ddot),
                )
                .map(|o| (o.input, mfc_columns(&o).to_vec()))
                .map_err(|e| e.to_string())
            }
            Active::MfcNatural(c) => c
                .control(
                    t,
                    vx_m,
                    dev_m,
                    &TrackingReference::new(r.vx, r.vx_dot, 0.0),
                    &TrackingReference::default(),
                )
                .map(|o| (o.input, mfc_columns(&o).to_vec()))
                .map_err(|e| e.to_string()),
        };
        let (raw, extra) = match outcome {
            Ok(v) if v.0.torque.is_finite() && v.0.steer.is_finite() => v,
            Ok(v) => {
                status = RunStatus::ControllerFault {
                    t,
                    reason: format!("non-finite control ({}, {})", v.0.torque, v.0.steer),
                };
                break;
            }
            Err(reason) => {
                status = RunStatus::ControllerFault { t, reason };
                break;
            }
        };
        let (u, sat) = limits.saturate(&raw);
        saturated = sat;

        let mut row = Vec::with_capacity(telemetry.header.len());
        row.extend_from_slice(&[
            t,
            state.vx,
            state.vy,
            state.psi_dot,
            state.psi,
            state.x,
            state.y,
            u.torque,
            u.steer,
            r.vx,
            dev,
            heading_err,
            f64::from(u8::from(sat[0])),
            f64::from(u8::from(sat[1])),
        ]);
        row.extend_from_slice(&extra);
        telemetry.rows.push(row);

        if k + 1 < refs.len() {
            match plant.step(&state, &u, dt) {
                Ok(next) => state = next,
                Err(e) => {
                    status = RunStatus::Diverged { t: t + dt, reason: e.to_string() };
                    break;
                }
            }
        }
    }

    let metrics = TrackingMetrics::from_telemetry(&telemetry, cfg.warmup(), dt)?;
    Ok(ScenarioResult {
        controller: cfg.controller,
        variant: cfg.perturbation.label(),
        status,
        metrics,
        telemetry,
    })
}
