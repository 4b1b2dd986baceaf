//! Time-parametrised references: the speed-scheduled path and recorded
//! flat-output references produced by a reference driver.

use crate::flatness::{decoupling, flat_outputs, y2_rate, FlatReference};
use crate::plant::{ActuatorLimits, ControlInput, Plant, VehicleParams, VehicleState, WheelSpeedPolicy};

use super::track::{lateral_deviation, Track};
use super::HarnessError;

/// One sample of the time reference.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReferenceSample {
    pub t: f64,
    pub s: f64,
    pub vx: f64,
    pub vx_dot: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub kappa: f64,
}

/// Path and speed reference on a uniform time grid.
#[derive(Debug, Clone)]
pub struct ReferenceTrajectory {
    dt: f64,
    samples: Vec<ReferenceSample>,
}

impl ReferenceTrajectory {
    /// Time-parametrises the track by integrating `ds/dt = V(s)`. Runs for
    /// `duration` seconds, or until the end of the track when `None`.
    pub fn from_track(track: &Track, dt: f64, duration: Option<f64>) -> Result<Self, HarnessError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(HarnessError::Config(format!("invalid time step dt = {dt}")));
        }
        let end = track.length();
        let max_steps = match duration {
            Some(d) if d > 0.0 => (d / dt).round() as usize,
            _ => usize::MAX,
        };
        let v = |s: f64| track.speed_at(s).0;
        let mut samples = Vec::new();
        let mut s = 0.0;
        for k in 0..=max_steps {
            let (vx, slope) = track.speed_at(s);
            let p = track.point_at(s);
            samples.push(ReferenceSample {
                t: k as f64 * dt,
                s,
                vx,
                vx_dot: vx * slope,
                x: p.x,
                y: p.y,
                psi: p.psi,
                kappa: p.kappa,
            });
            let k1 = v(s);
            let k2 = v(s + 0.5 * dt * k1);
            let k3 = v(s + 0.5 * dt * k2);
            let k4 = v(s + dt * k3);
            let next = s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if next > end {
                break;
            }
            s = next;
        }
        if samples.len() < 2 {
            return Err(HarnessError::Config("reference shorter than two samples".into()));
        }
        let traj = Self { dt, samples };
        traj.check_arc_length(0.01)?;
        Ok(traj)
    }

    /// Cross-checks the travelled arc length against the integral of the
    /// speed reference.
    pub fn check_arc_length(&self, rel_tol: f64) -> Result<(), HarnessError> {
        let integral: f64 = self
            .samples
            .windows(2)
            .map(|w| 0.5 * (w[0].vx + w[1].vx) * self.dt)
            .sum();
        let travelled = self.samples.last().unwrap().s - self.samples[0].s;
        if (integral - travelled).abs() > rel_tol * travelled.max(1e-9) {
            return Err(HarnessError::Config(format!(
                "speed integral {integral} m disagrees with arc length {travelled} m"
            )));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[ReferenceSample] {
        &self.samples
    }

    pub fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }
}

/// Gains of the reference driver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriverSettings {
    /// Natural frequency of the lateral error dynamics (rad/s).
    pub lateral_bandwidth: f64,
    pub lateral_damping: f64,
    pub speed_kp: f64,
    pub speed_ki: f64,
    /// Look-ahead time for the curvature feedforward (s).
    pub preview: f64,
}

impl Default for DriverSettings {
    fn default() -> Self {
        Self {
            lateral_bandwidth: 4.0,
            lateral_damping: 1.0,
            speed_kp: 2.0,
            speed_ki: 0.5,
            preview: 0.15,
        }
    }
}

/// Steady-state steering angle for curvature `kappa` at speed `v` in the
/// linear tyre regime (kinematic term plus understeer gradient).
pub fn steady_state_steer(kappa: f64, v: f64, p: &VehicleParams<f64>) -> f64 {
    let l = p.wheelbase();
    let understeer = p.m / l * (p.lr / p.cf - p.lf / p.cr);
    kappa * (l + understeer * v * v)
}

/// Recorded run of the reference driver.
#[derive(Debug, Clone)]
pub struct DriverRecord {
    pub flat: Vec<FlatReference<f64>>,
    pub states: Vec<VehicleState<f64>>,
    pub inputs: Vec<ControlInput<f64>>,
    pub lateral_rms: f64,
}

/// Drives the plant built from `params` along the reference with full state
/// knowledge and records the flat outputs with their derivatives. The
/// recorded `y1_dot` and `y2_ddot` are model-exact for the applied inputs.
pub fn record_flat_reference(
    track: &Track,
    reference: &ReferenceTrajectory,
    params: &VehicleParams<f64>,
    policy: WheelSpeedPolicy<f64>,
    limits: &ActuatorLimits<f64>,
    driver: &DriverSettings,
) -> Result<DriverRecord, HarnessError> {
    let mut plant = Plant::with_policy(*params, policy)?;
    let first = reference.samples()[0];
    let mut state = VehicleState::cruising(first.vx, first.psi, first.x, first.y, params);
    let dt = reference.dt();
    let l = params.wheelbase();
    let inertia = 1.0 + 2.0 * params.ir / (params.m * params.r * params.r);
    let mut speed_int = 0.0;
    let mut hint = None;
    let n = reference.len();
    let mut out = DriverRecord {
        flat: Vec::with_capacity(n),
        states: Vec::with_capacity(n),
        inputs: Vec::with_capacity(n),
        lateral_rms: 0.0,
    };
    let mut sq = 0.0;
    for (k, r) in reference.samples().iter().enumerate() {
        let (dev, heading_err, proj) = lateral_deviation(state.x, state.y, state.psi, track, hint);
        hint = Some(proj.index);
        sq += dev * dev;

        let v = state.vx;
        let course_err = heading_err + state.vy.atan2(v);
        let dev_rate = v * course_err.sin();
        let w = driver.lateral_bandwidth;
        let kappa = track.curvature_at(proj.s + driver.preview * v);
        let feedback = -(l / (v * v)) * (w * w * dev + 2.0 * driver.lateral_damping * w * dev_rate);
        let steer_cmd = steady_state_steer(kappa, v, params) + feedback;

        let e_v = r.vx - v;
        let accel = r.vx_dot + driver.speed_kp * e_v + driver.speed_ki * speed_int;
        speed_int += e_v * dt;
        let g12 = params.cf / params.m * (state.vy + params.lf * state.psi_dot) / v;
        let torque = params.m
            * params.r
            * (inertia * accel - state.psi_dot * state.vy - g12 * steer_cmd);
        let (u, _) = limits.saturate(&ControlInput::new(torque, steer_cmd));

        let (y1, y2) = flat_outputs(&state, params);
        let y2_dot = y2_rate(state.vx, state.vy, state.psi_dot, params);
        let (delta, phi) = decoupling(y1, y2, y2_dot, params, plant.wheel_accels())
            .map_err(|e| HarnessError::Reference(format!("step {k}: {e}")))?;
        let rates = delta.apply([u.torque, u.steer]);
        out.flat.push(FlatReference {
            y1,
            y1_dot: rates[0] + phi[0],
            y2,
            y2_dot,
            y2_ddot: rates[1] + phi[1],
        });
        out.states.push(state);
        out.inputs.push(u);
        if k + 1 < n {
            state = plant
                .step(&state, &u, dt)
                .map_err(|e| HarnessError::Reference(format!("step {k}: {e}")))?;
        }
    }
    out.lateral_rms = (sq / n as f64).sqrt();
    check_derivative(&out.flat, dt, "y1", |f| f.y1, |f| f.y1_dot)?;
    check_derivative(&out.flat, dt, "y2", |f| f.y2, |f| f.y2_dot)?;
    check_derivative(&out.flat, dt, "y2_dot", |f| f.y2_dot, |f| f.y2_ddot)?;
    Ok(out)
}

/// Central finite differences of `value` must agree with `rate` to 2% of
/// the rate's range.
pub fn check_derivative<S>(
    series: &[S],
    dt: f64,
    name: &str,
    value: impl Fn(&S) -> f64,
    rate: impl Fn(&S) -> f64,
) -> Result<(), HarnessError> {
    let scale = series.iter().map(|s| rate(s).abs()).fold(0.0, f64::max).max(1e-9);
    for k in 1..series.len().saturating_sub(1) {
        let fd = (value(&series[k + 1]) - value(&series[k - 1])) / (2.0 * dt);
        if (fd - rate(&series[k])).abs() > 0.02 * scale {
            return Err(HarnessError::Reference(format!(
                "derivative of {name} inconsistent at sample {k}: finite difference {fd}, recorded {}",
                rate(&series[k])
            )));
        }
    }
    Ok(())
}
