//! 3DoF nonlinear two-wheel vehicle model in control-affine form.
//!
//! The chassis substate `x = (Vx, Vy, psi_dot)` evolves as `x' = f(x) + g(x) u`
//! with `u = (T_w, delta)`. Front/rear wheel angular accelerations enter `f`
//! and `g` as exogenous signals; [`WheelSpeedPolicy`] decides where they come
//! from when the plant is stepped. Global pose `(psi, X, Y)` is integrated
//! alongside with planar kinematics.

use thiserror::Error;

use crate::integrate::rk4_step;
use crate::Scalar;

/// Lowest longitudinal speed the model accepts; `f` divides by `Vx`.
pub const VX_MIN: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("longitudinal speed {vx} m/s is below the singular-speed guard {vx_min} m/s")]
    SingularSpeed { vx: f64, vx_min: f64 },
    #[error("plant diverged: non-finite {field}")]
    Divergence { field: &'static str },
    #[error("invalid vehicle parameter: {0}")]
    InvalidParams(String),
    #[error("invalid step size {0} s")]
    InvalidStep(f64),
}

/// Physical constants of the two-wheel model, SI units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams<T> {
    /// Mass (kg).
    pub m: T,
    /// Yaw moment of inertia (kg m^2).
    pub iz: T,
    /// Wheel spin inertia (kg m^2).
    pub ir: T,
    /// CoG to front axle (m).
    pub lf: T,
    /// CoG to rear axle (m).
    pub lr: T,
    /// Front cornering stiffness (N/rad).
    pub cf: T,
    /// Rear cornering stiffness (N/rad).
    pub cr: T,
    /// Tire radius (m).
    pub r: T,
    /// Gravity (m/s^2).
    pub g: T,
}

impl<T: Scalar> VehicleParams<T> {
    /// Representative mid-size sedan.
    pub fn nominal() -> Self {
        Self {
            m: T::lit(1500.0),
            iz: T::lit(2500.0),
            ir: T::lit(1.0),
            lf: T::lit(1.1),
            lr: T::lit(1.5),
            cf: T::lit(60000.0),
            cr: T::lit(57000.0),
            r: T::lit(0.3),
            g: T::lit(9.81),
        }
    }

    pub fn wheelbase(&self) -> T {
        self.lf + self.lr
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let fields = [
            ("m", self.m),
            ("Iz", self.iz),
            ("Ir", self.ir),
            ("Lf", self.lf),
            ("Lr", self.lr),
            ("Cf", self.cf),
            ("Cr", self.cr),
            ("R", self.r),
            ("g", self.g),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > T::zero()) {
                return Err(PlantError::InvalidParams(format!(
                    "{name} = {v} must be finite and strictly positive"
                )));
            }
        }
        if self.iz <= self.lf * self.m {
            return Err(PlantError::InvalidParams(format!(
                "Iz = {} must exceed Lf*m = {}",
                self.iz,
                self.lf * self.m
            )));
        }
        Ok(())
    }

    /// Copy with the cornering stiffnesses scaled, e.g. `(0.3, 0.3)` for the
    /// degraded-grip robustness test.
    pub fn perturbed(&self, cf_scale: T, cr_scale: T) -> Result<Self, PlantError> {
        for (name, s) in [("cf_scale", cf_scale), ("cr_scale", cr_scale)] {
            if !(s.is_finite() && s > T::zero()) {
                return Err(PlantError::InvalidParams(format!(
                    "{name} = {s} must be strictly positive"
                )));
            }
        }
        let out = Self {
            cf: self.cf * cf_scale,
            cr: self.cr * cr_scale,
            ..*self
        };
        out.validate()?;
        Ok(out)
    }
}

/// Free-function form of [`VehicleParams::perturbed`].
pub fn perturb_params<T: Scalar>(
    params: &VehicleParams<T>,
    cf_scale: T,
    cr_scale: T,
) -> Result<VehicleParams<T>, PlantError> {
    params.perturbed(cf_scale, cr_scale)
}

/// Dynamic and pose state propagated by the plant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleState<T> {
    pub vx: T,
    pub vy: T,
    pub psi_dot: T,
    pub psi: T,
    pub x: T,
    pub y: T,
    pub omega_f: T,
    pub omega_r: T,
}

impl<T: Scalar> VehicleState<T> {
    /// Straight-line motion at `vx` along the heading `psi` from `(x, y)`,
    /// wheels rolling without slip.
    pub fn cruising(vx: T, psi: T, x: T, y: T, params: &VehicleParams<T>) -> Self {
        Self {
            vx,
            psi,
            x,
            y,
            omega_f: vx / params.r,
            omega_r: vx / params.r,
            ..Default::default()
        }
    }

    pub fn check_finite(&self) -> Result<(), PlantError> {
        let fields = [
            ("Vx", self.vx),
            ("Vy", self.vy),
            ("psi_dot", self.psi_dot),
            ("psi", self.psi),
            ("X", self.x),
            ("Y", self.y),
            ("omega_f", self.omega_f),
            ("omega_r", self.omega_r),
        ];
        match fields.iter().find(|(_, v)| !v.is_finite()) {
            Some((field, _)) => Err(PlantError::Divergence { field }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput<T> {
    /// Total wheel torque (N m).
    pub torque: T,
    /// Front wheel steer angle (rad).
    pub steer: T,
}

impl<T: Scalar> ControlInput<T> {
    pub fn new(torque: T, steer: T) -> Self {
        Self { torque, steer }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }
}

/// Symmetric actuator bounds `|T_w| <= torque_max`, `|delta| <= steer_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuatorLimits<T> {
    pub torque_max: T,
    pub steer_max: T,
}

impl<T: Scalar> ActuatorLimits<T> {
    pub fn new(torque_max: T, steer_max: T) -> Self {
        Self {
            torque_max,
            steer_max,
        }
    }

    /// Saturated input and which channels hit a bound.
    pub fn saturate(&self, u: &ControlInput<T>) -> (ControlInput<T>, [bool; 2]) {
        let (torque, sat_t) = clamp_sym(u.torque, self.torque_max);
        let (steer, sat_d) = clamp_sym(u.steer, self.steer_max);
        (ControlInput::new(torque, steer), [sat_t, sat_d])
    }
}

impl<T: Scalar> Default for ActuatorLimits<T> {
    fn default() -> Self {
        Self::new(T::lit(1500.0), T::lit(30f64.to_radians()))
    }
}

/// Clamps `x` to `[-bound, bound]`, reporting whether it was clipped.
pub fn clamp_sym<T: Scalar>(x: T, bound: T) -> (T, bool) {
    if x > bound {
        (bound, true)
    } else if x < -bound {
        (-bound, true)
    } else {
        (x, false)
    }
}

/// Front and rear wheel angular accelerations (rad/s^2).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WheelAccels<T> {
    pub front: T,
    pub rear: T,
}

impl<T: Scalar> WheelAccels<T> {
    pub fn new(front: T, rear: T) -> Self {
        Self { front, rear }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }
}

/// Tire forces and slip quantities under the linear small-slip tire law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceSet<T> {
    pub fx_f: T,
    pub fx_r: T,
    pub fy_f: T,
    pub fy_r: T,
    pub mz: T,
    pub alpha_f: T,
    pub alpha_r: T,
    pub beta: T,
}

/// How wheel speeds and their accelerations are produced while stepping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WheelSpeedPolicy<T> {
    /// Rolling without slip: `omega = Vx / R`, `omega_dot = Vx_dot / R`. The
    /// wheel-inertia term of `f` then depends on `Vx_dot` itself, which is
    /// solved algebraically inside every right-hand-side evaluation.
    QuasiStatic,
    /// Wheel speeds are states: `Ir * omega_dot = T_w / 2 - R * Fx` per axle,
    /// with `Fx = slip_stiffness * (R * omega - Vx) / Vx`.
    Dynamic { slip_stiffness: T },
}

fn guard_speed<T: Scalar>(vx: T, vx_min: T) -> Result<(), PlantError> {
    if !vx.is_finite() {
        Err(PlantError::Divergence { field: "Vx" })
    } else if vx >= vx_min {
        Ok(())
    } else {
        Err(PlantError::SingularSpeed {
            vx: vx.as_f64(),
            vx_min: vx_min.as_f64(),
        })
    }
}

/// Drift vector `f(x)` and input matrix `g(x)` (3x2, row-major).
pub fn affine_terms<T: Scalar>(
    state: &VehicleState<T>,
    params: &VehicleParams<T>,
    wheel_accels: WheelAccels<T>,
) -> Result<([T; 3], [[T; 2]; 3]), PlantError> {
    guard_speed(state.vx, T::lit(VX_MIN))?;
    let p = params;
    let (vx, vy, r) = (state.vx, state.vy, state.psi_dot);
    let front_slip = (vy + p.lf * r) / vx;
    let rear_slip = (vy - p.lr * r) / vx;

    let f = [
        r * vy - p.ir / (p.m * p.r) * (wheel_accels.rear + wheel_accels.front),
        -r * vx + (-p.cf * front_slip - p.cr * rear_slip) / p.m,
        (-p.lf * p.cf * front_slip + p.lr * p.cr * rear_slip) / p.iz,
    ];
    let g = [
        [T::one() / (p.m * p.r), p.cf / p.m * front_slip],
        [
            T::zero(),
            (p.cf * p.r - p.ir * wheel_accels.front) / (p.m * p.r),
        ],
        [
            T::zero(),
            (p.lf * p.cf * p.r - p.lf * p.ir * wheel_accels.front) / (p.iz * p.r),
        ],
    ];
    Ok((f, g))
}

/// `d/dt (Vx, Vy, psi_dot) = f(x) + g(x) u` with wheel accelerations supplied
/// by the caller.
pub fn dynamics_rhs<T: Scalar>(
    state: &VehicleState<T>,
    input: &ControlInput<T>,
    params: &VehicleParams<T>,
    wheel_accels: WheelAccels<T>,
) -> Result<[T; 3], PlantError> {
    let (f, g) = affine_terms(state, params, wheel_accels)?;
    let u = [input.torque, input.steer];
    let mut out = f;
    for (row, o) in g.iter().zip(out.iter_mut()) {
        *o = *o + row[0] * u[0] + row[1] * u[1];
    }
    Ok(out)
}

/// `d/dt (psi, X, Y)`.
pub fn pose_rhs<T: Scalar>(state: &VehicleState<T>) -> [T; 3] {
    let (s, c) = state.psi.sin_cos();
    [
        state.psi_dot,
        state.vx * c - state.vy * s,
        state.vx * s + state.vy * c,
    ]
}

/// Wheel accelerations consistent with rolling without slip at this state and
/// input. Solves `Vx_dot = f1 + g11 T + g12 delta` where `f1` itself contains
/// `-2 Ir Vx_dot / (m R^2)`.
pub fn quasi_static_wheel_accels<T: Scalar>(
    state: &VehicleState<T>,
    input: &ControlInput<T>,
    params: &VehicleParams<T>,
) -> Result<WheelAccels<T>, PlantError> {
    guard_speed(state.vx, T::lit(VX_MIN))?;
    let p = params;
    let front_slip = (state.vy + p.lf * state.psi_dot) / state.vx;
    let free = state.psi_dot * state.vy
        + input.torque / (p.m * p.r)
        + p.cf / p.m * front_slip * input.steer;
    let inertia = T::one() + T::lit(2.0) * p.ir / (p.m * p.r * p.r);
    let w = free / inertia / p.r;
    Ok(WheelAccels::new(w, w))
}

fn dynamic_wheel_accels<T: Scalar>(
    state: &VehicleState<T>,
    input: &ControlInput<T>,
    params: &VehicleParams<T>,
    slip_stiffness: T,
) -> WheelAccels<T> {
    let half = T::lit(0.5);
    let axle = |omega: T| {
        let fx = slip_stiffness * (params.r * omega - state.vx) / state.vx;
        (half * input.torque - params.r * fx) / params.ir
    };
    WheelAccels::new(axle(state.omega_f), axle(state.omega_r))
}

/// Tire forces at the given state; lateral forces follow `Fy = -C * alpha`.
pub fn tire_forces<T: Scalar>(
    state: &VehicleState<T>,
    input: &ControlInput<T>,
    params: &VehicleParams<T>,
    wheel_accels: WheelAccels<T>,
) -> Result<ForceSet<T>, PlantError> {
    guard_speed(state.vx, T::lit(VX_MIN))?;
    let p = params;
    let half = T::lit(0.5);
    let alpha_f = (state.vy + p.lf * state.psi_dot) / state.vx - input.steer;
    let alpha_r = (state.vy - p.lr * state.psi_dot) / state.vx;
    let fy_f = -p.cf * alpha_f;
    let fy_r = -p.cr * alpha_r;
    let fx_f = (half * input.torque - p.ir * wheel_accels.front) / p.r;
    let fx_r = (half * input.torque - p.ir * wheel_accels.rear) / p.r;
    // small-angle projection of the front forces, as in the affine model
    let inertial_f = -p.ir * wheel_accels.front / p.r;
    let mz = p.lf * (fy_f + inertial_f * input.steer) - p.lr * fy_r;
    Ok(ForceSet {
        fx_f,
        fx_r,
        fy_f,
        fy_r,
        mz,
        alpha_f,
        alpha_r,
        beta: state.vy.atan2(state.vx),
    })
}

/// Vehicle plant: parameters, wheel-speed policy and the most recent wheel
/// accelerations (exposed as a measured signal).
#[derive(Debug, Clone)]
pub struct Plant<T> {
    params: VehicleParams<T>,
    policy: WheelSpeedPolicy<T>,
    wheel_accels: WheelAccels<T>,
}

impl<T: Scalar> Plant<T> {
    pub fn new(params: VehicleParams<T>) -> Result<Self, PlantError> {
        Self::with_policy(params, WheelSpeedPolicy::QuasiStatic)
    }

    pub fn with_policy(
        params: VehicleParams<T>,
        policy: WheelSpeedPolicy<T>,
    ) -> Result<Self, PlantError> {
        params.validate()?;
        if let WheelSpeedPolicy::Dynamic { slip_stiffness } = policy {
            if !(slip_stiffness > T::zero()) {
                return Err(PlantError::InvalidParams(
                    "slip stiffness must be strictly positive".into(),
                ));
            }
        }
        Ok(Self {
            params,
            policy,
            wheel_accels: WheelAccels::zero(),
        })
    }

    pub fn params(&self) -> &VehicleParams<T> {
        &self.params
    }

    pub fn policy(&self) -> WheelSpeedPolicy<T> {
        self.policy
    }

    /// Wheel accelerations at the end of the last step, evaluated with the
    /// input that was applied.
    pub fn wheel_accels(&self) -> WheelAccels<T> {
        self.wheel_accels
    }

    fn wheel_accels_at(
        &self,
        state: &VehicleState<T>,
        input: &ControlInput<T>,
    ) -> Result<WheelAccels<T>, PlantError> {
        match self.policy {
            WheelSpeedPolicy::QuasiStatic => quasi_static_wheel_accels(state, input, &self.params),
            WheelSpeedPolicy::Dynamic { slip_stiffness } => {
                guard_speed(state.vx, T::lit(VX_MIN))?;
                Ok(dynamic_wheel_accels(state, input, &self.params, slip_stiffness))
            }
        }
    }

    /// Full right-hand side over `(Vx, Vy, psi_dot, psi, X, Y, omega_f, omega_r)`.
    pub fn rhs(
        &self,
        state: &VehicleState<T>,
        input: &ControlInput<T>,
    ) -> Result<[T; 8], PlantError> {
        let wa = self.wheel_accels_at(state, input)?;
        let d = dynamics_rhs(state, input, &self.params, wa)?;
        let p = pose_rhs(state);
        Ok([d[0], d[1], d[2], p[0], p[1], p[2], wa.front, wa.rear])
    }

    /// One RK4 step of length `dt` with `input` held constant.
    pub fn step(
        &mut self,
        state: &VehicleState<T>,
        input: &ControlInput<T>,
        dt: T,
    ) -> Result<VehicleState<T>, PlantError> {
        if !(dt > T::zero() && dt.is_finite()) {
            return Err(PlantError::InvalidStep(dt.as_f64()));
        }
        let x0 = to_array(state);
        let x1 = rk4_step(&x0, dt, |x| self.rhs(&from_array(x), input))?;
        let mut next = from_array(&x1);
        next.check_finite()?;
        if self.policy == WheelSpeedPolicy::QuasiStatic {
            next.omega_f = next.vx / self.params.r;
            next.omega_r = next.vx / self.params.r;
        }
        self.wheel_accels = self.wheel_accels_at(&next, input)?;
        Ok(next)
    }
}

/// Steps a quasi-static plant built from `params`.
pub fn step<T: Scalar>(
    state: &VehicleState<T>,
    input: &ControlInput<T>,
    params: &VehicleParams<T>,
    dt: T,
) -> Result<VehicleState<T>, PlantError> {
    Plant::new(*params)?.step(state, input, dt)
}

fn to_array<T: Scalar>(s: &VehicleState<T>) -> [T; 8] {
    [s.vx, s.vy, s.psi_dot, s.psi, s.x, s.y, s.omega_f, s.omega_r]
}

fn from_array<T: Scalar>(a: &[T; 8]) -> VehicleState<T> {
    VehicleState {
        vx: a[0],
        vy: a[1],
        psi_dot: a[2],
        psi: a[3],
        x: a[4],
        y: a[5],
        omega_f: a[6],
        omega_r: a[7],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn nominal() -> VehicleParams<f64> {
        VehicleParams::nominal()
    }

    fn state(vx: f64, vy: f64, r: f64) -> VehicleState<f64> {
        VehicleState {
            vx,
            vy,
            psi_dot: r,
            ..Default::default()
        }
    }

    #[test]
    fn coasting_straight_is_equilibrium() {
        let d = dynamics_rhs(
            &state(20.0, 0.0, 0.0),
            &ControlInput::zero(),
            &nominal(),
            WheelAccels::zero(),
        )
        .unwrap();
        assert_eq!(d, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn torque_only_accelerates_through_g11() {
        let d = dynamics_rhs(
            &state(20.0, 0.0, 0.0),
            &ControlInput::new(100.0, 0.0),
            &nominal(),
            WheelAccels::zero(),
        )
        .unwrap();
        assert_relative_eq!(d[0], 100.0 / (1500.0 * 0.3), max_relative = 1e-15);
        assert_eq!(d[1], 0.0);
        assert_eq!(d[2], 0.0);
    }

    #[test]
    fn cornering_state_matches_scalar_evaluation() {
        // frozen from a scalar-by-scalar evaluation of the f and g entries
        let s = state(20.0, 0.5, 0.2);
        let u = ControlInput::new(50.0, 0.05);
        let d = dynamics_rhs(&s, &u, &nominal(), WheelAccels::zero()).unwrap();
        assert_relative_eq!(d[0], 0.2831111111111111, max_relative = 1e-12);
        assert_relative_eq!(d[1], -3.8200000000000003, max_relative = 1e-12);
        assert_relative_eq!(d[2], 0.7116, max_relative = 1e-12);

        let d = dynamics_rhs(&s, &u, &nominal(), WheelAccels::new(2.0, 1.5)).unwrap();
        assert_relative_eq!(d[0], 0.2753333333333333, max_relative = 1e-12);
        assert_relative_eq!(d[1], -3.820222222222222, max_relative = 1e-12);
        assert_relative_eq!(d[2], 0.7114533333333335, max_relative = 1e-12);
    }

    #[test]
    fn low_speed_is_rejected() {
        let err = dynamics_rhs(
            &state(0.4, 0.0, 0.0),
            &ControlInput::zero(),
            &nominal(),
            WheelAccels::zero(),
        )
        .unwrap_err();
        assert!(matches!(err, PlantError::SingularSpeed { .. }));
    }

    #[test]
    fn pose_rhs_examples() {
        let mut s = state(10.0, 0.0, 0.3);
        let p = pose_rhs(&s);
        assert_eq!(p, [0.3, 10.0, 0.0]);

        s.psi = std::f64::consts::FRAC_PI_2;
        let p = pose_rhs(&s);
        assert_relative_eq!(p[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(p[2], 10.0, epsilon = 1e-12);

        let s = VehicleState {
            vx: 1.0,
            vy: 1.0,
            psi: std::f64::consts::FRAC_PI_4,
            ..Default::default()
        };
        let p = pose_rhs(&s);
        assert_relative_eq!(p[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(p[2], 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn equilibrium_step_only_advances_position() {
        let params = nominal();
        let s0 = VehicleState::cruising(15.0, 0.0, 0.0, 0.0, &params);
        let s1 = step(&s0, &ControlInput::zero(), &params, 0.001).unwrap();
        assert_eq!(s1.vx, 15.0);
        assert_eq!(s1.vy, 0.0);
        assert_eq!(s1.psi_dot, 0.0);
        assert_relative_eq!(s1.x, 15.0 * 0.001, max_relative = 1e-14);
    }

    #[test]
    fn constant_torque_matches_closed_form() {
        // Vx' = T / (m R + 2 Ir / R) under rolling without slip
        let params = nominal();
        let mut plant = Plant::new(params).unwrap();
        let mut s = VehicleState::cruising(10.0, 0.0, 0.0, 0.0, &params);
        let u = ControlInput::new(300.0, 0.0);
        for _ in 0..1000 {
            s = plant.step(&s, &u, 0.001).unwrap();
        }
        let expected = 300.0 / (1500.0 * 0.3 + 2.0 * 1.0 / 0.3);
        assert_relative_eq!(s.vx - 10.0, expected, max_relative = 1e-10);
        assert_relative_eq!(plant.wheel_accels().front, expected / 0.3, max_relative = 1e-10);
        // negligible wheel inertia recovers T/(mR)
        let light = VehicleParams { ir: 1e-9, ..params };
        let mut s = VehicleState::cruising(10.0, 0.0, 0.0, 0.0, &light);
        for _ in 0..1000 {
            s = step(&s, &u, &light, 0.001).unwrap();
        }
        assert_relative_eq!(s.vx - 10.0, 300.0 / 450.0, max_relative = 1e-6);
    }

    #[test]
    fn dynamic_wheels_settle_to_rolling() {
        let params = nominal();
        let mut plant = Plant::with_policy(
            params,
            WheelSpeedPolicy::Dynamic {
                slip_stiffness: 1.0e5,
            },
        )
        .unwrap();
        let mut s = VehicleState::cruising(15.0, 0.0, 0.0, 0.0, &params);
        s.omega_f += 2.0;
        for _ in 0..2000 {
            s = plant.step(&s, &ControlInput::zero(), 0.001).unwrap();
        }
        assert_relative_eq!(s.omega_f * params.r, s.vx, max_relative = 1e-6);
        assert_relative_eq!(s.omega_r * params.r, s.vx, max_relative = 1e-6);
    }

    #[test]
    fn integrator_is_fourth_order_when_cornering() {
        let params = nominal();
        let run = |dt: f64| {
            let n = (1.0 / dt).round() as usize;
            let mut plant = Plant::new(params).unwrap();
            let mut s = VehicleState::cruising(20.0, 0.0, 0.0, 0.0, &params);
            let u = ControlInput::new(200.0, 0.04);
            for _ in 0..n {
                s = plant.step(&s, &u, dt).unwrap();
            }
            s
        };
        let reference = run(0.025 / 16.0);
        let err = |s: VehicleState<f64>| {
            (s.vy - reference.vy).abs() + (s.psi_dot - reference.psi_dot).abs()
        };
        let ratio = err(run(0.025)) / err(run(0.0125));
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn perturbation_scales_stiffness() {
        let p = nominal();
        assert_eq!(perturb_params(&p, 1.0, 1.0).unwrap(), p);
        let q = perturb_params(&p, 0.3, 0.3).unwrap();
        assert_relative_eq!(q.cf, 18000.0);
        assert_relative_eq!(q.cr, 17100.0);
        let q = perturb_params(&p, 0.3, 1.0).unwrap();
        assert_relative_eq!(q.cf, 18000.0);
        assert_eq!(q.cr, p.cr);
        assert!(perturb_params(&p, 0.0, 1.0).is_err());
        assert!(perturb_params(&p, 1.0, -2.0).is_err());
    }

    #[test]
    fn saturation_reports_clipped_channels() {
        let lim = ActuatorLimits::<f64>::default();
        let (u, sat) = lim.saturate(&ControlInput::new(2000.0, -0.1));
        assert_eq!(u.torque, 1500.0);
        assert_eq!(u.steer, -0.1);
        assert_eq!(sat, [true, false]);
        let (u, sat) = lim.saturate(&ControlInput::new(-10.0, -1.0));
        assert_relative_eq!(u.steer, -30f64.to_radians());
        assert_eq!(sat, [false, true]);
    }

    #[test]
    fn rejects_bad_params() {
        let p = VehicleParams { iz: 1000.0, ..nominal() };
        assert!(p.validate().is_err());
        let p = VehicleParams { m: -1.0, ..nominal() };
        assert!(p.validate().is_err());
        assert!(nominal().validate().is_ok());
    }

    #[test]
    fn divergence_names_field() {
        let params = nominal();
        let s = VehicleState::cruising(15.0, 0.0, 0.0, 0.0, &params);
        let err = step(&s, &ControlInput::new(f64::INFINITY, 0.0), &params, 0.001).unwrap_err();
        assert_eq!(err, PlantError::Divergence { field: "Vx" });
    }

    #[test]
    fn deterministic_bitwise() {
        let params = nominal();
        let run = || {
            let mut plant = Plant::new(params).unwrap();
            let mut s = VehicleState::cruising(18.0, 0.0, 0.0, 0.0, &params);
            for k in 0..500 {
                let u = ControlInput::new(100.0 * (k as f64 * 0.01).sin(), 0.03);
                s = plant.step(&s, &u, 0.001).unwrap();
            }
            s
        };
        let (a, b) = (run(), run());
        assert_eq!(a.x.to_bits(), b.x.to_bits());
        assert_eq!(a.psi.to_bits(), b.psi.to_bits());
    }

    #[test]
    fn works_in_single_precision() {
        let params = VehicleParams::<f32>::nominal();
        let mut plant = Plant::new(params).unwrap();
        let mut s = VehicleState::cruising(20.0f32, 0.0, 0.0, 0.0, &params);
        for _ in 0..100 {
            s = plant.step(&s, &ControlInput::new(0.0, 0.02), 0.001).unwrap();
        }
        assert!(s.psi_dot > 0.0 && s.vy.is_finite());
    }

    proptest! {
        #[test]
        fn straight_line_subspace_is_invariant(vx in 1.0f64..40.0, torque in -800.0f64..800.0) {
            let params = nominal();
            let mut plant = Plant::new(params).unwrap();
            let mut s = VehicleState::cruising(vx, 0.0, 0.0, 0.0, &params);
            for _ in 0..200 {
                s = plant.step(&s, &ControlInput::new(torque, 0.0), 0.001).unwrap();
            }
            prop_assert_eq!(s.vy, 0.0);
            prop_assert_eq!(s.psi_dot, 0.0);
        }

        #[test]
        fn rhs_is_affine_in_input(
            vx in 1.0f64..40.0, vy in -2.0f64..2.0, r in -1.0f64..1.0,
            t1 in -500.0f64..500.0, d1 in -0.3f64..0.3,
            t2 in -500.0f64..500.0, d2 in -0.3f64..0.3,
            wf in -5.0f64..5.0, wr in -5.0f64..5.0,
        ) {
            let p = nominal();
            let s = state(vx, vy, r);
            let w = WheelAccels::new(wf, wr);
            let at = |u: ControlInput<f64>| dynamics_rhs(&s, &u, &p, w).unwrap();
            let z = at(ControlInput::zero());
            let a = at(ControlInput::new(t1, d1));
            let b = at(ControlInput::new(t2, d2));
            let ab = at(ControlInput::new(t1 + t2, d1 + d2));
            for i in 0..3 {
                let lhs = ab[i] - z[i];
                let rhs = (a[i] - z[i]) + (b[i] - z[i]);
                prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
            }
        }

        #[test]
        fn pose_rotation_preserves_speed(vx in 0.5f64..40.0, vy in -5.0f64..5.0, psi in -10.0f64..10.0) {
            let s = VehicleState { vx, vy, psi, ..Default::default() };
            let p = pose_rhs(&s);
            let lhs = p[1].hypot(p[2]);
            prop_assert!((lhs - vx.hypot(vy)).abs() < 1e-12 * (1.0 + lhs));
        }
    }
}
