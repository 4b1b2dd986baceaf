//! Flat outputs of the two-wheel model and the flatness-based tracking law.
//!
//! With `y1 = Vx` and `y2 = Lf m Vy - Iz psi_dot` the steering input cancels
//! from `y2'`:
//!
//! ```text
//! y2' = h(x) = -Lf m Vx psi_dot - Cr (Lf + Lr) (Vy - Lr psi_dot) / Vx
//! ```
//!
//! so `(y1', y2'')` is the first level where both inputs appear:
//!
//! ```text
//! [y1'; y2''] = Delta(x) u + Phi(x)
//! Delta = [[g11, g12], [dh/dVx g11, grad(h) . g_col2]]
//! Phi   = [f1; grad(h) . f]
//! ```
//!
//! `x` itself is recovered from `(y1, y2, y2')` by [`state_from_flat`], and
//! `det Delta` reduces to a closed form that depends on `y1` and the front
//! wheel acceleration only.

use thiserror::Error;

use crate::plant::{affine_terms, ControlInput, PlantError, VehicleParams, VehicleState, WheelAccels, VX_MIN};
use crate::Scalar;

/// Relative threshold below which a factor of `det Delta` counts as zero.
pub const SINGULARITY_TOL: f64 = 1e-9;

/// Which nonsingularity condition of `det Delta` failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SingularCondition {
    /// `Ir * omega_f_dot - Cf * R` vanished (wheel acceleration too large).
    WheelAcceleration,
    /// `Lf^2 m^2 y1^2 - Cr L Lr Lf m + Cr Iz L` vanished.
    SpeedInertia,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlatnessError {
    #[error("decoupling matrix is singular: {condition:?} factor = {factor}")]
    NearSingular {
        condition: SingularCondition,
        factor: f64,
    },
    #[error("flat-output inverse map is degenerate (denominator {0})")]
    DegenerateParams(f64),
    #[error("flat output y1 = {0} m/s is below the speed guard")]
    SpeedTooLow(f64),
    #[error("flatness gains are not Hurwitz: {0}")]
    UnstableGains(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlatOutputs<T> {
    pub y1: T,
    pub y2: T,
    pub y2_dot: T,
}

/// `(y1, y2)` at the given state.
pub fn flat_outputs<T: Scalar>(state: &VehicleState<T>, params: &VehicleParams<T>) -> (T, T) {
    (state.vx, params.lf * params.m * state.vy - params.iz * state.psi_dot)
}

/// Model value of `y2'`; independent of the inputs.
pub fn y2_rate<T: Scalar>(vx: T, vy: T, psi_dot: T, params: &VehicleParams<T>) -> T {
    let p = params;
    -p.lf * p.m * vx * psi_dot - p.cr * p.wheelbase() * (vy - p.lr * psi_dot) / vx
}

/// Inverse map `x = A(y1, y2, y2')`, returning `(Vx, Vy, psi_dot)`.
pub fn state_from_flat<T: Scalar>(
    y1: T,
    y2: T,
    y2_dot: T,
    params: &VehicleParams<T>,
) -> Result<(T, T, T), FlatnessError> {
    let p = params;
    let lfm = p.lf * p.m;
    let crl = p.cr * p.wheelbase();
    let den = crl * (p.iz - p.lr * lfm) + (lfm * y1) * (lfm * y1);
    let scale = crl * p.iz + (lfm * y1) * (lfm * y1);
    if !(den.abs() > T::lit(SINGULARITY_TOL) * scale) {
        return Err(FlatnessError::DegenerateParams(den.as_f64()));
    }
    let psi_dot = -(lfm * y1 * y2_dot + crl * y2) / den;
    let vy = y2 / lfm + p.iz / lfm * psi_dot;
    Ok((y1, vy, psi_dot))
}

/// Decoupling matrix with its determinant computed from the entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaMatrix<T> {
    pub entries: [[T; 2]; 2],
    pub det: T,
}

impl<T: Scalar> DeltaMatrix<T> {
    /// Solves `Delta u = rhs`.
    pub fn solve(&self, rhs: [T; 2]) -> [T; 2] {
        let [[a, b], [c, d]] = self.entries;
        [
            (d * rhs[0] - b * rhs[1]) / self.det,
            (a * rhs[1] - c * rhs[0]) / self.det,
        ]
    }

    pub fn apply(&self, u: [T; 2]) -> [T; 2] {
        let [[a, b], [c, d]] = self.entries;
        [a * u[0] + b * u[1], c * u[0] + d * u[1]]
    }
}

/// The two factors of `det Delta`, checked against [`SINGULARITY_TOL`].
fn check_conditions<T: Scalar>(y1: T, params: &VehicleParams<T>, omega_f_dot: T) -> Result<(T, T), FlatnessError> {
    let p = params;
    let l = p.wheelbase();
    let wheel = p.ir * omega_f_dot - p.cf * p.r;
    if !(wheel.abs() > T::lit(SINGULARITY_TOL) * p.cf * p.r) {
        return Err(FlatnessError::NearSingular {
            condition: SingularCondition::WheelAcceleration,
            factor: wheel.as_f64(),
        });
    }
    let lfm_y1 = p.lf * p.m * y1;
    let speed = lfm_y1 * lfm_y1 - p.cr * l * p.lr * p.lf * p.m + p.cr * p.iz * l;
    let scale = lfm_y1 * lfm_y1 + p.cr * p.iz * l;
    if !(speed.abs() > T::lit(SINGULARITY_TOL) * scale) {
        return Err(FlatnessError::NearSingular {
            condition: SingularCondition::SpeedInertia,
            factor: speed.as_f64(),
        });
    }
    Ok((wheel, speed))
}

/// Closed-form `det Delta`, a function of `y1` and `omega_f_dot` only.
pub fn det_delta_closed_form<T: Scalar>(
    y1: T,
    params: &VehicleParams<T>,
    omega_f_dot: T,
) -> Result<T, FlatnessError> {
    let p = params;
    let (wheel, speed) = check_conditions(y1, params, omega_f_dot)?;
    Ok(wheel * speed / (p.iz * p.r * p.r * y1 * p.m * p.m))
}

fn guard_y1<T: Scalar>(y1: T) -> Result<(), FlatnessError> {
    if y1 >= T::lit(VX_MIN) {
        Ok(())
    } else {
        Err(FlatnessError::SpeedTooLow(y1.as_f64()))
    }
}

/// Gradient of `h` with respect to `(Vx, Vy, psi_dot)`.
fn grad_h<T: Scalar>(vx: T, vy: T, r: T, p: &VehicleParams<T>) -> [T; 3] {
    let crl = p.cr * p.wheelbase();
    [
        -p.lf * p.m * r + crl * (vy - p.lr * r) / (vx * vx),
        -crl / vx,
        -p.lf * p.m * vx + crl * p.lr / vx,
    ]
}

/// `Delta` and `Phi` at the state recovered from the flat outputs.
pub fn decoupling<T: Scalar>(
    y1: T,
    y2: T,
    y2_dot: T,
    params: &VehicleParams<T>,
    wheel_accels: WheelAccels<T>,
) -> Result<(DeltaMatrix<T>, [T; 2]), FlatnessError> {
    guard_y1(y1)?;
    check_conditions(y1, params, wheel_accels.front)?;
    let (vx, vy, r) = state_from_flat(y1, y2, y2_dot, params)?;
    let state = VehicleState {
        vx,
        vy,
        psi_dot: r,
        ..Default::default()
    };
    let (f, g) = affine_terms(&state, params, wheel_accels)?;
    let dh = grad_h(vx, vy, r, params);
    let dot = |col: [T; 3]| dh[0] * col[0] + dh[1] * col[1] + dh[2] * col[2];

    let entries = [
        [g[0][0], g[0][1]],
        [dot([g[0][0], g[1][0], g[2][0]]), dot([g[0][1], g[1][1], g[2][1]])],
    ];
    let det = entries[0][0] * entries[1][1] - entries[1][0] * entries[0][1];
    let phi = [f[0], dot(f)];
    Ok((DeltaMatrix { entries, det }, phi))
}

/// Decoupling matrix `Delta(y1, y2, y2')`.
pub fn delta_matrix<T: Scalar>(
    y1: T,
    y2: T,
    y2_dot: T,
    params: &VehicleParams<T>,
    omega_f_dot: T,
) -> Result<DeltaMatrix<T>, FlatnessError> {
    // Delta does not involve the rear wheel
    decoupling(y1, y2, y2_dot, params, WheelAccels::new(omega_f_dot, T::zero())).map(|(d, _)| d)
}

/// Drift `Phi(y1, y2, y2')`, i.e. `[y1'; y2'']` at zero input.
pub fn phi_term<T: Scalar>(
    y1: T,
    y2: T,
    y2_dot: T,
    params: &VehicleParams<T>,
    wheel_accels: WheelAccels<T>,
) -> Result<[T; 2], FlatnessError> {
    decoupling(y1, y2, y2_dot, params, wheel_accels).map(|(_, phi)| phi)
}

/// Gains of the tracking feedback: PI on `e_y1`, PID-with-integral on `e_y2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatnessGains<T> {
    pub k1_1: T,
    pub k1_2: T,
    pub k2_1: T,
    pub k2_2: T,
    pub k2_3: T,
}

impl<T: Scalar> FlatnessGains<T> {
    /// Places the longitudinal poles at `-a` (double) and the lateral poles at
    /// `-b` (triple).
    pub fn from_poles(a: T, b: T) -> Self {
        let two = T::lit(2.0);
        let three = T::lit(3.0);
        Self {
            k1_1: two * a,
            k1_2: a * a,
            k2_1: three * b,
            k2_2: three * b * b,
            k2_3: b * b * b,
        }
    }

    pub fn validate(&self) -> Result<(), FlatnessError> {
        if !(self.k1_1 > T::zero() && self.k1_2 > T::zero()) {
            return Err(FlatnessError::UnstableGains(
                "s^2 + K1_1 s + K1_2 needs K1_1, K1_2 > 0".into(),
            ));
        }
        let (a2, a1, a0) = (self.k2_1, self.k2_2, self.k2_3);
        if !(a2 > T::zero() && a1 > T::zero() && a0 > T::zero() && a2 * a1 > a0) {
            return Err(FlatnessError::UnstableGains(
                "s^3 + K2_1 s^2 + K2_2 s + K2_3 fails Routh-Hurwitz".into(),
            ));
        }
        Ok(())
    }
}

impl<T: Scalar> Default for FlatnessGains<T> {
    fn default() -> Self {
        Self::from_poles(T::lit(2.0), T::lit(3.0))
    }
}

/// Desired flat outputs and the derivatives the tracking law needs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlatReference<T> {
    pub y1: T,
    pub y1_dot: T,
    pub y2: T,
    pub y2_dot: T,
    pub y2_ddot: T,
}

/// Integrator state of the tracking law (`int e_y1`, `int e_y2`).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlatIntegrators<T> {
    pub e_y1: T,
    pub e_y2: T,
}

/// Controller diagnostics for telemetry.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlatControlReport<T> {
    pub e_y1: T,
    pub e_y2: T,
    pub det_delta: T,
}

/// One evaluation of `u = Delta^-1 (v - Phi)` with `v` from the tracking
/// feedback. Errors are `e = ref - measured`. Integrators are advanced by
/// `dt` after the control is computed, unless `freeze_integrators` is set.
#[allow(clippy::too_many_arguments)]
pub fn flat_control<T: Scalar>(
    measured: &FlatOutputs<T>,
    refs: &FlatReference<T>,
    gains: &FlatnessGains<T>,
    integ: &mut FlatIntegrators<T>,
    params: &VehicleParams<T>,
    wheel_accels: WheelAccels<T>,
    dt: T,
    freeze_integrators: bool,
) -> Result<(ControlInput<T>, FlatControlReport<T>), FlatnessError> {
    let (delta, phi) = decoupling(measured.y1, measured.y2, measured.y2_dot, params, wheel_accels)?;
    let e1 = refs.y1 - measured.y1;
    let e2 = refs.y2 - measured.y2;
    let e2_dot = refs.y2_dot - measured.y2_dot;
    let v1 = refs.y1_dot + gains.k1_1 * e1 + gains.k1_2 * integ.e_y1;
    let v2 = refs.y2_ddot + gains.k2_1 * e2_dot + gains.k2_2 * e2 + gains.k2_3 * integ.e_y2;
    let u = delta.solve([v1 - phi[0], v2 - phi[1]]);
    if !freeze_integrators {
        integ.e_y1 = integ.e_y1 + e1 * dt;
        integ.e_y2 = integ.e_y2 + e2 * dt;
    }
    Ok((
        ControlInput::new(u[0], u[1]),
        FlatControlReport {
            e_y1: e1,
            e_y2: e2,
            det_delta: delta.det,
        },
    ))
}

/// Stateful wrapper around [`flat_control`] using the controller's model
/// parameters (which may differ from the plant's).
#[derive(Debug, Clone)]
pub struct FlatnessController<T> {
    params: VehicleParams<T>,
    gains: FlatnessGains<T>,
    integ: FlatIntegrators<T>,
}

impl<T: Scalar> FlatnessController<T> {
    pub fn new(params: VehicleParams<T>, gains: FlatnessGains<T>) -> Result<Self, FlatnessError> {
        params.validate()?;
        gains.validate()?;
        Ok(Self {
            params,
            gains,
            integ: FlatIntegrators::default(),
        })
    }

    pub fn integrators(&self) -> FlatIntegrators<T> {
        self.integ
    }

    pub fn params(&self) -> &VehicleParams<T> {
        &self.params
    }

    pub fn control(
        &mut self,
        measured: &FlatOutputs<T>,
        refs: &FlatReference<T>,
        wheel_accels: WheelAccels<T>,
        dt: T,
        freeze_integrators: bool,
    ) -> Result<(ControlInput<T>, FlatControlReport<T>), FlatnessError> {
        flat_control(
            measured,
            refs,
            &self.gains,
            &mut self.integ,
            &self.params,
            wheel_accels,
            dt,
            freeze_integrators,
        )
    }
}
