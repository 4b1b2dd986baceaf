//! Model-free control: ultra-local models `y^(nu) = F + alpha u` closed by
//! intelligent controllers.
//!
//! All laws use the tracking error `e = y - y_d` and cancel the current
//! estimate of `F`, so with an exact `F` the closed-loop error obeys a linear
//! ODE fixed by the gains alone:
//!
//! | law   | nu | error dynamics                         |
//! |-------|----|----------------------------------------|
//! | iP    | 1  | `e' + Kp e = 0`                         |
//! | iPI   | 1  | `e' + Kp e + Ki int e = 0`              |
//! | iPD   | 2  | `e'' + Kd e' + Kp e = 0`                |
//! | iPID  | 2  | `e'' + Kd e' + Kp e + Ki int e = 0`     |

use thiserror::Error;

use crate::estimation::{
    differentiate, EstimationError, EstimatorConfig, Order, SlidingWindow, UltraLocalEstimator,
};
use crate::plant::{clamp_sym, ActuatorLimits, ControlInput};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("gains do not give Hurwitz error dynamics: {0}")]
    UnstableGains(String),
    #[error("ultra-local model input gain alpha must be nonzero and finite")]
    ZeroAlpha,
    #[error(transparent)]
    Estimation(#[from] EstimationError),
}

/// `u = -(F - yd' + Kp e) / alpha`
pub fn ip_control<T: Scalar>(f: T, yd_dot: T, e: T, kp: T, alpha: T) -> T {
    -(f - yd_dot + kp * e) / alpha
}

/// `u = -(F - yd' + Kp e + Ki int e) / alpha`
pub fn ipi_control<T: Scalar>(f: T, yd_dot: T, e: T, e_int: T, kp: T, ki: T, alpha: T) -> T {
    -(f - yd_dot + kp * e + ki * e_int) / alpha
}

/// `u = -(F - yd'' + Kp e + Kd e') / alpha`
pub fn ipd_control<T: Scalar>(f: T, yd_ddot: T, e: T, e_dot: T, kp: T, kd: T, alpha: T) -> T {
    -(f - yd_ddot + kp * e + kd * e_dot) / alpha
}

/// `u = -(F - yd'' + Kp e + Ki int e + Kd e') / alpha`
pub fn ipid_control<T: Scalar>(
    f: T,
    yd_ddot: T,
    e: T,
    e_dot: T,
    e_int: T,
    gains: &IntelligentGains<T>,
    alpha: T,
) -> T {
    -(f - yd_ddot + gains.kp * e + gains.ki * e_int + gains.kd * e_dot) / alpha
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IntelligentGains<T> {
    pub kp: T,
    pub ki: T,
    pub kd: T,
}

impl<T: Scalar> IntelligentGains<T> {
    pub fn new(kp: T, ki: T, kd: T) -> Self {
        Self { kp, ki, kd }
    }

    /// Checks that the error polynomial of the law selected by `order` and the
    /// nonzero gains is Hurwitz.
    pub fn validate(&self, order: Order) -> Result<(), ControlError> {
        let zero = T::zero();
        let (kp, ki, kd) = (self.kp, self.ki, self.kd);
        let ok = match order {
            Order::First => kd == zero && kp > zero && ki >= zero,
            Order::Second if ki == zero => kp > zero && kd > zero,
            Order::Second => kp > zero && kd > zero && ki > zero && kd * kp > ki,
        };
        if ok {
            Ok(())
        } else {
            Err(ControlError::UnstableGains(format!(
                "nu = {}, Kp = {kp}, Ki = {ki}, Kd = {kd}",
                order.nu()
            )))
        }
    }
}

/// `y^(nu) = F + alpha u` with the latest estimate of `F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UltraLocalModel<T> {
    pub order: Order,
    pub alpha: T,
    pub f_est: Option<T>,
}

/// Desired output with the derivatives the law needs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrackingReference<T> {
    pub yd: T,
    pub yd_dot: T,
    pub yd_ddot: T,
}

impl<T: Scalar> TrackingReference<T> {
    pub fn new(yd: T, yd_dot: T, yd_ddot: T) -> Self {
        Self { yd, yd_dot, yd_ddot }
    }
}

/// Configuration of one SISO intelligent loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopConfig<T> {
    pub estimator: EstimatorConfig<T>,
    pub gains: IntelligentGains<T>,
    /// Window of the differentiator producing `e'` (second-order loops only).
    pub derivative_span: f64,
    /// Input held while the estimator windows fill.
    pub initial_u: T,
    /// Symmetric bound on `|u|`.
    pub u_max: Option<T>,
}

/// Per-step result of an intelligent loop.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LoopOutput<T> {
    pub u: T,
    pub u_raw: T,
    pub f_est: Option<T>,
    pub e: T,
    pub saturated: bool,
}

/// Streaming SISO intelligent controller: F estimation, optional
/// differentiation of the output, integral action with conditional
/// integration while saturated.
#[derive(Debug, Clone)]
pub struct IntelligentController<T> {
    config: LoopConfig<T>,
    model: UltraLocalModel<T>,
    estimator: UltraLocalEstimator<T>,
    output: Option<SlidingWindow<T>>,
    period: f64,
    integral: T,
    held_u: T,
}

impl<T: Scalar> IntelligentController<T> {
    pub fn new(config: LoopConfig<T>, period: f64) -> Result<Self, ControlError> {
        let alpha = config.estimator.alpha;
        if !(alpha != T::zero() && alpha.is_finite()) {
            return Err(ControlError::ZeroAlpha);
        }
        let order = config.estimator.order;
        config.gains.validate(order)?;
        let output = match order {
            Order::First => None,
            Order::Second => Some(SlidingWindow::new(period, config.derivative_span)?),
        };
        Ok(Self {
            config,
            model: UltraLocalModel {
                order,
                alpha,
                f_est: None,
            },
            estimator: UltraLocalEstimator::new(config.estimator, period)?,
            output,
            period,
            integral: T::zero(),
            held_u: config.initial_u,
        })
    }

    pub fn model(&self) -> &UltraLocalModel<T> {
        &self.model
    }

    pub fn integral(&self) -> T {
        self.integral
    }

    /// Whether every window has filled.
    pub fn is_warm(&self) -> bool {
        self.estimator.is_warm() && self.output.as_ref().is_none_or(|w| w.is_warm())
    }

    /// Processes the measurement `y` taken at `t` (uniform sampling) and
    /// returns the input to hold until the next sample.
    pub fn step(
        &mut self,
        t: f64,
        y: T,
        reference: &TrackingReference<T>,
    ) -> Result<LoopOutput<T>, ControlError> {
        self.estimator.push(t, y, self.held_u)?;
        if let Some(w) = self.output.as_mut() {
            w.push(t, y)?;
        }
        let e = y - reference.yd;
        if !self.is_warm() {
            return Ok(LoopOutput {
                u: self.held_u,
                u_raw: self.held_u,
                f_est: None,
                e,
                saturated: false,
            });
        }

        let f = self.estimator.estimate()?;
        self.model.f_est = Some(f);
        let g = self.config.gains;
        let alpha = self.model.alpha;
        let u_raw = match self.model.order {
            Order::First => ipi_control(f, reference.yd_dot, e, self.integral, g.kp, g.ki, alpha),
            Order::Second => {
                let window = self.output.as_ref().expect("second-order loop owns a window");
                let e_dot = differentiate(window)? - reference.yd_dot;
                ipid_control(f, reference.yd_ddot, e, e_dot, self.integral, &g, alpha)
            }
        };
        let (u, saturated) = match self.config.u_max {
            Some(bound) => clamp_sym(u_raw, bound),
            None => (u_raw, false),
        };
        // integrating e moves u by -Ki e dt / alpha; skip when that deepens saturation
        let pushes_further = (-(g.ki * e) / alpha) * (u_raw - u) > T::zero();
        if g.ki != T::zero() && !(saturated && pushes_further) {
            self.integral = self.integral + e * T::lit(self.period);
        }
        self.held_u = u;
        Ok(LoopOutput {
            u,
            u_raw,
            f_est: Some(f),
            e,
            saturated,
        })
    }
}

/// Output of the composed two-channel controllers.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MfcOutput<T> {
    pub input: ControlInput<T>,
    pub longitudinal: LoopOutput<T>,
    pub lateral: LoopOutput<T>,
}

impl<T: Scalar> MfcOutput<T> {
    pub fn saturated(&self) -> [bool; 2] {
        [self.longitudinal.saturated, self.lateral.saturated]
    }
}

/// The only model knowledge the flat-output controller uses: what it takes to
/// form `y2 = Lf m Vy - Iz psi_dot`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatOutputMap<T> {
    pub m: T,
    pub iz: T,
    pub lf: T,
}

impl<T: Scalar> FlatOutputMap<T> {
    pub fn y2(&self, vy: T, psi_dot: T) -> T {
        self.lf * self.m * vy - self.iz * psi_dot
    }
}

/// Two first-order iPI loops on the flat outputs `y1 = Vx` and `y2`.
#[derive(Debug, Clone)]
pub struct MfcFlatController<T> {
    map: FlatOutputMap<T>,
    longitudinal: IntelligentController<T>,
    lateral: IntelligentController<T>,
}

impl<T: Scalar> MfcFlatController<T> {
    pub fn new(
        map: FlatOutputMap<T>,
        longitudinal: LoopConfig<T>,
        lateral: LoopConfig<T>,
        period: f64,
    ) -> Result<Self, ControlError> {
        for cfg in [&longitudinal, &lateral] {
            if cfg.estimator.order != Order::First {
                return Err(ControlError::UnstableGains(
                    "flat-output loops are first order".into(),
                ));
            }
        }
        Ok(Self {
            map,
            longitudinal: IntelligentController::new(longitudinal, period)?,
            lateral: IntelligentController::new(lateral, period)?,
        })
    }

    pub fn from_limits(
        map: FlatOutputMap<T>,
        mut longitudinal: LoopConfig<T>,
        mut lateral: LoopConfig<T>,
        limits: &ActuatorLimits<T>,
        period: f64,
    ) -> Result<Self, ControlError> {
        longitudinal.u_max = Some(limits.torque_max);
        lateral.u_max = Some(limits.steer_max);
        Self::new(map, longitudinal, lateral, period)
    }

    pub fn is_warm(&self) -> bool {
        self.longitudinal.is_warm() && self.lateral.is_warm()
    }

    /// `refs` = (speed reference, y2 reference); only `yd` and `yd_dot` are used.
    pub fn control(
        &mut self,
        t: f64,
        vx: T,
        vy: T,
        psi_dot: T,
        speed_ref: &TrackingReference<T>,
        y2_ref: &TrackingReference<T>,
    ) -> Result<MfcOutput<T>, ControlError> {
        let lon = self.longitudinal.step(t, vx, speed_ref)?;
        let lat = self.lateral.step(t, self.map.y2(vy, psi_dot), y2_ref)?;
        Ok(MfcOutput {
            input: ControlInput::new(lon.u, lat.u),
            longitudinal: lon,
            lateral: lat,
        })
    }
}

/// iP on the measured speed and iPD on the measured lateral deviation. Needs
/// no vehicle parameter at all.
#[derive(Debug, Clone)]
pub struct MfcNaturalController<T> {
    longitudinal: IntelligentController<T>,
    lateral: IntelligentController<T>,
}

impl<T: Scalar> MfcNaturalController<T> {
    pub fn new(
        longitudinal: LoopConfig<T>,
        lateral: LoopConfig<T>,
        period: f64,
    ) -> Result<Self, ControlError> {
        if longitudinal.estimator.order != Order::First || longitudinal.gains.ki != T::zero() {
            return Err(ControlError::UnstableGains(
                "longitudinal loop must be an iP (nu = 1, Ki = 0)".into(),
            ));
        }
        if lateral.estimator.order != Order::Second || lateral.gains.ki != T::zero() {
            return Err(ControlError::UnstableGains(
                "lateral loop must be an iPD (nu = 2, Ki = 0)".into(),
            ));
        }
        Ok(Self {
            longitudinal: IntelligentController::new(longitudinal, period)?,
            lateral: IntelligentController::new(lateral, period)?,
        })
    }

    pub fn from_limits(
        mut longitudinal: LoopConfig<T>,
        mut lateral: LoopConfig<T>,
        limits: &ActuatorLimits<T>,
        period: f64,
    ) -> Result<Self, ControlError> {
        longitudinal.u_max = Some(limits.torque_max);
        lateral.u_max = Some(limits.steer_max);
        Self::new(longitudinal, lateral, period)
    }

    pub fn is_warm(&self) -> bool {
        self.longitudinal.is_warm() && self.lateral.is_warm()
    }

    pub fn control(
        &mut self,
        t: f64,
        vx: T,
        lateral_deviation: T,
        speed_ref: &TrackingReference<T>,
        deviation_ref: &TrackingReference<T>,
    ) -> Result<MfcOutput<T>, ControlError> {
        let lon = self.longitudinal.step(t, vx, speed_ref)?;
        let lat = self.lateral.step(t, lateral_deviation, deviation_ref)?;
        Ok(MfcOutput {
            input: ControlInput::new(lon.u, lat.u),
            longitudinal: lon,
            lateral: lat,
        })
    }
}
