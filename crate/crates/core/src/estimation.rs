//! Algebraic sliding-window estimators.
//!
//! Each estimator is a short FIR filter: a polynomial kernel integrated
//! against the last `T` seconds of uniformly sampled data with composite
//! Simpson weights. With `s = t - tau` the time before the newest sample and
//! `sigma = tau - (t - T)` the time after the oldest one:
//!
//! | estimator          | kernel                                                       |
//! |--------------------|--------------------------------------------------------------|
//! | denoise            | `(2 / T^2) (3 s - T)`                                         |
//! | differentiate      | `-(6 / T^3) (2 s - T)`                                        |
//! | F, order 1         | `-(6 / T^3) [(T - 2 sigma) y + alpha sigma (T - sigma) u]`    |
//! | F, order 2         | `(60 / T^5) (T^2 - 6 T sigma + 6 sigma^2) y - (30 alpha / T^5) sigma^2 (T - sigma)^2 u` |
//!
//! The order-2 kernels are quartic, one degree beyond what Simpson weights
//! integrate exactly, so that estimator divides by the discrete moments of
//! its kernels instead of `T^5/60` and `T^5/30`. A constant `u` and a
//! `y = t^2/2` then map exactly to themselves on the sampling grid, which
//! keeps a change of `F` from leaking into the estimate error.
//!
//! Properties (exact for the polynomial cases below; `O(period^4)`
//! quadrature error otherwise):
//! - `denoise` reproduces affine signals *delayed by `T`*: for `y = a t + b`
//!   it returns `y(t - T)`.
//! - `differentiate` is exact on affine signals; on `y = t^2` it returns
//!   `2 t - T`, i.e. the derivative at the window midpoint.
//! - the order-1 F estimator annihilates constant `y`; the order-2 one
//!   annihilates affine `y`. Both recover a constant `F` exactly from
//!   `y^(nu) = F + alpha u`.
//!
//! The derivative kernel `2(t - tau) - T` is the first-degree kernel that
//! is exact on affine signals under the `-3!/T^3` normalization. The order-2
//! F estimator recovers `F` only with a positive weight on its `y` term.
//!
//! Trapezoid weights are not good enough for the order-2 estimator: the
//! endpoint error term scales like `60 h^2 / T^4` times the signal level,
//! which is about 10x the signal for `h = 1 ms`, `T = 50 ms`.

use std::collections::VecDeque;

use thiserror::Error;

use crate::Scalar;

/// Allowed deviation of a sample spacing from the nominal period (s).
pub const SAMPLING_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimationError {
    #[error("window not warm: {have} of {need} samples")]
    InsufficientData { have: usize, need: usize },
    #[error("non-uniform sampling: expected spacing {expected} s, got {got} s")]
    NonUniformSampling { expected: f64, got: f64 },
    #[error("windows are misaligned by {skew} s")]
    Misaligned { skew: f64 },
    #[error("invalid estimator configuration: {0}")]
    InvalidConfig(String),
}

/// Fixed-duration ring buffer of uniformly sampled values.
#[derive(Debug, Clone)]
pub struct SlidingWindow<T> {
    period: f64,
    intervals: usize,
    times: VecDeque<f64>,
    values: VecDeque<T>,
}

impl<T: Scalar> SlidingWindow<T> {
    /// Window of `round(span / period)` intervals.
    pub fn new(period: f64, span: f64) -> Result<Self, EstimationError> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(EstimationError::InvalidConfig(format!(
                "period {period} must be positive"
            )));
        }
        if !(span >= 10.0 * period - SAMPLING_TOL && span.is_finite()) {
            return Err(EstimationError::InvalidConfig(format!(
                "span {span} s must cover at least 10 periods of {period} s"
            )));
        }
        let intervals = (span / period).round() as usize;
        Ok(Self {
            period,
            intervals,
            times: VecDeque::with_capacity(intervals + 1),
            values: VecDeque::with_capacity(intervals + 1),
        })
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Effective window length `intervals * period`.
    pub fn span(&self) -> f64 {
        self.intervals as f64 * self.period
    }

    /// Number of samples held once warm.
    pub fn capacity(&self) -> usize {
        self.intervals + 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_warm(&self) -> bool {
        self.values.len() == self.capacity()
    }

    pub fn latest_time(&self) -> Option<f64> {
        self.times.back().copied()
    }

    pub fn push(&mut self, t: f64, value: T) -> Result<(), EstimationError> {
        if let Some(&last) = self.times.back() {
            let got = t - last;
            if (got - self.period).abs() >= SAMPLING_TOL {
                return Err(EstimationError::NonUniformSampling {
                    expected: self.period,
                    got,
                });
            }
        }
        if self.is_warm() {
            self.times.pop_front();
            self.values.pop_front();
        }
        self.times.push_back(t);
        self.values.push_back(value);
        Ok(())
    }

    pub fn clear(&mut self) {
        self.times.clear();
        self.values.clear();
    }

    /// Samples oldest first.
    pub fn values(&self) -> impl ExactSizeIterator<Item = T> + '_ {
        self.values.iter().copied()
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, T)> + '_ {
        self.times.iter().copied().zip(self.values.iter().copied())
    }

    fn require_warm(&self) -> Result<(), EstimationError> {
        if self.is_warm() {
            Ok(())
        } else {
            Err(EstimationError::InsufficientData {
                have: self.len(),
                need: self.capacity(),
            })
        }
    }

    /// Quadrature weight of sample `i` (composite Simpson; the last three
    /// intervals use the 3/8 rule when the interval count is odd).
    fn weight(&self, i: usize) -> f64 {
        let n = self.intervals;
        let h = self.period;
        let simpson_end = if n.is_multiple_of(2) { n } else { n - 3 };
        let mut w = 0.0;
        if i <= simpson_end && simpson_end > 0 {
            w += if i == 0 || i == simpson_end {
                h / 3.0
            } else if i % 2 == 1 {
                4.0 * h / 3.0
            } else {
                2.0 * h / 3.0
            };
        }
        if simpson_end < n && i >= simpson_end {
            w += match i - simpson_end {
                0 | 3 => 3.0 * h / 8.0,
                _ => 9.0 * h / 8.0,
            };
        }
        w
    }

    /// Quadrature of `kernel(sigma)` alone over the window.
    fn moment(&self, kernel: impl Fn(T) -> T) -> T {
        (0..=self.intervals).fold(T::zero(), |acc, i| {
            acc + T::lit(self.weight(i)) * kernel(T::lit(i as f64 * self.period))
        })
    }

    /// Integral of `kernel(sigma) * value` over the window, with `sigma`
    /// measured from the oldest sample.
    fn integrate(&self, kernel: impl Fn(T) -> T) -> T {
        self.values
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (i, &v)| {
                let sigma = T::lit(i as f64 * self.period);
                acc + T::lit(self.weight(i)) * kernel(sigma) * v
            })
    }
}

/// Denoised value; corresponds to the signal at the *oldest* sample time
/// `t - T` (see module docs).
pub fn denoise<T: Scalar>(window: &SlidingWindow<T>) -> Result<T, EstimationError> {
    window.require_warm()?;
    let span = T::lit(window.span());
    let three = T::lit(3.0);
    let sum = window.integrate(|sigma| {
        let s = span - sigma;
        three * s - span
    });
    Ok(T::lit(2.0) / (span * span) * sum)
}

/// First-derivative estimate, exact on affine signals.
pub fn differentiate<T: Scalar>(window: &SlidingWindow<T>) -> Result<T, EstimationError> {
    window.require_warm()?;
    let span = T::lit(window.span());
    let two = T::lit(2.0);
    let sum = window.integrate(|sigma| {
        let s = span - sigma;
        two * s - span
    });
    Ok(-T::lit(6.0) / (span * span * span) * sum)
}

fn check_pair<T: Scalar>(
    y: &SlidingWindow<T>,
    u: &SlidingWindow<T>,
) -> Result<(), EstimationError> {
    y.require_warm()?;
    u.require_warm()?;
    if y.intervals != u.intervals || (y.period - u.period).abs() >= SAMPLING_TOL {
        return Err(EstimationError::InvalidConfig(
            "y and u windows must share period and span".into(),
        ));
    }
    let skew = (y.latest_time().unwrap_or(0.0) - u.latest_time().unwrap_or(0.0)).abs();
    if skew > 0.5 * y.period {
        return Err(EstimationError::Misaligned { skew });
    }
    Ok(())
}

/// Estimate of `F` in `y' = F + alpha u`.
pub fn estimate_f_order1<T: Scalar>(
    y: &SlidingWindow<T>,
    u: &SlidingWindow<T>,
    alpha: T,
) -> Result<T, EstimationError> {
    check_pair(y, u)?;
    let tau = T::lit(y.span());
    let two = T::lit(2.0);
    let sy = y.integrate(|sigma| tau - two * sigma);
    let su = u.integrate(|sigma| sigma * (tau - sigma));
    Ok(-T::lit(6.0) / (tau * tau * tau) * (sy + alpha * su))
}

/// Estimate of `F` in `y'' = F + alpha u`.
pub fn estimate_f_order2<T: Scalar>(
    y: &SlidingWindow<T>,
    u: &SlidingWindow<T>,
    alpha: T,
) -> Result<T, EstimationError> {
    check_pair(y, u)?;
    let tau = T::lit(y.span());
    let six = T::lit(6.0);
    let half = T::lit(0.5);
    let ky = |sigma: T| tau * tau - six * tau * sigma + six * sigma * sigma;
    let ku = |sigma: T| {
        let rest = tau - sigma;
        rest * rest * sigma * sigma
    };
    // discrete counterparts of T^5/60 and T^5/30
    let my = y.moment(|sigma| ky(sigma) * half * sigma * sigma);
    let mu = u.moment(ku);
    Ok(y.integrate(ky) / my - alpha * u.integrate(ku) / mu)
}

/// Order of the ultra-local model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    First,
    Second,
}

impl Order {
    pub fn from_nu(nu: u32) -> Result<Self, EstimationError> {
        match nu {
            1 => Ok(Order::First),
            2 => Ok(Order::Second),
            _ => Err(EstimationError::InvalidConfig(format!(
                "derivation order {nu} not in {{1, 2}}"
            ))),
        }
    }

    pub fn nu(self) -> u32 {
        match self {
            Order::First => 1,
            Order::Second => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig<T> {
    /// Window length (s).
    pub span: f64,
    pub alpha: T,
    pub order: Order,
}

impl<T: Scalar> EstimatorConfig<T> {
    pub fn validate(&self, period: f64) -> Result<(), EstimationError> {
        if !(self.alpha != T::zero() && self.alpha.is_finite()) {
            return Err(EstimationError::InvalidConfig("alpha must be nonzero".into()));
        }
        if !(self.span >= 10.0 * period - SAMPLING_TOL) {
            return Err(EstimationError::InvalidConfig(format!(
                "span {} s must cover at least 10 periods of {period} s",
                self.span
            )));
        }
        Ok(())
    }
}

/// Streaming estimator of the ultra-local drift `F`.
///
/// At sample time `t_k` the caller pushes the measured output and the input
/// that was held over `(t_{k-1}, t_k]`, so both windows stay time-aligned.
#[derive(Debug, Clone)]
pub struct UltraLocalEstimator<T> {
    config: EstimatorConfig<T>,
    y: SlidingWindow<T>,
    u: SlidingWindow<T>,
}

impl<T: Scalar> UltraLocalEstimator<T> {
    pub fn new(config: EstimatorConfig<T>, period: f64) -> Result<Self, EstimationError> {
        config.validate(period)?;
        Ok(Self {
            config,
            y: SlidingWindow::new(period, config.span)?,
            u: SlidingWindow::new(period, config.span)?,
        })
    }

    pub fn config(&self) -> &EstimatorConfig<T> {
        &self.config
    }

    pub fn push(&mut self, t: f64, y: T, u_held: T) -> Result<(), EstimationError> {
        self.y.push(t, y)?;
        self.u.push(t, u_held)
    }

    pub fn is_warm(&self) -> bool {
        self.y.is_warm() && self.u.is_warm()
    }

    pub fn estimate(&self) -> Result<T, EstimationError> {
        match self.config.order {
            Order::First => estimate_f_order1(&self.y, &self.u, self.config.alpha),
            Order::Second => estimate_f_order2(&self.y, &self.u, self.config.alpha),
        }
    }

    pub fn output_window(&self) -> &SlidingWindow<T> {
        &self.y
    }
}
