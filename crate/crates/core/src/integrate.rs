//! Classical fixed-step Runge-Kutta integration over fixed-size state arrays.

use crate::Scalar;

/// One classical RK4 step of `x' = rhs(x)` (autonomous; time enters through
/// captured inputs held constant over the step).
pub fn rk4_step<T, E, F, const N: usize>(x: &[T; N], dt: T, mut rhs: F) -> Result<[T; N], E>
where
    T: Scalar,
    F: FnMut(&[T; N]) -> Result<[T; N], E>,
{
    let half = T::lit(0.5);
    let sixth = T::lit(1.0 / 6.0);
    let two = T::lit(2.0);

    let k1 = rhs(x)?;
    let k2 = rhs(&axpy(x, half * dt, &k1))?;
    let k3 = rhs(&axpy(x, half * dt, &k2))?;
    let k4 = rhs(&axpy(x, dt, &k3))?;

    let mut out = *x;
    for i in 0..N {
        out[i] = x[i] + dt * sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
    }
    Ok(out)
}

#[inline]
fn axpy<T: Scalar, const N: usize>(x: &[T; N], a: T, k: &[T; N]) -> [T; N] {
    let mut out = *x;
    for i in 0..N {
        out[i] = x[i] + a * k[i];
    }
    out
}
