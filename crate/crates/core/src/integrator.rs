//! Fixed-step classical Runge-Kutta (RK4) integration.
//!
//! Everything here works on statically sized state vectors so the inner loop
//! of an episode never allocates. Time grids are uniform: grid point `k` sits
//! at `t_start + k * dt`, and the last step is shortened when the span is not
//! a whole number of steps.
//!
//! [`integrate`] accumulates the per-step increments with Kahan compensation.
//! At small `dt` the truncation error of RK4 drops to the level of plain
//! floating-point accumulation error, and the compensation keeps the latter
//! from masking the former.

use std::convert::Infallible;

use nalgebra::SVector;
use thiserror::Error;

pub type StateVector<const N: usize> = SVector<f64, N>;

/// Time derivative `dx/dt = f(t, x)` of an `N`-dimensional system.
///
/// Plain closures `Fn(f64, &StateVector<N>) -> StateVector<N>` implement this
/// with an [`Infallible`] error type. Fields that can fail (a controller hitting
/// a singularity, say) implement it directly.
pub trait VectorField<const N: usize> {
    type Error;

    fn derivative(&self, t: f64, x: &StateVector<N>) -> Result<StateVector<N>, Self::Error>;
}

impl<F, const N: usize> VectorField<N> for F
where
    F: Fn(f64, &StateVector<N>) -> StateVector<N>,
{
    type Error = Infallible;

    fn derivative(&self, t: f64, x: &StateVector<N>) -> Result<StateVector<N>, Infallible> {
        Ok(self(t, x))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrationError<E> {
    #[error("state became non-finite at t = {t} s")]
    NonFiniteState { t: f64 },
    #[error("vector field failed at t = {t} s: {source}")]
    Field { t: f64, source: E },
    #[error("invalid integration config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationConfig {
    pub dt: f64,
    pub t_start: f64,
    pub t_end: f64,
}

impl IntegrationConfig {
    pub fn new(dt: f64, t_start: f64, t_end: f64) -> Self {
        Self { dt, t_start, t_end }
    }

    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err("dt must be positive and finite");
        }
        if !(self.t_start.is_finite() && self.t_end.is_finite()) {
            return Err("time bounds must be finite");
        }
        if self.t_end <= self.t_start {
            return Err("t_end must be greater than t_start");
        }
        let steps = (self.t_end - self.t_start) / self.dt;
        if steps > (u32::MAX as f64) {
            return Err("too many integration steps");
        }
        Ok(())
    }

    /// Number of RK4 steps covering `[t_start, t_end]`.
    ///
    /// A span within 1e-9 (relative) of a whole number of steps counts as exact,
    /// so `1.0 / 1e-5` gives 100000 steps rather than 100001.
    pub fn steps(&self) -> usize {
        let ratio = (self.t_end - self.t_start) / self.dt;
        let nearest = ratio.round();
        if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            nearest.max(1.0) as usize
        } else {
            ratio.ceil() as usize
        }
    }

    /// Time stamp of grid point `k` (`0..=steps()`); the last one is `t_end` exactly.
    pub fn grid_time(&self, k: usize) -> f64 {
        if k >= self.steps() {
            self.t_end
        } else {
            self.t_start + k as f64 * self.dt
        }
    }
}

fn finite<const N: usize>(x: &StateVector<N>) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// One classical four-stage Runge-Kutta step of size `dt` from `(t, x)`.
pub fn rk4_step<F, const N: usize>(
    field: &F,
    t: f64,
    x: &StateVector<N>,
    dt: f64,
) -> Result<StateVector<N>, IntegrationError<F::Error>>
where
    F: VectorField<N> + ?Sized,
{
    let next = x + rk4_increment(field, t, x, dt)?;
    if finite(&next) {
        Ok(next)
    } else {
        Err(IntegrationError::NonFiniteState { t: t + dt })
    }
}

/// `x(t + dt) - x(t)` of one RK4 step.
fn rk4_increment<F, const N: usize>(
    field: &F,
    t: f64,
    x: &StateVector<N>,
    dt: f64,
) -> Result<StateVector<N>, IntegrationError<F::Error>>
where
    F: VectorField<N> + ?Sized,
{
    if !(dt.is_finite() && dt > 0.0) {
        return Err(IntegrationError::InvalidConfig("dt must be positive and finite"));
    }
    if !finite(x) {
        return Err(IntegrationError::NonFiniteState { t });
    }
    let half = 0.5 * dt;
    let eval = |tau: f64, state: &StateVector<N>| -> Result<StateVector<N>, IntegrationError<F::Error>> {
        let d = field
            .derivative(tau, state)
            .map_err(|source| IntegrationError::Field { t: tau, source })?;
        if finite(&d) {
            Ok(d)
        } else {
            Err(IntegrationError::NonFiniteState { t: tau })
        }
    };

    let k1 = eval(t, x)?;
    let k2 = eval(t + half, &(x + k1 * half))?;
    let k3 = eval(t + half, &(x + k2 * half))?;
    let k4 = eval(t + dt, &(x + k3 * dt))?;
    Ok((k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// Integrates `field` from `x0` over the uniform grid of `cfg`.
///
/// `observer` sees every grid point, including the initial and final ones, so
/// it runs `cfg.steps() + 1` times. An observer error stops the run.
pub fn integrate<F, O, const N: usize>(
    field: &F,
    x0: StateVector<N>,
    cfg: &IntegrationConfig,
    mut observer: O,
) -> Result<StateVector<N>, IntegrationError<F::Error>>
where
    F: VectorField<N> + ?Sized,
    O: FnMut(f64, &StateVector<N>) -> Result<(), F::Error>,
{
    cfg.validate().map_err(IntegrationError::InvalidConfig)?;
    if !finite(&x0) {
        return Err(IntegrationError::NonFiniteState { t: cfg.t_start });
    }
    let steps = cfg.steps();
    let mut x = x0;
    // Low-order bits lost when adding each increment to x.
    let mut carry = StateVector::<N>::zeros();
    let mut t = cfg.t_start;
    observer(t, &x).map_err(|source| IntegrationError::Field { t, source })?;
    for k in 1..=steps {
        let t_next = cfg.grid_time(k);
        let y = rk4_increment(field, t, &x, t_next - t)? - carry;
        let sum = x + y;
        if !finite(&sum) {
            return Err(IntegrationError::NonFiniteState { t: t_next });
        }
        carry = (sum - x) - y;
        x = sum;
        t = t_next;
        observer(t, &x).map_err(|source| IntegrationError::Field { t, source })?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Vector1, Vector2};
    use std::f64::consts::PI;

    fn decay(_t: f64, x: &Vector1<f64>) -> Vector1<f64> {
        -x
    }

    fn run_decay(dt: f64) -> f64 {
        let cfg = IntegrationConfig::new(dt, 0.0, 1.0);
        integrate(&decay, Vector1::new(1.0), &cfg, |_, _| Ok(())).unwrap()[0]
    }

    #[test]
    fn zero_field_keeps_state() {
        let f = |_t: f64, _x: &Vector1<f64>| Vector1::zeros();
        let next = rk4_step(&f, 0.0, &Vector1::new(3.2), 0.1).unwrap();
        assert_eq!(next[0], 3.2);
    }

    #[test]
    fn unit_field_is_exact() {
        let f = |_t: f64, _x: &Vector1<f64>| Vector1::new(1.0);
        let next = rk4_step(&f, 0.0, &Vector1::new(0.0), 0.25).unwrap();
        assert_eq!(next[0], 0.25);
    }

    #[test]
    fn polynomial_in_time_is_exact_up_to_degree_four() {
        // x' = 4t^3 has x(t) = t^4 and RK4 integrates quartics in t exactly.
        let f = |t: f64, _x: &Vector1<f64>| Vector1::new(4.0 * t.powi(3));
        let next = rk4_step(&f, 0.5, &Vector1::new(0.5f64.powi(4)), 0.5).unwrap();
        assert!((next[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let x = run_decay(1e-3);
        assert!((x - (-1.0f64).exp()).abs() <= 1e-8, "x = {x}");
    }

    #[test]
    fn halving_dt_shrinks_error_by_at_least_fifteen() {
        let exact = (-1.0f64).exp();
        let coarse = (run_decay(1e-3) - exact).abs();
        let fine = (run_decay(5e-4) - exact).abs();
        assert!(coarse / fine >= 15.0, "ratio {}", coarse / fine);
    }

    #[test]
    fn harmonic_oscillator_returns_after_one_period() {
        let f = |_t: f64, x: &Vector2<f64>| Vector2::new(x[1], -x[0]);
        let cfg = IntegrationConfig::new(1e-3, 0.0, 2.0 * PI);
        let x = integrate(&f, Vector2::new(1.0, 0.0), &cfg, |_, _| Ok(())).unwrap();
        assert!((x[0] - 1.0).abs() <= 1e-9 && x[1].abs() <= 1e-9, "{x:?}");
    }

    #[test]
    fn observer_sees_every_grid_point() {
        let f = |_t: f64, _x: &Vector1<f64>| Vector1::zeros();
        for dt in [0.1, 0.3, 1e-3] {
            let cfg = IntegrationConfig::new(dt, 0.0, 1.0);
            let mut calls = 0usize;
            let mut last_t = f64::NAN;
            let x = integrate(&f, Vector1::new(5.0), &cfg, |t, _| {
                calls += 1;
                last_t = t;
                Ok(())
            })
            .unwrap();
            assert_eq!(x[0], 5.0);
            assert_eq!(calls, (1.0 / dt - 1e-9).ceil() as usize + 1, "dt = {dt}");
            assert_eq!(last_t, 1.0);
        }
    }

    #[test]
    fn truncated_final_step_lands_on_t_end() {
        // x' = 1 integrates exactly, so the truncated final step is visible in x.
        let f = |_t: f64, _x: &Vector1<f64>| Vector1::new(1.0);
        let cfg = IntegrationConfig::new(0.3, 0.0, 1.0);
        assert_eq!(cfg.steps(), 4);
        let x = integrate(&f, Vector1::new(0.0), &cfg, |_, _| Ok(())).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn non_finite_derivative_is_reported_with_time() {
        let f = |t: f64, x: &Vector1<f64>| if t > 0.5 { Vector1::new(f64::NAN) } else { x * 0.0 };
        let cfg = IntegrationConfig::new(0.1, 0.0, 1.0);
        match integrate(&f, Vector1::new(1.0), &cfg, |_, _| Ok(())) {
            Err(IntegrationError::NonFiniteState { t }) => assert!(t > 0.5 && t <= 0.65, "t = {t}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(IntegrationConfig::new(0.0, 0.0, 1.0).validate().is_err());
        assert!(IntegrationConfig::new(-1e-3, 0.0, 1.0).validate().is_err());
        assert!(IntegrationConfig::new(1e-3, 1.0, 1.0).validate().is_err());
        assert!(IntegrationConfig::new(1e-3, 0.0, f64::INFINITY).validate().is_err());
        let f = |_t: f64, x: &Vector1<f64>| *x;
        assert!(matches!(
            rk4_step(&f, 0.0, &Vector1::new(1.0), 0.0),
            Err(IntegrationError::InvalidConfig(_))
        ));
    }

    #[test]
    fn runs_are_bit_identical() {
        assert_eq!(run_decay(1e-3).to_bits(), run_decay(1e-3).to_bits());
    }

    mod props {
        use super::*;
        use nalgebra::Vector3;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn stepper_is_linear_for_linear_fields(
                x in prop::array::uniform3(-10.0f64..10.0),
                alpha in -5.0f64..5.0,
                dt in 1e-4f64..1e-1,
            ) {
                let f = |_t: f64, x: &Vector3<f64>| Vector3::new(x[1], -2.0 * x[0] + 0.3 * x[2], -x[2]);
                let x = Vector3::from(x);
                let scaled = rk4_step(&f, 0.0, &(x * alpha), dt).unwrap();
                let base = rk4_step(&f, 0.0, &x, dt).unwrap() * alpha;
                for i in 0..3 {
                    prop_assert!((scaled[i] - base[i]).abs() <= 1e-12 * (1.0 + base[i].abs()));
                }
            }
        }
    }
}
