//! Rest-to-rest quintic reference `x_ref(t) = Σ a_i (t/t_f)^i`, held at `x_f` after `t_f`.

use nalgebra::{Matrix6, Vector6};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrajectoryError {
    #[error("motion time t_f must be positive and finite, got {0}")]
    InvalidDuration(f64),
    #[error("final position x_f must be finite, got {0}")]
    InvalidTarget(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceSpec {
    pub t_f: f64,
    pub x_f: f64,
    /// Coefficients `a_0..a_5` of the polynomial in normalized time `τ = t / t_f`.
    pub coeffs: [f64; 6],
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ReferenceSample {
    pub pos: f64,
    pub vel: f64,
    pub acc: f64,
    pub jerk: f64,
}

/// Solves the six boundary conditions (position, velocity and acceleration at
/// both ends) for the quintic coefficients.
pub fn build_quintic(t_f: f64, x_f: f64) -> Result<ReferenceSpec, TrajectoryError> {
    if !(t_f.is_finite() && t_f > 0.0) {
        return Err(TrajectoryError::InvalidDuration(t_f));
    }
    if !x_f.is_finite() {
        return Err(TrajectoryError::InvalidTarget(x_f));
    }
    // Rows: d^k/dτ^k of τ^i at τ = 0 and τ = 1, for k = 0, 1, 2. The derivative
    // scaling 1/t_f^k multiplies a zero right-hand side except for the position
    // row, so the system can be posed in τ directly.
    let mut m = Matrix6::zeros();
    for (row, (tau, order)) in [(0.0, 0), (0.0, 1), (0.0, 2), (1.0, 0), (1.0, 1), (1.0, 2)]
        .into_iter()
        .enumerate()
    {
        for i in 0..6 {
            m[(row, i)] = derivative_of_power(i, order, tau);
        }
    }
    let rhs = Vector6::new(0.0, 0.0, 0.0, x_f, 0.0, 0.0);
    let a = m.lu().solve(&rhs).expect("quintic boundary system is nonsingular");
    let mut coeffs = [0.0; 6];
    coeffs.copy_from_slice(a.as_slice());
    Ok(ReferenceSpec { t_f, x_f, coeffs })
}

/// `d^order/dτ^order τ^power` evaluated at `tau`.
fn derivative_of_power(power: usize, order: usize, tau: f64) -> f64 {
    if order > power {
        return 0.0;
    }
    let falling: f64 = ((power - order + 1)..=power).map(|k| k as f64).product();
    falling * tau.powi((power - order) as i32)
}

impl ReferenceSpec {
    /// Reference at iteration-local time `t`.
    ///
    /// The polynomial is evaluated on `[0, t_f]` (so `jerk(t_f)` is the
    /// polynomial's value); strictly after `t_f` the hold sample `(x_f, 0, 0, 0)`
    /// is returned.
    pub fn sample(&self, t: f64) -> ReferenceSample {
        if t > self.t_f {
            return ReferenceSample { pos: self.x_f, ..Default::default() };
        }
        let tau = t.max(0.0) / self.t_f;
        let a = &self.coeffs;
        // Horner on the polynomial and its τ-derivatives.
        let pos = a[0] + tau * (a[1] + tau * (a[2] + tau * (a[3] + tau * (a[4] + tau * a[5]))));
        let d1 = a[1] + tau * (2.0 * a[2] + tau * (3.0 * a[3] + tau * (4.0 * a[4] + tau * 5.0 * a[5])));
        let d2 = 2.0 * a[2] + tau * (6.0 * a[3] + tau * (12.0 * a[4] + tau * 20.0 * a[5]));
        let d3 = 6.0 * a[3] + tau * (24.0 * a[4] + tau * 60.0 * a[5]);
        let inv = 1.0 / self.t_f;
        ReferenceSample { pos, vel: d1 * inv, acc: d2 * inv * inv, jerk: d3 * inv * inv * inv }
    }
}
