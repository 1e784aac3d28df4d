//! Electromagnetic actuator: armature on a spring, driven by a coil.
//!
//! ```text
//! m x''  = k (x0 - x) - η x' - a i² / (2 (b + x)²)
//! u      = R i + a/(b + x) di/dt - a i x' / (b + x)²
//! ```
//!
//! All quantities are SI. The controller only knows the nominal `k`, `η`; the
//! simulated plant uses `k_nominal + δk`, `η_nominal + δη`.

use nalgebra::Vector3;
use serde::Serialize;
use thiserror::Error;

/// Controller is undefined below this coil current (it divides by `i`).
pub const CURRENT_MIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlantParams {
    /// Armature mass, kg.
    pub mass: f64,
    /// Coil resistance, Ω.
    pub resistance: f64,
    /// Nominal damping, kg/s.
    pub eta_nominal: f64,
    /// Spring rest length, m.
    pub x0_spring: f64,
    /// Nominal spring stiffness, N/m.
    pub k_nominal: f64,
    /// Coil constant `a`, N·m²/A².
    pub a_coil: f64,
    /// Coil constant `b`, m.
    pub b_coil: f64,
    /// Armature travel limit, m.
    pub x_f: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            mass: 0.27,
            resistance: 6.0,
            eta_nominal: 7.53,
            x0_spring: 8e-3,
            k_nominal: 158.0e3,
            a_coil: 14.96e-6,
            b_coil: 4e-5,
            x_f: 0.5e-3,
        }
    }
}

impl PlantParams {
    pub fn violations(&self) -> Vec<String> {
        [
            ("mass", self.mass),
            ("resistance", self.resistance),
            ("eta_nominal", self.eta_nominal),
            ("x0_spring", self.x0_spring),
            ("k_nominal", self.k_nominal),
            ("a_coil", self.a_coil),
            ("b_coil", self.b_coil),
            ("x_f", self.x_f),
        ]
        .into_iter()
        .filter(|(_, v)| !(v.is_finite() && *v > 0.0))
        .map(|(name, v)| format!("plant parameter {name} must be positive, got {v}"))
        .collect()
    }
}

/// Realized parameter errors of the simulated plant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TrueDisturbance {
    pub delta_k: f64,
    pub delta_eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct UncertaintyBounds {
    pub delta_k_max: f64,
    pub delta_eta_max: f64,
}

impl UncertaintyBounds {
    /// ±10% on stiffness and damping.
    pub fn ten_percent_of(params: &PlantParams) -> Self {
        Self { delta_k_max: 0.1 * params.k_nominal, delta_eta_max: 0.1 * params.eta_nominal }
    }

    pub fn contains(&self, d: &TrueDisturbance) -> bool {
        d.delta_k.abs() <= self.delta_k_max && d.delta_eta.abs() <= self.delta_eta_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PlantState {
    pub x_a: f64,
    pub v: f64,
    pub i: f64,
}

impl PlantState {
    pub const fn new(x_a: f64, v: f64, i: f64) -> Self {
        Self { x_a, v, i }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x_a, self.v, self.i)
    }

    pub fn from_vector(x: &Vector3<f64>) -> Self {
        Self { x_a: x[0], v: x[1], i: x[2] }
    }

    pub fn is_finite(&self) -> bool {
        self.x_a.is_finite() && self.v.is_finite() && self.i.is_finite()
    }

    /// `0 <= x_a <= x_f`; monitored, never enforced.
    pub fn in_range(&self, params: &PlantParams) -> bool {
        (0.0..=params.x_f).contains(&self.x_a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ActuatorError {
    #[error("non-finite state: coil gap b + x_a = {gap} m is not positive")]
    NonFiniteState { gap: f64 },
    #[error("coil current {i} A below the {min} A singularity guard")]
    CurrentSingularity { i: f64, min: f64 },
}

fn coil_gap(params: &PlantParams, state: &PlantState) -> Result<f64, ActuatorError> {
    let gap = params.b_coil + state.x_a;
    if gap > 0.0 && gap.is_finite() {
        Ok(gap)
    } else {
        Err(ActuatorError::NonFiniteState { gap })
    }
}

fn acceleration_with(
    params: &PlantParams,
    stiffness: f64,
    damping: f64,
    state: &PlantState,
) -> Result<f64, ActuatorError> {
    let gap = coil_gap(params, state)?;
    let magnetic = params.a_coil * state.i * state.i / (2.0 * gap * gap);
    Ok((stiffness * (params.x0_spring - state.x_a) - damping * state.v - magnetic) / params.mass)
}

/// Armature acceleration of the simulated (disturbed) plant.
pub fn true_acceleration(
    params: &PlantParams,
    disturbance: &TrueDisturbance,
    state: &PlantState,
) -> Result<f64, ActuatorError> {
    acceleration_with(
        params,
        params.k_nominal + disturbance.delta_k,
        params.eta_nominal + disturbance.delta_eta,
        state,
    )
}

/// Armature acceleration predicted by the nominal model.
pub fn nominal_acceleration(params: &PlantParams, state: &PlantState) -> Result<f64, ActuatorError> {
    acceleration_with(params, params.k_nominal, params.eta_nominal, state)
}

/// Time derivative of `(x_a, v, i)` for the disturbed plant under coil voltage `u`.
pub fn true_dynamics(
    params: &PlantParams,
    disturbance: &TrueDisturbance,
    state: &PlantState,
    u: f64,
) -> Result<PlantState, ActuatorError> {
    let gap = coil_gap(params, state)?;
    let acc = true_acceleration(params, disturbance, state)?;
    let back_emf = params.a_coil * state.i * state.v / (gap * gap);
    let di = (u - params.resistance * state.i + back_emf) * gap / params.a_coil;
    Ok(PlantState { x_a: state.v, v: acc, i: di })
}

pub fn nominal_dynamics(params: &PlantParams, state: &PlantState, u: f64) -> Result<PlantState, ActuatorError> {
    true_dynamics(params, &TrueDisturbance::default(), state, u)
}

/// Coil current that makes the armature acceleration vanish at `(x_a, v)`.
///
/// `None` when the spring and damping forces pull the wrong way for a magnetic
/// force (which only attracts) to balance them.
pub fn equilibrium_current(
    params: &PlantParams,
    disturbance: &TrueDisturbance,
    x_a: f64,
    v: f64,
) -> Option<f64> {
    let gap = params.b_coil + x_a;
    let stiffness = params.k_nominal + disturbance.delta_k;
    let damping = params.eta_nominal + disturbance.delta_eta;
    let force = stiffness * (params.x0_spring - x_a) - damping * v;
    (gap > 0.0 && force > 0.0).then(|| (2.0 * force * gap * gap / params.a_coil).sqrt())
}

/// Input-output form `x_a''' = b + A u` of the nominal model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizedTerms {
    /// Drift `b(ξ)`, m/s³.
    pub b_term: f64,
    /// Input gain `A(ξ)`, m/s³ per volt.
    pub a_term: f64,
}

/// `b = -(k/m) x' - (η/m) x'' + R i² / ((b + x) m)` and `A = -i / (m (b + x))`,
/// with nominal `k`, `η` and the supplied acceleration estimate `acc`.
pub fn linearized_terms(params: &PlantParams, state: &PlantState, acc: f64) -> Result<LinearizedTerms, ActuatorError> {
    if state.i.is_nan() || state.i.abs() < CURRENT_MIN {
        return Err(ActuatorError::CurrentSingularity { i: state.i, min: CURRENT_MIN });
    }
    let gap = coil_gap(params, state)?;
    let m = params.mass;
    let b_term = -params.k_nominal / m * state.v - params.eta_nominal / m * acc
        + params.resistance * state.i * state.i / (gap * m);
    let a_term = -state.i / (m * gap);
    Ok(LinearizedTerms { b_term, a_term })
}

/// Bound `d2 = (δk_max/m)|x'| + (δη_max/m)|x''|` on the jerk uncertainty.
pub fn d2_bound(bounds: &UncertaintyBounds, params: &PlantParams, v: f64, acc: f64) -> f64 {
    (bounds.delta_k_max * v.abs() + bounds.delta_eta_max * acc.abs()) / params.mass
}
