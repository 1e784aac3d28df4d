//! Robust feedback-linearizing controller for the actuator.
//!
//! ```text
//! v_s = x_ref''' + K3 z3 + K2 z2 + K1 z1
//! u   = A⁻¹ (v_s - b) - A⁻¹ (∂V/∂z3) k d2
//! ```
//!
//! with `A`, `b` from [`linearized_terms`], `V = zᵀ P z` and `d2` from
//! [`d2_bound`]. Gains and `P` are frozen for the lifetime of a controller.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuator::{
    d2_bound, linearized_terms, nominal_acceleration, true_acceleration, true_dynamics, ActuatorError,
    PlantParams, PlantState, TrueDisturbance, UncertaintyBounds,
};
use crate::integrator::{StateVector, VectorField};
use crate::stability::{is_hurwitz, GainSet, LyapunovData};
use crate::trajectory::{ReferenceSample, ReferenceSpec};

/// Where the controller's armature acceleration comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccelerationSource {
    /// The plant's actual acceleration, as an accelerometer would report it.
    #[default]
    Measured,
    /// The nominal model's prediction from `(x_a, v, i)`.
    Nominal,
}

/// Tracking error `(x_a - x_ref, v - v_ref, acc - a_ref)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ErrorVector {
    pub z1: f64,
    pub z2: f64,
    pub z3: f64,
}

impl ErrorVector {
    pub fn new(state: &PlantState, acc: f64, reference: &ReferenceSample) -> Self {
        Self { z1: state.x_a - reference.pos, z2: state.v - reference.vel, z3: acc - reference.acc }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.z1, self.z2, self.z3)
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControlOutput {
    /// Coil voltage, V.
    pub u: f64,
    /// Virtual input, m/s³.
    pub v_s: f64,
    /// Lyapunov-reconstruction part of `u`, V.
    pub robust_component: f64,
    pub in_invariant_set: bool,
    pub z: ErrorVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ControlError {
    #[error(transparent)]
    Actuator(#[from] ActuatorError),
    #[error("gains not Hurwitz: K = ({k1}, {k2}, {k3})")]
    NonHurwitzGains { k1: f64, k2: f64, k3: f64 },
    #[error("control voltage is not finite")]
    NonFiniteControl,
}

pub fn virtual_input(gains: &GainSet, z: &ErrorVector, ref_jerk: f64) -> f64 {
    ref_jerk + gains.k3 * z.z3 + gains.k2 * z.z2 + gains.k1 * z.z1
}

/// Everything the control law needs besides the measurement and reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustController {
    pub params: PlantParams,
    pub bounds: UncertaintyBounds,
    pub gains: GainSet,
    pub lyapunov: LyapunovData,
}

impl RobustController {
    /// Checks the gains and solves the Lyapunov equation for them.
    pub fn new(params: PlantParams, bounds: UncertaintyBounds, gains: GainSet) -> Result<Self, ControlError> {
        let lyapunov = LyapunovData::for_gains(&gains).map_err(|_| non_hurwitz(&gains))?;
        Ok(Self { params, bounds, gains, lyapunov })
    }

    pub fn control(&self, state: &PlantState, acc: f64, reference: &ReferenceSample) -> Result<ControlOutput, ControlError> {
        robust_control(&self.params, &self.bounds, &self.gains, &self.lyapunov, state, acc, reference)
    }
}

fn non_hurwitz(g: &GainSet) -> ControlError {
    ControlError::NonHurwitzGains { k1: g.k1, k2: g.k2, k3: g.k3 }
}

/// Robust control voltage for the measured `state` and armature acceleration `acc`.
///
/// `lyapunov` must belong to `gains`; it is not re-solved here.
pub fn robust_control(
    params: &PlantParams,
    bounds: &UncertaintyBounds,
    gains: &GainSet,
    lyapunov: &LyapunovData,
    state: &PlantState,
    acc: f64,
    reference: &ReferenceSample,
) -> Result<ControlOutput, ControlError> {
    if !is_hurwitz(gains) {
        return Err(non_hurwitz(gains));
    }
    let terms = linearized_terms(params, state, acc)?;
    let z = ErrorVector::new(state, acc, reference);
    let zv = z.to_vector();
    let v_s = virtual_input(gains, &z, reference.jerk);
    let d2 = d2_bound(bounds, params, state.v, acc);
    let grad = lyapunov.gradient_top(&zv);
    let inv_a = 1.0 / terms.a_term;
    let nominal = inv_a * (v_s - terms.b_term);
    let robust_component = if d2 == 0.0 || gains.k_robust == 0.0 { 0.0 } else { -inv_a * grad * gains.k_robust * d2 };
    let u = nominal + robust_component;
    if !u.is_finite() {
        return Err(ControlError::NonFiniteControl);
    }
    Ok(ControlOutput {
        u,
        v_s,
        robust_component,
        in_invariant_set: lyapunov.in_invariant_set(&zv, gains.k_robust),
        z,
    })
}

/// Plant plus controller, tracking a reference in iteration-local time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedLoopField {
    pub controller: RobustController,
    pub disturbance: TrueDisturbance,
    pub reference: ReferenceSpec,
    pub acceleration_source: AccelerationSource,
}

/// Builds the closed loop of the disturbed plant under the robust controller.
pub fn closed_loop_field(
    params: PlantParams,
    disturbance: TrueDisturbance,
    bounds: UncertaintyBounds,
    gains: GainSet,
    reference: ReferenceSpec,
    acceleration_source: AccelerationSource,
) -> Result<ClosedLoopField, ControlError> {
    Ok(ClosedLoopField {
        controller: RobustController::new(params, bounds, gains)?,
        disturbance,
        reference,
        acceleration_source,
    })
}

impl ClosedLoopField {
    /// Acceleration the controller sees in `state`.
    pub fn sensed_acceleration(&self, state: &PlantState) -> Result<f64, ActuatorError> {
        match self.acceleration_source {
            AccelerationSource::Measured => true_acceleration(&self.controller.params, &self.disturbance, state),
            AccelerationSource::Nominal => nominal_acceleration(&self.controller.params, state),
        }
    }

    pub fn control_at(&self, t: f64, state: &PlantState) -> Result<ControlOutput, ControlError> {
        let acc = self.sensed_acceleration(state)?;
        self.controller.control(state, acc, &self.reference.sample(t))
    }
}

impl VectorField<3> for ClosedLoopField {
    type Error = ControlError;

    fn derivative(&self, t: f64, x: &StateVector<3>) -> Result<StateVector<3>, ControlError> {
        let state = PlantState::from_vector(x);
        let out = self.control_at(t, &state)?;
        let d = true_dynamics(&self.controller.params, &self.disturbance, &state, out.u)?;
        Ok(d.to_vector())
    }
}
