//! Multi-parametric extremum seeking over the feedback gains.
//!
//! Each tuned gain owns one dither channel:
//!
//! ```text
//! x'      = a sin(ω t - π/2) Q
//! δK̂(t)   = x(t) + a sin(ω t + π/2)
//! ```
//!
//! The cost `Q` is only known once an iteration has finished, so the integrator
//! state is advanced per iteration with `Q` held constant over that iteration's
//! window, using the closed-form integral of the sinusoid. Time `t` is global and
//! keeps running across iterations.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

/// Relative tolerance for the `ω_p + ω_q = ω_r` resonance test.
pub const FREQUENCY_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EsChannel {
    /// Dither integrator `x`.
    pub x_state: f64,
    pub omega: f64,
    pub base_amplitude: f64,
    pub current_amplitude: f64,
    /// Nominal value of the tuned gain; the channel produces offsets from it.
    pub nominal_value: f64,
}

impl EsChannel {
    pub fn new(nominal_value: f64, omega: f64, amplitude: f64) -> Self {
        Self { x_state: 0.0, omega, base_amplitude: amplitude, current_amplitude: amplitude, nominal_value }
    }

    /// Gain offset `x + a sin(ω t + π/2)`.
    pub fn delta_at(&self, t: f64) -> f64 {
        self.x_state + self.current_amplitude * (self.omega * t + FRAC_PI_2).sin()
    }

    pub fn gain_at(&self, t: f64) -> f64 {
        self.nominal_value + self.delta_at(t)
    }

    /// Exact integral of `a sin(ω τ - π/2) Q` over `[t_start, t_end]`.
    pub fn increment(&self, q: f64, t_start: f64, t_end: f64) -> f64 {
        let phase = |t: f64| (self.omega * t - FRAC_PI_2).cos();
        q * (self.current_amplitude / self.omega) * (phase(t_start) - phase(t_end))
    }

    /// Advances `x` over one iteration window with the cost held at `q`; returns the step.
    pub fn advance(&mut self, q: f64, t_start: f64, t_end: f64) -> f64 {
        let step = self.increment(q, t_start, t_end);
        self.x_state += step;
        step
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.omega.is_finite() && self.omega > 0.0) {
            out.push(format!("dither frequency must be positive, got {}", self.omega));
        }
        if !(self.base_amplitude.is_finite() && self.base_amplitude > 0.0) {
            out.push(format!("dither amplitude must be positive, got {}", self.base_amplitude));
        }
        out
    }
}

/// Why a set of dither frequencies is rejected.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum FrequencyViolation {
    #[error("no dither frequencies given")]
    Empty,
    #[error("dither frequency {value} is not positive and finite")]
    NonPositive { value: f64 },
    #[error("dither frequencies #{first} and #{second} are equal ({value} rad/s)")]
    Duplicate { first: usize, second: usize, value: f64 },
    #[error("dither frequencies {p} + {q} = {r} rad/s (channels #{}, #{}, #{})", .indices.0, .indices.1, .indices.2)]
    Resonance { p: f64, q: f64, r: f64, indices: (usize, usize, usize) },
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= FREQUENCY_REL_TOL * a.abs().max(b.abs())
}

/// Checks that frequencies are distinct and that no two of them sum to a third.
///
/// Channel indices in the error are 1-based.
pub fn check_frequencies(omegas: &[f64]) -> Result<(), FrequencyViolation> {
    if omegas.is_empty() {
        return Err(FrequencyViolation::Empty);
    }
    if let Some(&value) = omegas.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(FrequencyViolation::NonPositive { value });
    }
    let n = omegas.len();
    for i in 0..n {
        for j in (i + 1)..n {
            if close(omegas[i], omegas[j]) {
                return Err(FrequencyViolation::Duplicate { first: i + 1, second: j + 1, value: omegas[i] });
            }
        }
    }
    for p in 0..n {
        for q in (p + 1)..n {
            for r in (0..n).filter(|&r| r != p && r != q) {
                if close(omegas[p] + omegas[q], omegas[r]) {
                    return Err(FrequencyViolation::Resonance {
                        p: omegas[p],
                        q: omegas[q],
                        r: omegas[r],
                        indices: (p + 1, q + 1, r + 1),
                    });
                }
            }
        }
    }
    Ok(())
}

pub fn validate_frequencies(omegas: &[f64]) -> bool {
    check_frequencies(omegas).is_ok()
}

/// One step of the amplitude schedule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleStage {
    /// Fires once `Q <= cost_fraction * Q(1)`.
    pub cost_fraction: f64,
    /// Per-channel multiplier on the base amplitude (one entry applies to all channels).
    pub factors: Vec<f64>,
    /// Multiply the factors by `Q(1)` as well.
    pub scale_with_first_cost: bool,
}

impl ScheduleStage {
    pub fn multiplier(&self, channel: usize, q_first: f64) -> f64 {
        let factor = if self.factors.len() == 1 { self.factors[0] } else { self.factors[channel] };
        if self.scale_with_first_cost {
            factor * q_first
        } else {
            factor
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct AmplitudeSchedule {
    pub stages: Vec<ScheduleStage>,
}

impl AmplitudeSchedule {
    /// Amplitudes drop to `a·Q(1)/2` once `Q <= Q(1)/2`, then to `a·Q(1)/3` once `Q <= Q(1)/3`.
    pub fn halves_then_thirds() -> Self {
        Self {
            stages: vec![
                ScheduleStage { cost_fraction: 0.5, factors: vec![0.5], scale_with_first_cost: true },
                ScheduleStage { cost_fraction: 1.0 / 3.0, factors: vec![1.0 / 3.0], scale_with_first_cost: true },
            ],
        }
    }

    pub fn violations(&self, channels: usize) -> Vec<String> {
        let mut out = Vec::new();
        let mut previous = f64::INFINITY;
        for (k, stage) in self.stages.iter().enumerate() {
            let n = k + 1;
            if !(stage.cost_fraction.is_finite() && stage.cost_fraction > 0.0) {
                out.push(format!("schedule stage {n}: cost fraction must be positive"));
            }
            if stage.cost_fraction >= previous {
                out.push(format!("schedule stage {n}: cost fractions must be strictly decreasing"));
            }
            previous = stage.cost_fraction;
            if stage.factors.len() != 1 && stage.factors.len() != channels {
                out.push(format!(
                    "schedule stage {n}: expected 1 or {channels} factors, got {}",
                    stage.factors.len()
                ));
            }
            if stage.factors.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
                out.push(format!("schedule stage {n}: factors must be positive"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SeekerError {
    #[error("first-iteration cost must be positive to scale amplitudes, got {0}")]
    DegenerateFirstCost(f64),
    #[error(transparent)]
    Frequencies(#[from] FrequencyViolation),
}

/// The dither channels of one tuning vector, in β order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EsBank {
    pub channels: Vec<EsChannel>,
    /// Deepest schedule stage applied so far (0 = base amplitudes).
    pub stage: usize,
}

impl EsBank {
    pub fn new(channels: Vec<EsChannel>) -> Result<Self, SeekerError> {
        let omegas: Vec<f64> = channels.iter().map(|c| c.omega).collect();
        check_frequencies(&omegas)?;
        Ok(Self { channels, stage: 0 })
    }

    /// Largest dither frequency.
    pub fn omega0(&self) -> f64 {
        self.channels.iter().map(|c| c.omega).fold(0.0, f64::max)
    }

    pub fn deltas_at(&self, t: f64) -> Vec<f64> {
        self.channels.iter().map(|c| c.delta_at(t)).collect()
    }

    pub fn x_states(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.x_state).collect()
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.current_amplitude).collect()
    }

    /// Advances every channel over `[t_start, t_end]` with the cost held at `q`.
    pub fn advance(&mut self, q: f64, t_start: f64, t_end: f64) {
        for c in &mut self.channels {
            c.advance(q, t_start, t_end);
        }
    }
}

/// Applies the deepest schedule stage whose threshold `q_current` has reached.
///
/// Stages latch: once fired, a stage never un-fires, and shallower stages are
/// ignored afterwards. Returns the stage number (1-based) if a new one fired.
pub fn schedule_amplitudes(
    bank: &mut EsBank,
    schedule: &AmplitudeSchedule,
    q_current: f64,
    q_first: f64,
) -> Result<Option<usize>, SeekerError> {
    if !(q_first > 0.0 && q_first.is_finite()) {
        return Err(SeekerError::DegenerateFirstCost(q_first));
    }
    let deepest = schedule
        .stages
        .iter()
        .enumerate()
        .filter(|(_, s)| q_current <= s.cost_fraction * q_first)
        .map(|(k, _)| k + 1)
        .max();
    match deepest {
        Some(stage) if stage > bank.stage => {
            let spec = &schedule.stages[stage - 1];
            for (idx, c) in bank.channels.iter_mut().enumerate() {
                c.current_amplitude = c.base_amplitude * spec.multiplier(idx, q_first);
            }
            bank.stage = stage;
            Ok(Some(stage))
        }
        _ => Ok(None),
    }
}

/// Runs one channel against a static cost map `cost(offset)` for `iterations`
/// iterations of length `t_f`; returns the offset used in each iteration.
pub fn seek_static_map<F>(channel: &mut EsChannel, t_f: f64, iterations: usize, mut cost: F) -> Vec<f64>
where
    F: FnMut(f64) -> f64,
{
    (0..iterations)
        .map(|k| {
            let t_start = k as f64 * t_f;
            let offset = channel.delta_at(t_start);
            let q = cost(offset);
            channel.advance(q, t_start, t_start + t_f);
            offset
        })
        .collect()
}

impl fmt::Display for EsBank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, c) in self.channels.iter().enumerate() {
            if k > 0 {
                f.write_str(", ")?;
            }
            write!(f, "[x={}, ω={}, a={}]", c.x_state, c.omega, c.current_amplitude)?;
        }
        Ok(())
    }
}
