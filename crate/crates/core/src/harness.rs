//! Iterative learning engine: episodes with state/reference reset, cost
//! evaluation, gain switching between iterations and campaign bookkeeping.
//!
//! Iteration `I` covers global time `[(I-1) t_f, I t_f]`. Its gains are frozen
//! at the dither offsets evaluated at `(I-1) t_f`; the plant restarts from the
//! same initial state and the reference restarts at iteration-local time 0.

use nalgebra::Matrix3;
use serde::Serialize;
use thiserror::Error;

use crate::actuator::{
    equilibrium_current, PlantParams, PlantState, TrueDisturbance, UncertaintyBounds,
};
use crate::controller::{closed_loop_field, AccelerationSource, ControlError, ErrorVector};
use crate::integrator::{integrate, IntegrationConfig, IntegrationError};
use crate::seeker::{schedule_amplitudes, AmplitudeSchedule, EsBank, EsChannel, SeekerError};
use crate::stability::{is_hurwitz, is_positive_definite, GainSet};
use crate::trajectory::{build_quintic, ReferenceSample, ReferenceSpec};

/// Number of tuned parameters: `(δK1, δK2, δK3, δk)`.
pub const BETA_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CostWeights {
    /// `C1 z1(t_f)² + C2 z2(t_f)² + C3 z3(t_f)²`.
    Terminal { c1: f64, c2: f64, c3: f64 },
    /// `∫ zᵀ C1 z dt + ∫ C2 u² dt` over the episode.
    Integral { state: Matrix3<f64>, input: f64 },
}

impl CostWeights {
    pub const fn actuator_default() -> Self {
        Self::Terminal { c1: 500.0, c2: 500.0, c3: 10.0 }
    }

    pub fn violations(&self) -> Vec<String> {
        match *self {
            Self::Terminal { c1, c2, c3 } => [("C1", c1), ("C2", c2), ("C3", c3)]
                .into_iter()
                .filter(|(_, c)| !(c.is_finite() && *c > 0.0))
                .map(|(name, c)| format!("cost weight {name} must be positive, got {c}"))
                .collect(),
            Self::Integral { state, input } => {
                let mut out = Vec::new();
                let sym = nalgebra::DMatrix::from_column_slice(3, 3, state.as_slice());
                if state != state.transpose() || !is_positive_definite(&sym) {
                    out.push("integral state weight C1 must be symmetric positive definite".to_string());
                }
                if !(input.is_finite() && input > 0.0) {
                    out.push(format!("integral input weight C2 must be positive, got {input}"));
                }
                out
            }
        }
    }
}

/// One grid point of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TelemetrySample {
    /// Iteration-local time, s.
    pub t: f64,
    pub state: PlantState,
    pub reference: ReferenceSample,
    pub u: f64,
    pub z: ErrorVector,
    pub in_invariant_set: bool,
}

/// Cost of a finished episode. Always nonnegative.
pub fn evaluate_cost(weights: &CostWeights, telemetry: &[TelemetrySample]) -> f64 {
    let Some(last) = telemetry.last() else {
        return 0.0;
    };
    match *weights {
        CostWeights::Terminal { c1, c2, c3 } => {
            let z = last.z;
            c1 * z.z1 * z.z1 + c2 * z.z2 * z.z2 + c3 * z.z3 * z.z3
        }
        CostWeights::Integral { state, input } => {
            let integrand = |s: &TelemetrySample| {
                let z = s.z.to_vector();
                z.dot(&(state * z)) + input * s.u * s.u
            };
            telemetry
                .windows(2)
                .map(|w| 0.5 * (w[1].t - w[0].t) * (integrand(&w[0]) + integrand(&w[1])))
                .sum::<f64>()
                .max(0.0)
        }
    }
}

/// Initial tracking errors and coil current of every episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InitialConditions {
    /// Position error z1(0), m.
    pub z1: f64,
    /// Velocity error z2(0), m/s.
    pub z2: f64,
    /// Coil current i(0), A. `None` picks the current that balances the
    /// plant's forces at the initial position and velocity.
    pub i0: Option<f64>,
}

impl Default for InitialConditions {
    fn default() -> Self {
        Self { z1: 1e-5, z2: 1e-4, i0: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignConfig {
    pub params: PlantParams,
    pub disturbance: TrueDisturbance,
    pub bounds: UncertaintyBounds,
    pub reference: ReferenceSpec,
    pub nominal_gains: GainSet,
    /// Floor applied to the learned robust gain.
    pub k_robust_min: f64,
    /// Dither channels in β order: K1, K2, K3, k.
    pub channels: Vec<EsChannel>,
    pub schedule: AmplitudeSchedule,
    pub cost: CostWeights,
    pub iterations: usize,
    pub dt: f64,
    pub initial: InitialConditions,
    pub acceleration_source: AccelerationSource,
    /// An episode whose `|z|` exceeds this is treated as diverged.
    pub z_ceiling: f64,
}

impl Default for CampaignConfig {
    /// The actuator case: table parameters, `(-500, -125, -26, 1)` gains,
    /// `C = (500, 500, 10)`, dithers at 7.5/5.3/5.1/6.1 rad/s with amplitudes
    /// 200/120/20/0.2, 10% uncertainty realized at `(+δk_max, -δη_max)`.
    fn default() -> Self {
        let params = PlantParams::default();
        let bounds = UncertaintyBounds::ten_percent_of(&params);
        let nominal_gains = GainSet::actuator_nominal();
        let channels = default_channels(&nominal_gains);
        Self {
            params,
            disturbance: TrueDisturbance { delta_k: bounds.delta_k_max, delta_eta: -bounds.delta_eta_max },
            bounds,
            reference: build_quintic(1.0, params.x_f).expect("valid default reference"),
            nominal_gains,
            k_robust_min: 0.0,
            channels,
            schedule: AmplitudeSchedule::halves_then_thirds(),
            cost: CostWeights::actuator_default(),
            iterations: 60,
            dt: 1e-5,
            initial: InitialConditions::default(),
            acceleration_source: AccelerationSource::Measured,
            z_ceiling: 1.0,
        }
    }
}

pub fn default_channels(nominal: &GainSet) -> Vec<EsChannel> {
    vec![
        EsChannel::new(nominal.k1, 7.5, 200.0),
        EsChannel::new(nominal.k2, 5.3, 120.0),
        EsChannel::new(nominal.k3, 5.1, 20.0),
        EsChannel::new(nominal.k_robust, 6.1, 0.2),
    ]
}

impl CampaignConfig {
    /// Every reason this config cannot run, one line each.
    pub fn violations(&self) -> Vec<String> {
        let mut out = self.params.violations();
        if !self.bounds.delta_k_max.is_finite() || self.bounds.delta_k_max < 0.0 {
            out.push("uncertainty bound delta_k_max must be nonnegative".into());
        }
        if !self.bounds.delta_eta_max.is_finite() || self.bounds.delta_eta_max < 0.0 {
            out.push("uncertainty bound delta_eta_max must be nonnegative".into());
        }
        if !self.bounds.contains(&self.disturbance) {
            out.push(format!(
                "disturbance (delta_k = {}, delta_eta = {}) exceeds its bounds",
                self.disturbance.delta_k, self.disturbance.delta_eta
            ));
        }
        if !is_hurwitz(&self.nominal_gains) {
            let g = &self.nominal_gains;
            out.push(format!("gains not Hurwitz: K = ({}, {}, {})", g.k1, g.k2, g.k3));
        }
        if !(self.nominal_gains.k_robust.is_finite() && self.nominal_gains.k_robust >= 0.0) {
            out.push(format!("nominal robust gain k must be nonnegative, got {}", self.nominal_gains.k_robust));
        }
        if !(self.k_robust_min.is_finite() && self.k_robust_min >= 0.0) {
            out.push("k_robust_min must be nonnegative".into());
        }
        if self.channels.len() != BETA_LEN {
            out.push(format!("expected {BETA_LEN} dither channels (K1, K2, K3, k), got {}", self.channels.len()));
        }
        for (k, c) in self.channels.iter().enumerate() {
            out.extend(c.violations().into_iter().map(|v| format!("channel {}: {v}", k + 1)));
        }
        let omegas: Vec<f64> = self.channels.iter().map(|c| c.omega).collect();
        if let Err(e) = crate::seeker::check_frequencies(&omegas) {
            out.push(e.to_string());
        }
        out.extend(self.schedule.violations(self.channels.len()));
        out.extend(self.cost.violations());
        if self.iterations < 1 {
            out.push("iterations must be at least 1".into());
        }
        if let Err(e) = IntegrationConfig::new(self.dt, 0.0, self.reference.t_f).validate() {
            out.push(format!("time step: {e}"));
        }
        if self.z_ceiling.is_nan() || self.z_ceiling <= 0.0 {
            out.push("z_ceiling must be positive".into());
        }
        if self.violations_initial().is_some() {
            out.push(self.violations_initial().unwrap_or_default());
        }
        out
    }

    fn violations_initial(&self) -> Option<String> {
        if !(self.initial.z1.is_finite() && self.initial.z2.is_finite()) {
            return Some("initial errors must be finite".into());
        }
        match self.initial.i0 {
            Some(i) if !(i.is_finite() && i.abs() >= crate::actuator::CURRENT_MIN) => {
                Some(format!("initial current {i} A is below the singularity guard"))
            }
            Some(_) => None,
            None => self.initial_state().err().map(|e| e.to_string()),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::InvalidConfig(v))
        }
    }

    /// Reset state `x₀ = (z1(0) + x_ref(0), z2(0) + v_ref(0), i(0))` used by every episode.
    pub fn initial_state(&self) -> Result<PlantState, HarnessError> {
        let r = self.reference.sample(0.0);
        let x_a = self.initial.z1 + r.pos;
        let v = self.initial.z2 + r.vel;
        let i = match self.initial.i0 {
            Some(i) => i,
            None => equilibrium_current(&self.params, &self.disturbance, x_a, v)
                .ok_or(HarnessError::NoEquilibriumCurrent { x_a, v })?,
        };
        Ok(PlantState::new(x_a, v, i))
    }

    /// Gains `nominal + β`, with the robust gain floored at `k_robust_min`.
    pub fn gains_from_beta(&self, beta: &[f64]) -> GainSet {
        let g = &self.nominal_gains;
        GainSet {
            k1: g.k1 + beta[0],
            k2: g.k2 + beta[1],
            k3: g.k3 + beta[2],
            k_robust: (g.k_robust + beta[3]).max(self.k_robust_min),
        }
    }

    pub fn integration(&self) -> IntegrationConfig {
        IntegrationConfig::new(self.dt, 0.0, self.reference.t_f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum DivergenceCause {
    #[error("state became non-finite")]
    NonFiniteState,
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("tracking error norm {norm} exceeded the ceiling {ceiling}")]
    CeilingExceeded { norm: f64, ceiling: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("no coil current balances the armature at x_a = {x_a} m, v = {v} m/s")]
    NoEquilibriumCurrent { x_a: f64, v: f64 },
    #[error("episode {iteration} diverged at t = {t} s: {cause}")]
    EpisodeDiverged { iteration: usize, t: f64, cause: DivergenceCause },
    #[error(transparent)]
    Seeker(#[from] SeekerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    /// 1-based iteration index.
    pub index: usize,
    pub gains_used: GainSet,
    /// Dither offsets at the start of the iteration, before rejection and clamping.
    pub beta: [f64; BETA_LEN],
    pub q: f64,
    pub z_terminal: ErrorVector,
    /// Per-component maxima of `|z(t)|` over the episode.
    pub max_abs_z: [f64; 3],
    /// Maximum Euclidean norm of `z(t)` over the episode.
    pub max_z_norm: f64,
    pub position_range_violated: bool,
    pub in_invariant_set_at_tf: bool,
    /// The learned gains were not Hurwitz and the previous gains were reused.
    pub hurwitz_rejected: bool,
    /// Amplitude schedule stage after this iteration's update.
    pub amp_stage: usize,
    pub terminal_state: PlantState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub record: IterationRecord,
    pub telemetry: Vec<TelemetrySample>,
}

/// Simulates one iteration from the reset state with frozen `gains`.
pub fn run_episode(config: &CampaignConfig, gains: GainSet, iteration: usize) -> Result<Episode, HarnessError> {
    let (telemetry, record) = run_episode_partial(config, gains, iteration);
    Ok(Episode { record: record?, telemetry })
}

/// Like [`run_episode`], but hands back the telemetry recorded up to a failure.
pub fn run_episode_partial(
    config: &CampaignConfig,
    gains: GainSet,
    iteration: usize,
) -> (Vec<TelemetrySample>, Result<IterationRecord, HarnessError>) {
    let mut telemetry = Vec::new();
    let record = simulate_into(config, gains, iteration, &mut telemetry);
    (telemetry, record)
}

fn simulate_into(
    config: &CampaignConfig,
    gains: GainSet,
    iteration: usize,
    telemetry: &mut Vec<TelemetrySample>,
) -> Result<IterationRecord, HarnessError> {
    let diverged = |t: f64, cause: DivergenceCause| HarnessError::EpisodeDiverged { iteration, t, cause };
    let field = closed_loop_field(
        config.params,
        config.disturbance,
        config.bounds,
        gains,
        config.reference,
        config.acceleration_source,
    )
    .map_err(|e| diverged(0.0, e.into()))?;
    let x0 = config.initial_state()?;
    let cfg = config.integration();

    telemetry.reserve(cfg.steps() + 1);
    let mut max_abs_z = [0.0f64; 3];
    let mut max_z_norm = 0.0f64;
    let mut range_violated = false;
    let mut ceiling_hit: Option<(f64, f64)> = None;

    let result = integrate(&field, x0.to_vector(), &cfg, |t, x| {
        let state = PlantState::from_vector(x);
        let out = field.control_at(t, &state)?;
        let z = out.z;
        for (m, v) in max_abs_z.iter_mut().zip([z.z1, z.z2, z.z3]) {
            *m = m.max(v.abs());
        }
        let norm = z.norm();
        max_z_norm = max_z_norm.max(norm);
        range_violated |= !state.in_range(&config.params);
        telemetry.push(TelemetrySample {
            t,
            state,
            reference: field.reference.sample(t),
            u: out.u,
            z,
            in_invariant_set: out.in_invariant_set,
        });
        if norm > config.z_ceiling {
            ceiling_hit = Some((t, norm));
            return Err(ControlError::NonFiniteControl);
        }
        Ok(())
    });

    if let Err(e) = result {
        return Err(match (e, ceiling_hit) {
            (_, Some((t, norm))) => diverged(t, DivergenceCause::CeilingExceeded { norm, ceiling: config.z_ceiling }),
            (IntegrationError::NonFiniteState { t }, _) => diverged(t, DivergenceCause::NonFiniteState),
            (IntegrationError::Field { t, source }, _) => diverged(t, source.into()),
            (IntegrationError::InvalidConfig(msg), _) => HarnessError::InvalidConfig(vec![msg.to_string()]),
        });
    }

    let last = *telemetry.last().expect("integration records the initial point");
    Ok(IterationRecord {
        index: iteration,
        gains_used: gains,
        beta: [0.0; BETA_LEN],
        q: evaluate_cost(&config.cost, telemetry),
        z_terminal: last.z,
        max_abs_z,
        max_z_norm,
        position_range_violated: range_violated,
        in_invariant_set_at_tf: last.in_invariant_set,
        hurwitz_rejected: false,
        amp_stage: 0,
        terminal_state: last.state,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignResult {
    pub records: Vec<IterationRecord>,
    pub bank: EsBank,
    /// Offsets the next iteration would use, `δK̂(N t_f)`.
    pub final_beta: Vec<f64>,
    pub q_first: Option<f64>,
}

impl CampaignResult {
    pub fn final_record(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn hurwitz_rejections(&self) -> usize {
        self.records.iter().filter(|r| r.hurwitz_rejected).count()
    }

    pub fn range_violations(&self) -> usize {
        self.records.iter().filter(|r| r.position_range_violated).count()
    }

    /// Mean cost over the last third of the iterations (at least one).
    pub fn mean_q_last_third(&self) -> Option<f64> {
        let n = self.records.len();
        if n == 0 {
            return None;
        }
        let tail = (n / 3).max(1);
        Some(self.records[n - tail..].iter().map(|r| r.q).sum::<f64>() / tail as f64)
    }
}

/// A campaign that stopped early, with everything recorded before the failure.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("campaign aborted after {} completed iterations: {source}", .partial.records.len())]
pub struct CampaignError {
    pub partial: Box<CampaignResult>,
    pub source: HarnessError,
}

pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignResult, CampaignError> {
    run_campaign_with(config, |e| e.record.q, |_| {})
}

/// Runs the learning loop with a custom cost and a per-episode hook.
///
/// `cost` maps a finished episode to its `Q` (the configured weights are
/// already applied in `episode.record.q`). `on_episode` sees each episode with
/// its final record before the telemetry is dropped.
pub fn run_campaign_with<C, O>(config: &CampaignConfig, mut cost: C, mut on_episode: O) -> Result<CampaignResult, CampaignError>
where
    C: FnMut(&Episode) -> f64,
    O: FnMut(&Episode),
{
    let mut bank = EsBank { channels: config.channels.clone(), stage: 0 };
    let mut result = CampaignResult { records: Vec::new(), bank: bank.clone(), final_beta: Vec::new(), q_first: None };
    let abort = |result: CampaignResult, source: HarnessError| CampaignError { partial: Box::new(result), source };

    if let Err(e) = config.validate() {
        return Err(abort(result, e));
    }
    let t_f = config.reference.t_f;
    let mut accepted = config.nominal_gains;

    for index in 1..=config.iterations {
        let t_start = (index - 1) as f64 * t_f;
        let t_end = index as f64 * t_f;
        let deltas = bank.deltas_at(t_start);
        let mut beta = [0.0; BETA_LEN];
        beta.copy_from_slice(&deltas[..BETA_LEN]);

        let candidate = config.gains_from_beta(&beta);
        let rejected = !(candidate.is_finite() && is_hurwitz(&candidate));
        if !rejected {
            accepted = candidate;
        }

        let mut episode = match run_episode(config, accepted, index) {
            Ok(e) => e,
            Err(e) => {
                result.bank = bank;
                return Err(abort(result, e));
            }
        };
        let q = cost(&episode);
        let q_first = *result.q_first.get_or_insert(q);
        // A zero first cost leaves nothing to scale the amplitudes by.
        if q_first > 0.0 && !config.schedule.stages.is_empty() {
            if let Err(e) = schedule_amplitudes(&mut bank, &config.schedule, q, q_first) {
                result.bank = bank;
                return Err(abort(result, e.into()));
            }
        }
        bank.advance(q, t_start, t_end);

        let record = &mut episode.record;
        record.q = q;
        record.beta = beta;
        record.hurwitz_rejected = rejected;
        record.amp_stage = bank.stage;
        on_episode(&episode);
        result.records.push(episode.record);
    }

    result.final_beta = bank.deltas_at(config.iterations as f64 * t_f);
    result.bank = bank;
    Ok(result)
}
