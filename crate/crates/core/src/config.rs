//! Run configuration file: JSON with unit-tagged keys, resolved to SI.
//!
//! Every section and field is optional; omitted values take the actuator
//! defaults. Quantities that are commonly quoted in millimetres accept either
//! an `_m` or an `_mm` key (never both). Unknown keys are rejected.

// Field names mirror the unit-tagged JSON keys.
#![allow(non_snake_case)]

use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use serde::Deserialize;
use thiserror::Error;

use crate::actuator::{PlantParams, TrueDisturbance, UncertaintyBounds};
use crate::controller::AccelerationSource;
use crate::harness::{default_channels, CampaignConfig, CostWeights, InitialConditions};
use crate::seeker::{AmplitudeSchedule, EsChannel, ScheduleStage};
use crate::stability::GainSet;
use crate::trajectory::build_quintic;

pub const DEFAULT_STRIDE: usize = 10;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{} configuration error(s):\n{}", .0.len(), .0.join("\n"))]
    Invalid(Vec<String>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    #[serde(default)]
    pub plant: PlantSection,
    #[serde(default)]
    pub disturbance: DisturbanceSection,
    #[serde(default)]
    pub bounds: BoundsSection,
    #[serde(default)]
    pub reference: ReferenceSection,
    #[serde(default)]
    pub gains: GainsSection,
    #[serde(default)]
    pub es: EsSection,
    #[serde(default)]
    pub cost: CostSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub mass_kg: Option<f64>,
    pub resistance_ohm: Option<f64>,
    pub eta_N_s_per_m: Option<f64>,
    pub x0_m: Option<f64>,
    pub x0_mm: Option<f64>,
    pub k_spring_N_per_m: Option<f64>,
    pub k_spring_N_per_mm: Option<f64>,
    pub a_coil_N_m2_per_A2: Option<f64>,
    pub b_coil_m: Option<f64>,
    pub b_coil_mm: Option<f64>,
}

/// Realized parameter error. Absolute values or fractions of the nominal value.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSection {
    pub delta_k_N_per_m: Option<f64>,
    pub delta_k_N_per_mm: Option<f64>,
    pub delta_k_fraction: Option<f64>,
    pub delta_eta_N_s_per_m: Option<f64>,
    pub delta_eta_fraction: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub delta_k_max_N_per_m: Option<f64>,
    pub delta_k_max_N_per_mm: Option<f64>,
    pub delta_k_max_fraction: Option<f64>,
    pub delta_eta_max_N_s_per_m: Option<f64>,
    pub delta_eta_max_fraction: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    pub t_f_s: Option<f64>,
    pub x_f_m: Option<f64>,
    pub x_f_mm: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    #[serde(rename = "K1")]
    pub k1: Option<f64>,
    #[serde(rename = "K2")]
    pub k2: Option<f64>,
    #[serde(rename = "K3")]
    pub k3: Option<f64>,
    pub k_robust: Option<f64>,
    pub k_robust_min: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EsSection {
    /// Exactly four entries in the order K1, K2, K3, k_robust.
    pub channels: Option<Vec<ChannelEntry>>,
    pub schedule: Option<Vec<StageEntry>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelEntry {
    pub omega_rad_s: f64,
    pub amplitude: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageEntry {
    pub cost_fraction: f64,
    pub factors: Vec<f64>,
    #[serde(default = "yes")]
    pub scale_with_first_cost: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    #[default]
    Terminal,
    Integral,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum WeightValue {
    Scalar(f64),
    Matrix([[f64; 3]; 3]),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    #[serde(default)]
    pub mode: CostMode,
    #[serde(rename = "C1")]
    pub c1: Option<WeightValue>,
    #[serde(rename = "C2")]
    pub c2: Option<f64>,
    #[serde(rename = "C3")]
    pub c3: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt_s: Option<f64>,
    pub iterations: Option<usize>,
    pub stride: Option<usize>,
    pub acceleration_source: Option<AccelerationSource>,
    pub z_ceiling: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub z1_m: Option<f64>,
    pub z1_mm: Option<f64>,
    pub z2_m_per_s: Option<f64>,
    pub z2_mm_per_s: Option<f64>,
    pub i0_A: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// A fully resolved run: the campaign plus output options.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub campaign: CampaignConfig,
    pub stride: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { campaign: CampaignConfig::default(), stride: DEFAULT_STRIDE, output_dir: None }
    }
}

pub fn parse_config(text: &str) -> Result<RunConfigFile, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: strip_position(&e.to_string()),
    })
}

/// serde_json appends " at line L column C"; the position is reported separately.
fn strip_position(message: &str) -> String {
    match message.rfind(" at line ") {
        Some(k) => message[..k].to_string(),
        None => message.to_string(),
    }
}

/// Reads, parses, resolves and validates a config file.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let file = parse_config(&text)?;
    let run = file.resolve()?;
    let violations = run.violations();
    if violations.is_empty() {
        Ok(run)
    } else {
        Err(ConfigError::Invalid(violations))
    }
}

impl RunConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = self.campaign.violations();
        if self.stride == 0 {
            out.push("sim.stride must be at least 1".into());
        }
        out
    }
}

/// Picks one of several alternative keys, each with its own scale to SI.
fn one_of(errors: &mut Vec<String>, options: &[(&str, Option<f64>, f64)]) -> Option<f64> {
    let given: Vec<_> = options.iter().filter(|(_, v, _)| v.is_some()).collect();
    if given.len() > 1 {
        let names: Vec<&str> = given.iter().map(|(n, _, _)| *n).collect();
        errors.push(format!("conflicting keys {}: give only one", names.join(", ")));
    }
    given.first().and_then(|(_, v, scale)| v.map(|v| v * scale))
}

impl RunConfigFile {
    /// Applies defaults and unit conversions. Structural problems (conflicting
    /// keys, wrong shapes) are reported here; range checks happen in
    /// [`RunConfig::violations`].
    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let mut errors = Vec::new();
        let d = PlantParams::default();
        let p = &self.plant;
        let r = &self.reference;

        let x_f = one_of(&mut errors, &[("reference.x_f_m", r.x_f_m, 1.0), ("reference.x_f_mm", r.x_f_mm, 1e-3)]);
        let params = PlantParams {
            mass: p.mass_kg.unwrap_or(d.mass),
            resistance: p.resistance_ohm.unwrap_or(d.resistance),
            eta_nominal: p.eta_N_s_per_m.unwrap_or(d.eta_nominal),
            x0_spring: one_of(&mut errors, &[("plant.x0_m", p.x0_m, 1.0), ("plant.x0_mm", p.x0_mm, 1e-3)])
                .unwrap_or(d.x0_spring),
            k_nominal: one_of(
                &mut errors,
                &[("plant.k_spring_N_per_m", p.k_spring_N_per_m, 1.0), ("plant.k_spring_N_per_mm", p.k_spring_N_per_mm, 1e3)],
            )
            .unwrap_or(d.k_nominal),
            a_coil: p.a_coil_N_m2_per_A2.unwrap_or(d.a_coil),
            b_coil: one_of(&mut errors, &[("plant.b_coil_m", p.b_coil_m, 1.0), ("plant.b_coil_mm", p.b_coil_mm, 1e-3)])
                .unwrap_or(d.b_coil),
            x_f: x_f.unwrap_or(d.x_f),
        };

        let b = &self.bounds;
        let default_bounds = UncertaintyBounds::ten_percent_of(&params);
        let bounds = UncertaintyBounds {
            delta_k_max: one_of(
                &mut errors,
                &[
                    ("bounds.delta_k_max_N_per_m", b.delta_k_max_N_per_m, 1.0),
                    ("bounds.delta_k_max_N_per_mm", b.delta_k_max_N_per_mm, 1e3),
                    ("bounds.delta_k_max_fraction", b.delta_k_max_fraction, params.k_nominal),
                ],
            )
            .unwrap_or(default_bounds.delta_k_max),
            delta_eta_max: one_of(
                &mut errors,
                &[
                    ("bounds.delta_eta_max_N_s_per_m", b.delta_eta_max_N_s_per_m, 1.0),
                    ("bounds.delta_eta_max_fraction", b.delta_eta_max_fraction, params.eta_nominal),
                ],
            )
            .unwrap_or(default_bounds.delta_eta_max),
        };

        let dist = &self.disturbance;
        let disturbance = TrueDisturbance {
            delta_k: one_of(
                &mut errors,
                &[
                    ("disturbance.delta_k_N_per_m", dist.delta_k_N_per_m, 1.0),
                    ("disturbance.delta_k_N_per_mm", dist.delta_k_N_per_mm, 1e3),
                    ("disturbance.delta_k_fraction", dist.delta_k_fraction, params.k_nominal),
                ],
            )
            .unwrap_or(bounds.delta_k_max),
            delta_eta: one_of(
                &mut errors,
                &[
                    ("disturbance.delta_eta_N_s_per_m", dist.delta_eta_N_s_per_m, 1.0),
                    ("disturbance.delta_eta_fraction", dist.delta_eta_fraction, params.eta_nominal),
                ],
            )
            .unwrap_or(-bounds.delta_eta_max),
        };

        let t_f = r.t_f_s.unwrap_or(1.0);
        let reference = match build_quintic(t_f, params.x_f) {
            Ok(spec) => Some(spec),
            Err(e) => {
                errors.push(format!("reference: {e}"));
                None
            }
        };

        let g = &self.gains;
        let dg = GainSet::actuator_nominal();
        let nominal_gains = GainSet {
            k1: g.k1.unwrap_or(dg.k1),
            k2: g.k2.unwrap_or(dg.k2),
            k3: g.k3.unwrap_or(dg.k3),
            k_robust: g.k_robust.unwrap_or(dg.k_robust),
        };

        let channels = match &self.es.channels {
            None => default_channels(&nominal_gains),
            Some(entries) => {
                let nominal = [nominal_gains.k1, nominal_gains.k2, nominal_gains.k3, nominal_gains.k_robust];
                if entries.len() != nominal.len() {
                    errors.push(format!(
                        "es.channels must list 4 channels (K1, K2, K3, k_robust), got {}",
                        entries.len()
                    ));
                }
                entries
                    .iter()
                    .zip(nominal)
                    .map(|(e, n)| EsChannel::new(n, e.omega_rad_s, e.amplitude))
                    .collect()
            }
        };
        let schedule = match &self.es.schedule {
            None => AmplitudeSchedule::halves_then_thirds(),
            Some(stages) => AmplitudeSchedule {
                stages: stages
                    .iter()
                    .map(|s| ScheduleStage {
                        cost_fraction: s.cost_fraction,
                        factors: s.factors.clone(),
                        scale_with_first_cost: s.scale_with_first_cost,
                    })
                    .collect(),
            },
        };

        let cost = self.cost.resolve(&mut errors);

        let i = &self.initial;
        let di = InitialConditions::default();
        let initial = InitialConditions {
            z1: one_of(&mut errors, &[("initial.z1_m", i.z1_m, 1.0), ("initial.z1_mm", i.z1_mm, 1e-3)]).unwrap_or(di.z1),
            z2: one_of(
                &mut errors,
                &[("initial.z2_m_per_s", i.z2_m_per_s, 1.0), ("initial.z2_mm_per_s", i.z2_mm_per_s, 1e-3)],
            )
            .unwrap_or(di.z2),
            i0: i.i0_A,
        };

        let base = CampaignConfig::default();
        let s = &self.sim;
        if !errors.is_empty() {
            return Err(ConfigError::Invalid(errors));
        }
        let campaign = CampaignConfig {
            params,
            disturbance,
            bounds,
            reference: reference.expect("reference errors are reported above"),
            nominal_gains,
            k_robust_min: g.k_robust_min.unwrap_or(base.k_robust_min),
            channels,
            schedule,
            cost: cost.expect("cost errors are reported above"),
            iterations: s.iterations.unwrap_or(base.iterations),
            dt: s.dt_s.unwrap_or(base.dt),
            initial,
            acceleration_source: s.acceleration_source.unwrap_or(base.acceleration_source),
            z_ceiling: s.z_ceiling.unwrap_or(base.z_ceiling),
        };
        Ok(RunConfig { campaign, stride: s.stride.unwrap_or(DEFAULT_STRIDE), output_dir: self.output.dir.clone() })
    }
}

impl CostSection {
    fn resolve(&self, errors: &mut Vec<String>) -> Option<CostWeights> {
        let before = errors.len();
        let weights = match self.mode {
            CostMode::Terminal => {
                let CostWeights::Terminal { c1, c2, c3 } = CostWeights::actuator_default() else {
                    unreachable!()
                };
                let c1 = match &self.c1 {
                    None => c1,
                    Some(WeightValue::Scalar(v)) => *v,
                    Some(WeightValue::Matrix(_)) => {
                        errors.push("cost.C1 must be a number in terminal mode".into());
                        c1
                    }
                };
                CostWeights::Terminal { c1, c2: self.c2.unwrap_or(c2), c3: self.c3.unwrap_or(c3) }
            }
            CostMode::Integral => {
                if self.c3.is_some() {
                    errors.push("cost.C3 is not used in integral mode".into());
                }
                let state = match &self.c1 {
                    Some(WeightValue::Matrix(rows)) => Matrix3::from_fn(|r, c| rows[r][c]),
                    _ => {
                        errors.push("cost.C1 must be a 3x3 matrix in integral mode".into());
                        Matrix3::identity()
                    }
                };
                let input = self.c2.unwrap_or_else(|| {
                    errors.push("cost.C2 (input weight) is required in integral mode".into());
                    1.0
                });
                CostWeights::Integral { state, input }
            }
        };
        (errors.len() == before).then_some(weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str) -> RunConfig {
        parse_config(text).unwrap().resolve().unwrap()
    }

    #[test]
    fn empty_document_gives_defaults() {
        let run = resolve("{}");
        assert_eq!(run, RunConfig::default());
        assert!(run.violations().is_empty());
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let err = parse_config("{\n  \"plant\": {\n    \"mass\": 1.0\n  }\n}").unwrap_err();
        match err {
            ConfigError::Parse { line, column, message } => {
                assert_eq!(line, 3);
                assert!(column > 0);
                assert!(message.contains("unknown field `mass`"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_config("{\"extra\": 1}"), Err(ConfigError::Parse { line: 1, .. })));
    }

    #[test]
    fn syntax_errors_have_position() {
        match parse_config("{\n\"sim\": {\"dt_s\": }\n}").unwrap_err() {
            ConfigError::Parse { line, column, .. } => assert_eq!((line, column), (2, 17)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn millimetre_keys_convert_to_si() {
        let mm = resolve(r#"{"plant": {"k_spring_N_per_mm": 158, "x0_mm": 8}, "reference": {"x_f_mm": 0.5}}"#);
        let si = resolve(r#"{"plant": {"k_spring_N_per_m": 158000, "x0_m": 0.008}, "reference": {"x_f_m": 0.0005}}"#);
        assert_eq!(mm, si);
        assert_eq!(mm.campaign.params, PlantParams::default());
        let z = resolve(r#"{"initial": {"z1_mm": 0.01, "z2_mm_per_s": 0.1}}"#);
        assert!((z.campaign.initial.z1 - 1e-5).abs() <= 1e-20);
        assert!((z.campaign.initial.z2 - 1e-4).abs() <= 1e-19);
    }

    #[test]
    fn conflicting_unit_keys_are_reported() {
        let err = parse_config(r#"{"plant": {"k_spring_N_per_mm": 158, "k_spring_N_per_m": 158000}}"#)
            .unwrap()
            .resolve()
            .unwrap_err();
        match err {
            ConfigError::Invalid(v) => assert!(v[0].contains("plant.k_spring_N_per_m")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn disturbance_fractions_and_bounds() {
        let run = resolve(r#"{"disturbance": {"delta_k_fraction": -0.05, "delta_eta_N_s_per_m": 0.2}, "bounds": {"delta_eta_max_fraction": 0.5}}"#);
        let c = &run.campaign;
        assert!((c.disturbance.delta_k + 7900.0).abs() <= 1e-9);
        assert_eq!(c.disturbance.delta_eta, 0.2);
        assert!((c.bounds.delta_eta_max - 3.765).abs() <= 1e-12);
        // Unspecified disturbance follows the bounds.
        let run = resolve(r#"{"bounds": {"delta_k_max_N_per_m": 100, "delta_eta_max_N_s_per_m": 1}}"#);
        assert_eq!(run.campaign.disturbance, TrueDisturbance { delta_k: 100.0, delta_eta: -1.0 });
    }

    #[test]
    fn channels_follow_configured_nominal_gains() {
        let run = resolve(
            r#"{"gains": {"K1": -400}, "es": {"channels": [
                {"omega_rad_s": 7.5, "amplitude": 1}, {"omega_rad_s": 5.3, "amplitude": 2},
                {"omega_rad_s": 5.1, "amplitude": 3}, {"omega_rad_s": 6.1, "amplitude": 4}]}}"#,
        );
        let ch = &run.campaign.channels;
        assert_eq!(ch[0].nominal_value, -400.0);
        assert_eq!(ch.iter().map(|c| c.base_amplitude).collect::<Vec<_>>(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn wrong_channel_count_is_reported() {
        let err = parse_config(r#"{"es": {"channels": [{"omega_rad_s": 1, "amplitude": 1}]}}"#)
            .unwrap()
            .resolve()
            .unwrap_err();
        assert!(err.to_string().contains("4 channels"));
    }

    #[test]
    fn cost_modes() {
        let t = resolve(r#"{"cost": {"C3": 20}}"#);
        assert_eq!(t.campaign.cost, CostWeights::Terminal { c1: 500.0, c2: 500.0, c3: 20.0 });
        let i = resolve(r#"{"cost": {"mode": "integral", "C1": [[1,0,0],[0,2,0],[0,0,3]], "C2": 0.5}}"#);
        assert_eq!(i.campaign.cost, CostWeights::Integral { state: Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 2.0, 3.0)), input: 0.5 });
        let bad = parse_config(r#"{"cost": {"mode": "integral", "C1": 4}}"#).unwrap().resolve().unwrap_err();
        match bad {
            ConfigError::Invalid(v) => assert_eq!(v.len(), 2, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn range_problems_surface_as_violations() {
        let run = resolve(r#"{"gains": {"K1": 10}, "cost": {"C1": 0}, "sim": {"stride": 0}, "es": {"channels": [
            {"omega_rad_s": 1, "amplitude": 1}, {"omega_rad_s": 2, "amplitude": 1},
            {"omega_rad_s": 3, "amplitude": 1}, {"omega_rad_s": 9, "amplitude": 1}]}}"#);
        let v = run.violations();
        assert!(v.iter().any(|m| m.contains("not Hurwitz")), "{v:?}");
        assert!(v.iter().any(|m| m.contains("1 + 2 = 3")), "{v:?}");
        assert!(v.iter().any(|m| m.contains("C1")), "{v:?}");
        assert!(v.iter().any(|m| m.contains("stride")), "{v:?}");
    }

    #[test]
    fn sim_and_output_fields() {
        let run = resolve(r#"{"sim": {"dt_s": 1e-4, "iterations": 3, "stride": 5, "acceleration_source": "nominal"}, "output": {"dir": "out"}}"#);
        assert_eq!(run.campaign.dt, 1e-4);
        assert_eq!(run.campaign.iterations, 3);
        assert_eq!(run.stride, 5);
        assert_eq!(run.campaign.acceleration_source, AccelerationSource::Nominal);
        assert_eq!(run.output_dir, Some(PathBuf::from("out")));
    }
}
