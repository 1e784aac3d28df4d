//! CSV telemetry and JSON summaries.
//!
//! Numbers are written in Rust's shortest round-trip form, so reading a file
//! back reproduces every value bit for bit. Files are written to a temporary
//! sibling and renamed into place.

use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;

use crate::controller::ErrorVector;
use crate::harness::{CampaignResult, IterationRecord, TelemetrySample};
use crate::stability::GainSet;

pub const EPISODE_HEADER: [&str; 12] =
    ["t", "x_a", "v", "i", "x_ref", "v_ref", "a_ref", "u", "z1", "z2", "z3", "in_invariant_set"];

pub const CAMPAIGN_HEADER: [&str; 11] =
    ["I", "Q", "K1", "K2", "K3", "k_robust", "z1_tf", "z2_tf", "z3_tf", "amp_stage", "hurwitz_rejected"];

/// Shortest decimal string that parses back to the same `f64`.
pub fn format_number(x: f64) -> String {
    format!("{x:?}")
}

pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn to_csv<I>(header: &[&str], rows: I) -> Vec<u8>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    // Writing into memory cannot fail.
    w.write_record(header).expect("in-memory csv write");
    for row in rows {
        w.write_record(&row).expect("in-memory csv write");
    }
    w.into_inner().expect("in-memory csv flush")
}

/// Every `stride`-th grid point of an episode, starting with the first.
pub fn episode_csv(telemetry: &[TelemetrySample], stride: usize) -> Vec<u8> {
    let stride = stride.max(1);
    to_csv(
        &EPISODE_HEADER,
        telemetry.iter().step_by(stride).map(|s| {
            let mut row: Vec<String> = [
                s.t,
                s.state.x_a,
                s.state.v,
                s.state.i,
                s.reference.pos,
                s.reference.vel,
                s.reference.acc,
                s.u,
                s.z.z1,
                s.z.z2,
                s.z.z3,
            ]
            .into_iter()
            .map(format_number)
            .collect();
            row.push(s.in_invariant_set.to_string());
            row
        }),
    )
}

pub fn campaign_csv(records: &[IterationRecord]) -> Vec<u8> {
    to_csv(
        &CAMPAIGN_HEADER,
        records.iter().map(|r| {
            let g = &r.gains_used;
            let z = &r.z_terminal;
            let mut row = vec![r.index.to_string()];
            row.extend([r.q, g.k1, g.k2, g.k3, g.k_robust, z.z1, z.z2, z.z3].into_iter().map(format_number));
            row.push(r.amp_stage.to_string());
            row.push(r.hurwitz_rejected.to_string());
            row
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainsJson {
    #[serde(rename = "K1")]
    pub k1: f64,
    #[serde(rename = "K2")]
    pub k2: f64,
    #[serde(rename = "K3")]
    pub k3: f64,
    pub k_robust: f64,
}

impl From<GainSet> for GainsJson {
    fn from(g: GainSet) -> Self {
        Self { k1: g.k1, k2: g.k2, k3: g.k3, k_robust: g.k_robust }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorsJson {
    pub z1: f64,
    pub z2: f64,
    pub z3: f64,
}

impl From<ErrorVector> for ErrorsJson {
    fn from(z: ErrorVector) -> Self {
        Self { z1: z.z1, z2: z.z2, z3: z.z3 }
    }
}

impl From<[f64; 3]> for ErrorsJson {
    fn from(z: [f64; 3]) -> Self {
        Self { z1: z[0], z2: z[1], z3: z[2] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateSummary {
    pub command: &'static str,
    /// `--no-learning` was passed. Single episodes never learn either way.
    pub no_learning: bool,
    pub gains: GainsJson,
    #[serde(rename = "Q")]
    pub q: Option<f64>,
    pub terminal_errors: Option<ErrorsJson>,
    /// Armature velocity at `t_f`, m/s.
    pub landing_velocity: Option<f64>,
    pub max_abs_z: Option<ErrorsJson>,
    pub position_range_violated: Option<bool>,
    pub in_invariant_set_at_tf: Option<bool>,
    pub diverged: bool,
    pub error: Option<String>,
}

impl SimulateSummary {
    pub fn from_record(gains: GainSet, no_learning: bool, record: Result<&IterationRecord, String>) -> Self {
        let (r, error) = match record {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e)),
        };
        Self {
            command: "simulate",
            no_learning,
            gains: gains.into(),
            q: r.map(|r| r.q),
            terminal_errors: r.map(|r| r.z_terminal.into()),
            landing_velocity: r.map(|r| r.terminal_state.v),
            max_abs_z: r.map(|r| r.max_abs_z.into()),
            position_range_violated: r.map(|r| r.position_range_violated),
            in_invariant_set_at_tf: r.map(|r| r.in_invariant_set_at_tf),
            diverged: error.is_some(),
            error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnFlags {
    pub diverged: bool,
    pub hurwitz_rejections: usize,
    pub position_range_violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnSummary {
    pub command: &'static str,
    pub iterations_requested: usize,
    pub iterations_completed: usize,
    #[serde(rename = "Q_first")]
    pub q_first: Option<f64>,
    #[serde(rename = "Q_final")]
    pub q_final: Option<f64>,
    #[serde(rename = "Q_mean_last_third")]
    pub q_mean_last_third: Option<f64>,
    /// Gains used in the last completed iteration.
    pub final_gains: Option<GainsJson>,
    pub terminal_errors: Option<ErrorsJson>,
    pub final_amp_stage: Option<usize>,
    pub flags: LearnFlags,
    pub error: Option<String>,
}

impl LearnSummary {
    pub fn new(requested: usize, result: &CampaignResult, error: Option<String>) -> Self {
        let last = result.final_record();
        Self {
            command: "learn",
            iterations_requested: requested,
            iterations_completed: result.records.len(),
            q_first: result.records.first().map(|r| r.q),
            q_final: last.map(|r| r.q),
            q_mean_last_third: result.mean_q_last_third(),
            final_gains: last.map(|r| r.gains_used.into()),
            terminal_errors: last.map(|r| r.z_terminal.into()),
            final_amp_stage: last.map(|r| r.amp_stage),
            flags: LearnFlags {
                diverged: error.is_some(),
                hurwitz_rejections: result.hurwitz_rejections(),
                position_range_violated: result.range_violations() > 0,
            },
            error,
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("summary types serialize");
    out.push(b'\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actuator::PlantState;
    use crate::seeker::EsBank;
    use crate::trajectory::ReferenceSample;

    fn sample(k: usize) -> TelemetrySample {
        TelemetrySample {
            t: k as f64 * 1e-5,
            state: PlantState::new(1e-5, 0.1, 0.5),
            reference: ReferenceSample { pos: 0.0, vel: 0.0, acc: 0.0, jerk: 0.03 },
            u: -2.5,
            z: ErrorVector { z1: 1e-5, z2: 1e-4, z3: 0.0 },
            in_invariant_set: k.is_multiple_of(2),
        }
    }

    fn record(index: usize, q: f64) -> IterationRecord {
        IterationRecord {
            index,
            gains_used: GainSet::actuator_nominal(),
            beta: [0.0; 4],
            q,
            z_terminal: ErrorVector { z1: -4.87e-4, z2: 1.0 / 3.0, z3: 0.0 },
            max_abs_z: [0.0; 3],
            max_z_norm: 0.0,
            position_range_violated: false,
            in_invariant_set_at_tf: true,
            hurwitz_rejected: index == 2,
            amp_stage: 0,
            terminal_state: PlantState::default(),
        }
    }

    #[test]
    fn numbers_round_trip() {
        for x in [0.0, -0.0, 1e-5, 1.0 / 3.0, 158e3, f64::MIN_POSITIVE, 1e300, -7.53] {
            let s = format_number(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(format_number(0.5), "0.5");
        assert_eq!(format_number(1e-5), "1e-5");
    }

    #[test]
    fn episode_rows_follow_stride() {
        let telemetry: Vec<_> = (0..=100).map(sample).collect();
        let text = String::from_utf8(episode_csv(&telemetry, 10)).unwrap();
        let lines: Vec<&str> = text.split("\r\n").filter(|l| !l.is_empty()).collect();
        assert_eq!(lines.len(), 1 + 11);
        assert_eq!(lines[0], EPISODE_HEADER.join(","));
        assert_eq!(lines[1], "0.0,1e-5,0.1,0.5,0.0,0.0,0.0,-2.5,1e-5,0.0001,0.0,true");
        let rows = String::from_utf8(episode_csv(&telemetry, 7)).unwrap().matches("\r\n").count();
        assert_eq!(rows, 1 + 1 + 100 / 7);
    }

    #[test]
    fn campaign_rows() {
        let text = String::from_utf8(campaign_csv(&[record(1, 2.0), record(2, 1.0)])).unwrap();
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>(), CAMPAIGN_HEADER);
        let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(&rows[1][0], "2");
        assert_eq!(rows[1][7].parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(&rows[1][10], "true");
    }

    #[test]
    fn learn_summary_keys_are_ordered() {
        let result = CampaignResult {
            records: vec![record(1, 3.0), record(2, 2.0), record(3, 1.0)],
            bank: EsBank { channels: vec![], stage: 0 },
            final_beta: vec![],
            q_first: Some(3.0),
        };
        let s = LearnSummary::new(3, &result, None);
        assert_eq!(s.q_mean_last_third, Some(1.0));
        assert_eq!(s.flags.hurwitz_rejections, 1);
        let text = String::from_utf8(to_json(&s)).unwrap();
        let keys = ["\"command\"", "\"Q_first\"", "\"Q_final\"", "\"Q_mean_last_third\"", "\"final_gains\"", "\"flags\""];
        let positions: Vec<usize> = keys.iter().map(|k| text.find(k).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{text}");
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
