use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const FAST_SIM: &str = r#""sim": {"dt_s": 1e-4, "iterations": 3, "stride": 10}"#;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mes-autotune"));
    cmd.env_remove("MES_AUTOTUNE_OUT");
    cmd
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn data_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn validate_accepts_empty_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", "{}");
    let o = run(bin().arg("validate").arg(&cfg));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("ok"));
}

#[test]
fn validate_reports_parse_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", "{\n  \"plant\": {\n    \"spring\": 1\n  }\n}");
    let o = run(bin().arg("validate").arg(&cfg));
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("line 3") && err.contains("column"), "{err}");
    assert!(err.contains("spring"), "{err}");
}

#[test]
fn validate_lists_each_violation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"gains": {"K1": 10}, "cost": {"C2": -1}, "es": {"channels": [
            {"omega_rad_s": 1, "amplitude": 1}, {"omega_rad_s": 2, "amplitude": 1},
            {"omega_rad_s": 3, "amplitude": 1}, {"omega_rad_s": 9, "amplitude": 1}]}}"#,
    );
    let o = run(bin().arg("validate").arg(&cfg));
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 3, "{err}");
    assert!(err.contains("not Hurwitz"));
    assert!(err.contains("1 + 2 = 3"));
    assert!(err.contains("C2"));
}

#[test]
fn missing_config_is_a_read_error() {
    let o = run(bin().args(["validate", "/nonexistent/config.json"]));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_writes_strided_episode_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &format!("{{{FAST_SIM}}}"));
    let out = dir.path().join("out");
    let o = run(bin().arg("simulate").arg(&cfg).arg("--no-learning").arg("--out").arg(&out));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let mut reader = csv::Reader::from_path(out.join("episode.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["t", "x_a", "v", "i", "x_ref", "v_ref", "a_ref", "u", "z1", "z2", "z3", "in_invariant_set"]);
    let rows = data_rows(&out.join("episode.csv"));
    assert_eq!(rows.len(), 1 + (1.0f64 / 1e-4 / 10.0).floor() as usize);
    assert_eq!(&rows[0][0], "0.0");

    let summary: Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["command"], "simulate");
    assert_eq!(summary["no_learning"], true);
    assert_eq!(summary["diverged"], false);
    assert!(summary["Q"].as_f64().unwrap() > 0.0);
    assert!(summary["landing_velocity"].as_f64().unwrap().is_finite());
}

#[test]
fn environment_overrides_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let from_config = dir.path().join("configured");
    let from_env = dir.path().join("env");
    let body = format!(r#"{{{FAST_SIM}, "output": {{"dir": "{}"}}}}"#, from_config.display());
    let cfg = write_config(dir.path(), "c.json", &body);
    let o = run(bin().arg("simulate").arg(&cfg).env("MES_AUTOTUNE_OUT", &from_env));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(from_env.join("episode.csv").exists());
    assert!(!from_config.exists());

    let o = run(bin().arg("simulate").arg(&cfg));
    assert_eq!(o.status.code(), Some(0));
    assert!(from_config.join("summary.json").exists());
}

#[test]
fn unit_suffixes_give_identical_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mm = write_config(dir.path(), "mm.json", &format!(r#"{{{FAST_SIM}, "plant": {{"k_spring_N_per_mm": 158}}}}"#));
    let si = write_config(dir.path(), "si.json", &format!(r#"{{{FAST_SIM}, "plant": {{"k_spring_N_per_m": 158000}}}}"#));
    for (cfg, out) in [(&mm, "a"), (&si, "b")] {
        let o = run(bin().arg("simulate").arg(cfg).arg("--out").arg(dir.path().join(out)));
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for file in ["episode.csv", "summary.json"] {
        assert_eq!(fs::read(dir.path().join("a").join(file)).unwrap(), fs::read(dir.path().join("b").join(file)).unwrap());
    }
}

#[test]
fn learn_writes_campaign_and_episodes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &format!("{{{FAST_SIM}}}"));
    let out = dir.path().join("out");
    let o = run(bin().arg("learn").arg(&cfg).args(["--iterations", "4", "--keep-episodes"]).arg("--out").arg(&out));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let rows = data_rows(&out.join("campaign.csv"));
    assert_eq!(rows.len(), 4);
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(row[0].parse::<usize>().unwrap(), k + 1);
        assert!(out.join("episodes").join(format!("{:03}.csv", k + 1)).exists());
    }

    // Every summary number comes back out of the campaign rows.
    let s: Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    let q: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(s["iterations_completed"], 4);
    assert_eq!(s["Q_first"].as_f64().unwrap(), q[0]);
    assert_eq!(s["Q_final"].as_f64().unwrap(), q[3]);
    assert_eq!(s["Q_mean_last_third"].as_f64().unwrap(), q[3]);
    let last = &rows[3];
    assert_eq!(s["final_gains"]["K1"].as_f64().unwrap(), last[2].parse::<f64>().unwrap());
    assert_eq!(s["terminal_errors"]["z2"].as_f64().unwrap(), last[7].parse::<f64>().unwrap());
    let rejected = rows.iter().filter(|r| &r[10] == "true").count();
    assert_eq!(s["flags"]["hurwitz_rejections"].as_u64().unwrap() as usize, rejected);
    assert_eq!(s["flags"]["diverged"], false);
}

#[test]
fn learn_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &format!("{{{FAST_SIM}}}"));
    for out in ["a", "b"] {
        let o = run(bin().arg("learn").arg(&cfg).arg("--out").arg(dir.path().join(out)));
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let a = fs::read(dir.path().join("a/campaign.csv")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b/campaign.csv")).unwrap());
    assert!(!a.is_empty());
}

#[test]
fn divergence_exits_three_and_keeps_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{"sim": {"dt_s": 1e-4, "iterations": 2, "z_ceiling": 0.01},
                   "disturbance": {"delta_k_fraction": -0.1, "delta_eta_fraction": 0.0}}"#;
    let cfg = write_config(dir.path(), "c.json", body);

    let out = dir.path().join("sim");
    let o = run(bin().arg("simulate").arg(&cfg).arg("--out").arg(&out));
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
    let rows = data_rows(&out.join("episode.csv"));
    assert!(!rows.is_empty() && rows.len() < 1001);
    let s: Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["diverged"], true);

    let out = dir.path().join("learn");
    let o = run(bin().arg("learn").arg(&cfg).arg("--out").arg(&out));
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(out.join("campaign.csv").exists());
    let s: Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["flags"]["diverged"], true);
    assert_eq!(s["iterations_completed"], 0);
}

#[test]
fn zero_iterations_flag_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", "{}");
    let o = run(bin().arg("learn").arg(&cfg).args(["--iterations", "0"]).arg("--out").arg(dir.path()));
    assert_eq!(o.status.code(), Some(2));
}
