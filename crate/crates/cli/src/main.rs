use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mes_autotune_core::config::{load_config, ConfigError, RunConfig};
use mes_autotune_core::harness::{run_campaign_with, run_episode_partial, HarnessError};
use mes_autotune_core::report::{
    campaign_csv, episode_csv, to_json, write_atomic, LearnSummary, SimulateSummary,
};

const EXIT_PARSE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "mes-autotune", version, about = "Extremum-seeking gain tuning for an electromagnetic actuator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config file and list every problem found.
    Validate { config: PathBuf },
    /// Run one episode with the nominal gains.
    Simulate {
        config: PathBuf,
        /// Accepted for symmetry with `learn`; a single episode never updates gains.
        #[arg(long)]
        no_learning: bool,
        #[arg(long, env = "MES_AUTOTUNE_OUT")]
        out: Option<PathBuf>,
    },
    /// Run a learning campaign.
    Learn {
        config: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        /// Also write every episode's telemetry to episodes/NNN.csv.
        #[arg(long)]
        keep_episodes: bool,
        #[arg(long, env = "MES_AUTOTUNE_OUT")]
        out: Option<PathBuf>,
    },
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    lines: Vec<String>,
}

impl Failure {
    fn new(code: u8, line: impl Into<String>) -> Self {
        Self { code, lines: vec![line.into()] }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Invalid(lines) => Self { code: EXIT_INVALID, lines },
            other => Self::new(EXIT_PARSE, other.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(EXIT_PARSE, format!("cannot write {}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { config } => validate(&config),
        Command::Simulate { config, no_learning, out } => simulate(&config, no_learning, out),
        Command::Learn { config, iterations, keep_episodes, out } => learn(&config, iterations, keep_episodes, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            for line in &f.lines {
                eprintln!("error: {line}");
            }
            ExitCode::from(f.code)
        }
    }
}

fn validate(path: &Path) -> Result<(), Failure> {
    load_config(path)?;
    println!("{}: ok", path.display());
    Ok(())
}

fn output_dir(flag: Option<PathBuf>, run: &RunConfig) -> Result<PathBuf, Failure> {
    let dir = flag.or_else(|| run.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    Ok(dir)
}

fn write(path: PathBuf, contents: &[u8]) -> Result<(), Failure> {
    write_atomic(&path, contents).map_err(|e| io_failure(&path, e))
}

fn simulate(path: &Path, no_learning: bool, out: Option<PathBuf>) -> Result<(), Failure> {
    let run = load_config(path)?;
    let dir = output_dir(out, &run)?;
    let gains = run.campaign.nominal_gains;
    let (telemetry, record) = run_episode_partial(&run.campaign, gains, 1);

    write(dir.join("episode.csv"), &episode_csv(&telemetry, run.stride))?;
    let summary = SimulateSummary::from_record(gains, no_learning, record.as_ref().map_err(|e| e.to_string()));
    write(dir.join("summary.json"), &to_json(&summary))?;

    match record {
        Ok(r) => {
            println!(
                "Q = {:e}, z(t_f) = ({:e}, {:e}, {:e}), landing velocity {:e} m/s",
                r.q, r.z_terminal.z1, r.z_terminal.z2, r.z_terminal.z3, r.terminal_state.v
            );
            Ok(())
        }
        Err(e) => Err(runtime_failure(e)),
    }
}

fn runtime_failure(e: HarnessError) -> Failure {
    let code = match e {
        HarnessError::InvalidConfig(_) => EXIT_INVALID,
        _ => EXIT_DIVERGED,
    };
    Failure::new(code, e.to_string())
}

fn learn(path: &Path, iterations: Option<usize>, keep_episodes: bool, out: Option<PathBuf>) -> Result<(), Failure> {
    let mut run = load_config(path)?;
    if let Some(n) = iterations {
        run.campaign.iterations = n;
        let v = run.violations();
        if !v.is_empty() {
            return Err(Failure { code: EXIT_INVALID, lines: v });
        }
    }
    let dir = output_dir(out, &run)?;
    let episodes_dir = dir.join("episodes");
    if keep_episodes {
        fs::create_dir_all(&episodes_dir).map_err(|e| io_failure(&episodes_dir, e))?;
    }

    let mut write_error = None;
    let outcome = run_campaign_with(
        &run.campaign,
        |ep| ep.record.q,
        |ep| {
            eprintln!("iteration {:>3}: Q = {:e}", ep.record.index, ep.record.q);
            if keep_episodes && write_error.is_none() {
                let file = episodes_dir.join(format!("{:03}.csv", ep.record.index));
                write_error = write(file, &episode_csv(&ep.telemetry, run.stride)).err();
            }
        },
    );
    if let Some(f) = write_error {
        return Err(f);
    }

    let (result, error) = match outcome {
        Ok(r) => (r, None),
        Err(e) => (*e.partial, Some(e.source)),
    };
    write(dir.join("campaign.csv"), &campaign_csv(&result.records))?;
    let summary = LearnSummary::new(run.campaign.iterations, &result, error.as_ref().map(|e| e.to_string()));
    write(dir.join("summary.json"), &to_json(&summary))?;

    match error {
        None => {
            if let (Some(first), Some(last)) = (summary.q_first, summary.q_final) {
                println!(
                    "{} iterations, Q(1) = {first:e}, Q(N) = {last:e}, {} Hurwitz rejection(s)",
                    summary.iterations_completed, summary.flags.hurwitz_rejections
                );
            }
            Ok(())
        }
        Some(e) => Err(runtime_failure(e)),
    }
}
