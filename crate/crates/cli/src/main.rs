use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use procbench_core::control::ControllerKind;
use procbench_core::dataset::{read_dataset, stats, table_row, write_dataset};
use procbench_core::env::EnvKind;
use procbench_core::runner::{generate, rollout, write_mab_profiles, RunConfig, RunError, RunSpec};
use procbench_core::validate::{operating_point, validate_env};

#[derive(Parser)]
#[command(name = "procbench", version, about = "Process-control benchmark environments, baselines and offline datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run episodes and print a JSON summary.
    Rollout {
        #[command(flatten)]
        run: RunArgs,
        /// Also write the JSON summary to this file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// For mab: write downstream column profiles of episode 0 as CSV.
        #[arg(long)]
        profiles: Option<PathBuf>,
    },
    /// Generate episodes and store them as meta.json + data.csv.
    Dataset {
        #[command(flatten)]
        run: RunArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print summary statistics of a stored dataset.
    Stats {
        /// Dataset directory.
        dir: PathBuf,
        /// Print JSON instead of a tab-separated table.
        #[arg(long)]
        json: bool,
    },
    /// Print the steady operating point of a continuous plant.
    SteadyState {
        #[arg(long)]
        env: EnvKind,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Check environment invariants; all environments when --env is omitted.
    Validate {
        #[arg(long)]
        env: Option<EnvKind>,
        #[command(flatten)]
        config: ConfigArg,
    },
}

#[derive(Args)]
struct ConfigArg {
    /// JSON run configuration with optional `env`, `controller` and `bo` sections.
    #[arg(long, env = "PROCBENCH_CONFIG")]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig, RunError> {
        match &self.config {
            Some(p) => RunConfig::from_path(p),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    env: EnvKind,
    #[arg(long, default_value = "zero")]
    controller: ControllerKind,
    #[arg(long, default_value_t = 1)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for episode generation.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    config: ConfigArg,
}

impl RunArgs {
    fn spec(&self) -> Result<RunSpec, RunError> {
        let mut spec = RunSpec::new(self.env, self.controller, self.episodes, self.seed);
        spec.jobs = self.jobs;
        spec.config = self.config.load()?;
        spec.check()?;
        Ok(spec)
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), RunError> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn write_bo_log(dir: &Path, bo: &procbench_core::bayesopt::BoState) -> Result<(), RunError> {
    let file = BufWriter::new(fs::File::create(dir.join("bo_log.csv"))?);
    bo.write_log(file)?;
    Ok(())
}

/// Returns whether every check passed.
fn run(cli: Cli) -> Result<bool, RunError> {
    match cli.command {
        Command::Rollout { run, out, profiles } => {
            let spec = run.spec()?;
            let report = rollout(&spec)?;
            if let Some(path) = out {
                fs::write(path, serde_json::to_string_pretty(&report)? + "\n")?;
            }
            if let Some(path) = profiles {
                write_mab_profiles(&spec, BufWriter::new(fs::File::create(path)?))?;
            }
            print_json(&report)?;
        }
        Command::Dataset { run, out } => {
            let spec = run.spec()?;
            let g = generate(&spec)?;
            write_dataset(&g.dataset, &out)?;
            if let Some(bo) = &g.bo {
                write_bo_log(&out, bo)?;
            }
            print_json(&serde_json::json!({
                "out": out,
                "trajectory_count": g.dataset.meta.trajectory_count,
                "transitions": g.dataset.rows.len(),
                "reward_mean": g.dataset.meta.reward_mean,
                "reward_std": g.dataset.meta.reward_std,
            }))?;
        }
        Command::Stats { dir, json } => {
            let data = read_dataset(&dir)?;
            let s = stats(&data)?;
            if json {
                print_json(&serde_json::json!({ "meta": data.meta, "stats": s }))?;
            } else {
                let (header, row) = table_row(&data.meta, &s);
                println!("{header}\n{row}");
            }
        }
        Command::SteadyState { env, config } => {
            let cfg = config.load()?;
            print_json(&operating_point(env, cfg.env.as_ref(), &cfg.controller)?)?;
        }
        Command::Validate { env, config } => {
            let cfg = config.load()?;
            let kinds: Vec<EnvKind> = env.map_or(EnvKind::ALL.to_vec(), |k| vec![k]);
            let overrides = cfg.env.as_ref();
            if overrides.is_some() && kinds.len() > 1 {
                return Err(RunError::Usage("an env override needs --env".into()));
            }
            let mut reports = Vec::new();
            for k in kinds {
                reports.push(validate_env(k, overrides, overrides.is_none())?);
            }
            print_json(&reports)?;
            return Ok(reports.iter().all(|r| r.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(RunError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
