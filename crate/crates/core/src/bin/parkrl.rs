//! Command-line front end: train experiment cells, evaluate checkpoints,
//! compare metric series, and export trajectories.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use parkrl_core::env::Scenario;
use parkrl_core::evalstats::{self, PolicyController};
use parkrl_core::harness::{self, config as hconfig, Checkpoint};
use parkrl_core::Error;

#[derive(Parser)]
#[command(
    name = "parkrl",
    about = "Autonomous-parking reinforcement-learning workbench",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment cell (or every run in a batch file).
    Train {
        /// Experiment config JSON, or a batch file with a "runs" array.
        #[arg(long)]
        config: PathBuf,
        /// Master seed override (PARKRL_SEED takes precedence).
        #[arg(long)]
        seed: Option<u64>,
        /// Dotted-path config overrides, e.g. onpom.clip_epsilon=0.2.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Resume from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a trained checkpoint and print the deployment report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Layout file, or "default" for the bundled lot.
        #[arg(long, default_value = "default")]
        layout: String,
        #[arg(long, default_value_t = 100)]
        episodes: u64,
        /// Act on the policy mean instead of sampling.
        #[arg(long)]
        deterministic: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report JSON to this path.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Welch's t-test between the reward series of two metrics files.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 2000)]
        stride: u64,
    },
    /// Export evaluation trajectories as a trace CSV.
    ExportTraj {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "default")]
        layout: String,
        #[arg(long, default_value_t = 10)]
        episodes: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        deterministic: bool,
    },
    /// Check an experiment config (or batch file) without running it.
    ValidateConfig { config: PathBuf },
}

fn load_scenario(layout: &str) -> Result<Scenario, Error> {
    if layout == "default" {
        Ok(Scenario::default_scenario())
    } else {
        Scenario::from_json_file(Path::new(layout))
    }
}

fn run() -> Result<(), Error> {
    let cli = Cli::try_parse().map_err(|e| {
        // clap renders its own message; route it to stderr with exit 1.
        eprint!("{e}");
        Error::Usage(String::new())
    })?;

    match cli.command {
        Command::Train {
            config,
            seed,
            overrides,
            resume,
        } => {
            let parsed = hconfig::load_config_file(&config, &overrides, seed)?;
            match parsed {
                hconfig::ConfigFile::Single(cfg) => {
                    let artifacts = match resume {
                        Some(ckpt) => harness::resume_experiment(&cfg, &ckpt)?,
                        None => harness::run_experiment(&cfg)?,
                    };
                    println!(
                        "run {} finished: {} env steps, {:.2} min, artifacts in {}",
                        cfg.run_name(),
                        artifacts.env_steps,
                        artifacts.wall_clock_minutes,
                        artifacts.run_dir.display()
                    );
                }
                hconfig::ConfigFile::Batch(configs) => {
                    if resume.is_some() {
                        return Err(Error::Usage(
                            "--resume is not supported with batch files".into(),
                        ));
                    }
                    for cfg in &configs {
                        let artifacts = harness::run_experiment(cfg)?;
                        println!(
                            "run {} finished: {} env steps, {:.2} min, artifacts in {}",
                            cfg.run_name(),
                            artifacts.env_steps,
                            artifacts.wall_clock_minutes,
                            artifacts.run_dir.display()
                        );
                    }
                }
            }
        }
        Command::Eval {
            checkpoint,
            layout,
            episodes,
            deterministic,
            seed,
            json,
        } => {
            let scenario = load_scenario(&layout)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let (policy, squash) = ckpt.policy();
            let mut controller = PolicyController::new(policy.clone(), squash, deterministic)?;
            let report =
                evalstats::evaluate(&mut controller, &scenario, episodes, seed, ckpt.reward)?;
            let text = serde_json::to_string_pretty(&report)?;
            println!("{text}");
            if let Some(path) = json {
                std::fs::write(path, format!("{text}\n"))?;
            }
        }
        Command::Compare { a, b, stride } => {
            let sa = evalstats::reward_series(&a, stride)?;
            let sb = evalstats::reward_series(&b, stride)?;
            let r = evalstats::welch_t(&sa, &sb)?;
            let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
            println!("{:<40} {:>8} {:>14}", "series", "n", "mean");
            println!("{:<40} {:>8} {:>14.4}", a.display(), sa.len(), mean(&sa));
            println!("{:<40} {:>8} {:>14.4}", b.display(), sb.len(), mean(&sb));
            println!();
            println!("{:<22} {:>14.4}", "t statistic", r.t_statistic);
            println!("{:<22} {:>14.4}", "degrees of freedom", r.degrees_of_freedom);
            println!("{:<22} {:>14.6e}", "p value (two-sided)", r.p_value);
            println!("{:<22} {:>14.4}", "Cohen's d", r.cohens_d);
            println!("{}", serde_json::to_string(&r)?);
        }
        Command::ExportTraj {
            checkpoint,
            layout,
            episodes,
            out,
            seed,
            deterministic,
        } => {
            let scenario = load_scenario(&layout)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let (policy, squash) = ckpt.policy();
            let mut controller = PolicyController::new(policy.clone(), squash, deterministic)?;
            let mut file = std::io::BufWriter::new(std::fs::File::create(&out)?);
            evalstats::export_trajectories(
                &mut controller,
                &scenario,
                episodes,
                seed,
                ckpt.reward,
                &mut file,
            )?;
            println!("wrote {episodes} episodes to {}", out.display());
        }
        Command::ValidateConfig { config } => {
            let parsed = hconfig::load_config_file(&config, &[], None)?;
            match parsed {
                hconfig::ConfigFile::Single(cfg) => {
                    cfg.load_scenario(None)?;
                    println!("config ok: {}", cfg.run_name());
                }
                hconfig::ConfigFile::Batch(configs) => {
                    for cfg in &configs {
                        cfg.load_scenario(None)?;
                    }
                    println!("batch ok: {} runs", configs.len());
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Usage(msg)) => {
            if !msg.is_empty() {
                eprintln!("usage error: {msg}");
            }
            ExitCode::from(1)
        }
        Err(Error::InvalidConfig(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
