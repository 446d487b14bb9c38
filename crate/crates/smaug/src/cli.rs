//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use smaug_core::gradsuite::gradient_suite;
use smaug_core::numerics::GradCheckConfig;

use crate::config::{env_overrides, ConfigError, ExperimentConfig};
use crate::runner::{self, find_config, load_learner};

#[derive(Parser, Debug)]
#[command(name = "smaug", version, about = "Train and inspect subtask-aware cooperative agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train every configured seed and write metrics, checkpoints and a summary.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Ablation preset applied on top of the file.
        #[arg(long)]
        preset: Option<String>,
        /// Output directory (overrides run.out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: usize,
        /// Defaults to the config.txt beside or above the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Dump attention weights and subtask vectors against the hidden goal.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for the trace CSV; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient check of every network.
    Gradcheck {
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
}

/// Exit status for invalid configuration.
pub const EXIT_CONFIG: i32 = 2;

/// Resolves the experiment config for `train`: file, preset, environment
/// variables, then flags.
pub fn resolve_train_config<I, K, V>(
    path: &Path,
    seed: Option<u64>,
    preset: Option<&str>,
    out: Option<&Path>,
    vars: I,
) -> Result<ExperimentConfig, ConfigError>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(p) = preset {
        cfg.apply_preset(p)?;
    }
    cfg.apply(&env_overrides(vars))?;
    if let Some(s) = seed {
        cfg.train.seeds = vec![s];
    }
    if let Some(o) = out {
        cfg.out_dir = o.to_path_buf();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn checkpoint_config(checkpoint: &Path, config: Option<&Path>) -> Result<ExperimentConfig, ConfigError> {
    let path = match config {
        Some(p) => p.to_path_buf(),
        None => find_config(checkpoint).ok_or_else(|| {
            ConfigError::new("config", format!("no config.txt found near {}; pass --config", checkpoint.display()))
        })?,
    };
    let mut cfg = ExperimentConfig::from_file(&path)?;
    cfg.apply(&env_overrides(std::env::vars()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn fail(err: &mut dyn Write, e: anyhow::Error) -> i32 {
    if let Some(c) = e.downcast_ref::<ConfigError>() {
        let _ = writeln!(err, "error: invalid configuration: {c}");
        return EXIT_CONFIG;
    }
    let _ = writeln!(err, "error: {e:#}");
    1
}

/// Runs a parsed command and returns the process exit status.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => fail(err, e),
    }
}

fn execute(cmd: Command, out: &mut dyn Write) -> anyhow::Result<i32> {
    match cmd {
        Command::Train {
            config,
            seed,
            preset,
            out: dir,
        } => {
            let cfg = resolve_train_config(&config, seed, preset.as_deref(), dir.as_deref(), std::env::vars())?;
            let results = runner::train(&cfg, out)?;
            let returns: Vec<f64> = results.iter().map(|r| r.final_eval.mean_return).collect();
            let (m, s) = runner::mean_std(&returns);
            writeln!(
                out,
                "final eval return {m:.4} ± {s:.4} over {} seed(s); outputs in {}",
                results.len(),
                cfg.run_dir().display()
            )?;
            Ok(0)
        }
        Command::Eval {
            checkpoint,
            episodes,
            config,
            seed,
        } => {
            let cfg = checkpoint_config(&checkpoint, config.as_deref())?;
            let learner = load_learner(&cfg, &checkpoint, seed)?;
            let stats = runner::evaluate(&cfg, &learner, episodes)?;
            writeln!(
                out,
                "mean_return = {}\nsuccess_rate = {}\nstd_return = {}\nepisodes = {}",
                stats.mean_return, stats.success_rate, stats.std_return, stats.episodes
            )?;
            Ok(0)
        }
        Command::Diagnose {
            checkpoint,
            episodes,
            config,
            seed,
            out: dir,
        } => {
            let cfg = checkpoint_config(&checkpoint, config.as_deref())?;
            let learner = load_learner(&cfg, &checkpoint, seed)?;
            let d = runner::diagnose(&cfg, &learner, episodes)?;
            let dir = dir.or_else(|| checkpoint.parent().map(Path::to_path_buf)).unwrap_or_default();
            let path = dir.join(runner::TRACE_FILE);
            crate::io::write_atomic(&path, d.csv.as_bytes())?;
            writeln!(out, "alignment_ami = {}\nsteps = {}\ntrace = {}", d.alignment, d.traces.len(), path.display())?;
            Ok(0)
        }
        Command::Gradcheck { seeds } => {
            let cfg = GradCheckConfig::default();
            let mut ok = true;
            for seed in 0..seeds.max(1) {
                for e in gradient_suite(seed, &cfg)? {
                    ok &= e.report.passed;
                    writeln!(
                        out,
                        "{} seed {seed} {:<22} max_rel_error {:.3e} over {} coordinates",
                        if e.report.passed { "PASS" } else { "FAIL" },
                        e.network,
                        e.report.max_rel_error,
                        e.report.checked
                    )?;
                }
            }
            Ok(if ok { 0 } else { 1 })
        }
    }
}
