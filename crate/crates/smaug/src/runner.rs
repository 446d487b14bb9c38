//! Training, evaluation and diagnosis runs with on-disk outputs.
//!
//! Layout under `<out_dir>/<run_id>/`: `config.txt` (echo), `summary.txt`,
//! and per seed `seed_<n>/metrics.csv`, `seed_<n>/checkpoint.bin` plus
//! optional `seed_<n>/checkpoint_ep<episodes>.bin`.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use smaug_core::env::{episode_seed, AnyEnv, EnvConfig, MultiAgentEnv};
use smaug_core::trainer::{collect_episodes_traced, CollectOptions, EvalStats, Learner, StepTrace};

use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::diagnostics::{alignment_score, trace_csv};
use crate::io::write_atomic;
use crate::metrics::MetricsLog;

pub const CONFIG_FILE: &str = "config.txt";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRACE_FILE: &str = "diagnostics.csv";

/// Seed added to the base seed for diagnosis episodes.
const DIAGNOSE_SEED: u64 = 0xD1A6_0000;

#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub final_eval: EvalStats,
    pub dir: PathBuf,
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn build_envs(env: &EnvConfig, n: usize) -> anyhow::Result<Vec<AnyEnv>> {
    (0..n).map(|_| env.build().map_err(anyhow::Error::from)).collect()
}

pub fn seed_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.run_dir().join(format!("seed_{seed}"))
}

/// Trains one seed, flushing metrics at every evaluation and on failure.
pub fn train_seed(cfg: &ExperimentConfig, seed: u64, log: &mut dyn Write) -> anyhow::Result<SeedResult> {
    let env_cfg = cfg.env_config()?;
    let dir = seed_dir(cfg, seed);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut envs = build_envs(env_cfg, cfg.train.n_parallel_envs)?;
    let mut eval_envs = build_envs(env_cfg, cfg.train.n_parallel_envs)?;
    let spec = envs[0].spec();
    let mut learner: Learner<f32> = Learner::new(spec, cfg.train.clone(), seed)?;
    let mut metrics = MetricsLog::new();
    let metrics_path = dir.join(METRICS_FILE);
    let mut last_eval = None;
    let mut next_checkpoint = cfg.checkpoint_interval;
    let result = learner.run(&mut envs, &mut eval_envs, |l, row| {
        metrics.push(row);
        if let Some(e) = &row.eval {
            last_eval = Some(e.clone());
            metrics.write(&metrics_path).map_err(io_to_core)?;
            let _ = writeln!(
                log,
                "seed {seed} step {} episodes {} eval_return {:.4} success {:.3}",
                row.step, row.episodes, e.mean_return, e.success_rate
            );
        }
        if cfg.checkpoint_interval > 0 && l.episodes >= next_checkpoint {
            let path = dir.join(format!("checkpoint_ep{}.bin", l.episodes));
            checkpoint::save(&path, &l.store).map_err(io_to_core)?;
            while next_checkpoint <= l.episodes {
                next_checkpoint += cfg.checkpoint_interval;
            }
        }
        Ok(())
    });
    metrics.write(&metrics_path).with_context(|| format!("writing {}", metrics_path.display()))?;
    result.with_context(|| format!("seed {seed} failed after {} environment steps", learner.env_steps))?;
    checkpoint::save(&dir.join(CHECKPOINT_FILE), &learner.store)?;
    let final_eval = last_eval.context("run finished without an evaluation")?;
    Ok(SeedResult { seed, final_eval, dir })
}

fn io_to_core(e: std::io::Error) -> smaug_core::Error {
    smaug_core::Error::Argument(format!("output: {e}"))
}

pub fn summary_text(cfg: &ExperimentConfig, results: &[SeedResult]) -> String {
    let returns: Vec<f64> = results.iter().map(|r| r.final_eval.mean_return).collect();
    let success: Vec<f64> = results.iter().map(|r| r.final_eval.success_rate).collect();
    let (mr, sr) = mean_std(&returns);
    let (ms, ss) = mean_std(&success);
    let mut s = String::new();
    let _ = writeln!(s, "run.id = {}", cfg.run_id);
    let _ = writeln!(s, "seeds = {}", results.iter().map(|r| r.seed.to_string()).collect::<Vec<_>>().join(","));
    let _ = writeln!(s, "final_return_mean = {mr}");
    let _ = writeln!(s, "final_return_std = {sr}");
    let _ = writeln!(s, "final_success_mean = {ms}");
    let _ = writeln!(s, "final_success_std = {ss}");
    for r in results {
        let _ = writeln!(s, "seed_{}.final_return = {}", r.seed, r.final_eval.mean_return);
    }
    s
}

/// Parses `key = value` summary lines.
pub fn read_summary(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Runs every configured seed in sequence. A failing seed stops the run; the
/// outputs of finished seeds and the partial metrics stay on disk.
pub fn train(cfg: &ExperimentConfig, log: &mut dyn Write) -> anyhow::Result<Vec<SeedResult>> {
    cfg.validate()?;
    let run_dir = cfg.run_dir();
    std::fs::create_dir_all(&run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
    write_atomic(&run_dir.join(CONFIG_FILE), cfg.echo().as_bytes())?;
    let mut results = Vec::new();
    for &seed in &cfg.train.seeds {
        match train_seed(cfg, seed, log) {
            Ok(r) => results.push(r),
            Err(e) => {
                let msg = format!("{e:#}\n");
                let _ = write_atomic(&run_dir.join("error.log"), msg.as_bytes());
                if !results.is_empty() {
                    write_atomic(&run_dir.join(SUMMARY_FILE), summary_text(cfg, &results).as_bytes())?;
                }
                return Err(e);
            }
        }
    }
    write_atomic(&run_dir.join(SUMMARY_FILE), summary_text(cfg, &results).as_bytes())?;
    Ok(results)
}

/// Looks for the run config beside a checkpoint, then one directory up.
pub fn find_config(checkpoint: &Path) -> Option<PathBuf> {
    let dir = checkpoint.parent()?;
    [dir.join(CONFIG_FILE), dir.parent()?.join(CONFIG_FILE)]
        .into_iter()
        .find(|p| p.is_file())
}

/// Rebuilds the configured networks and fills them from a checkpoint.
pub fn load_learner(cfg: &ExperimentConfig, checkpoint_path: &Path, seed: u64) -> anyhow::Result<Learner<f32>> {
    cfg.validate()?;
    let env = cfg.env_config()?.build()?;
    let mut learner: Learner<f32> = Learner::new(env.spec(), cfg.train.clone(), seed)?;
    let entries = checkpoint::load(checkpoint_path).with_context(|| format!("reading {}", checkpoint_path.display()))?;
    checkpoint::restore(&mut learner.store, &entries)
        .with_context(|| format!("{} does not fit the configured networks", checkpoint_path.display()))?;
    learner.targets.sync(&learner.store)?;
    Ok(learner)
}

pub fn evaluate(cfg: &ExperimentConfig, learner: &Learner<f32>, episodes: usize) -> anyhow::Result<EvalStats> {
    if episodes == 0 {
        bail!("--episodes must be positive");
    }
    let mut envs = build_envs(cfg.env_config()?, cfg.train.n_parallel_envs)?;
    Ok(learner.evaluate(&mut envs, episodes)?)
}

#[derive(Clone, Debug)]
pub struct Diagnosis {
    pub traces: Vec<StepTrace>,
    pub csv: String,
    /// Adjusted mutual information between k-means clusters of the subtask
    /// vectors and the ground-truth goal ids.
    pub alignment: f64,
}

/// Greedy episodes with per-step traces and the alignment score.
pub fn diagnose(cfg: &ExperimentConfig, learner: &Learner<f32>, episodes: usize) -> anyhow::Result<Diagnosis> {
    let env_cfg = cfg.env_config()?;
    let k = match env_cfg {
        EnvConfig::SwitchingGoals(c) => c.n_goal_sites,
        other => bail!("environment {} has no ground-truth subtask to diagnose against", other.name()),
    };
    if episodes == 0 {
        bail!("--episodes must be positive");
    }
    let mut envs = build_envs(env_cfg, cfg.train.n_parallel_envs)?;
    let opts = CollectOptions {
        epsilon: 0.0,
        gamma: cfg.train.td.gamma,
        use_rollout: cfg.train.world.use_at_execution,
        training: false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut traces = Vec::new();
    let mut done = 0;
    while done < episodes {
        let m = envs.len().min(episodes - done);
        let seeds: Vec<u64> = (0..m)
            .map(|b| episode_seed(learner.seed() ^ DIAGNOSE_SEED, (done + b) as u64))
            .collect();
        collect_episodes_traced(&learner.nets, &learner.store, &mut envs[..m], &seeds, &opts, &mut rng, &mut |t| {
            traces.push(t)
        })?;
        done += m;
    }
    let w = &learner.nets.agent.cfg;
    let csv = trace_csv(&traces, w.n_window, w.z_dim());
    let alignment = alignment_score(&traces, k, 0).context("no labelled steps")?;
    Ok(Diagnosis { traces, csv, alignment })
}
