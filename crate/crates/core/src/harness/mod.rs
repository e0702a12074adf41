//! Experiment driver: config, training runs with metrics and checkpoints,
//! evaluation, and plot-data export.
//!
//! A run directory holds `config.toml` (resolved config), `metrics.csv`,
//! `timing.csv`, `checkpoints/iter-<n>.json`, `final.json`, `eval.json`, and
//! optionally `warmstart.json` and `trajectory.csv`.

pub mod checkpoint;
pub mod config;
pub mod evaluate;
pub mod metrics;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub use checkpoint::Checkpoint;
pub use config::{resolve_output, EvalConfig, Method, RunConfig, OUTPUT_ROOT_VAR};
pub use evaluate::{
    evaluate, policy_action, Agent, DeployedPolicy, EvalReport, EvalSpec, SliceStats,
};
pub use metrics::{MetricsTable, MetricsWriter};

use crate::baselines::{warmstart_pretrain, WarmStartReport};
use crate::error::{Error, Result};
use crate::rl::{IterationStats, Trainer};

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub stats: Vec<IterationStats>,
    pub eval: EvalReport,
    pub warm_start: Option<WarmStartReport>,
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Evaluation under the run's eval settings.
pub fn evaluate_agent(
    cfg: &RunConfig,
    agent: Agent<'_>,
    trajectory: Option<&Path>,
) -> Result<EvalReport> {
    let mut file = trajectory
        .map(File::create)
        .transpose()?
        .map(BufWriter::new);
    let report = evaluate(
        agent,
        &cfg.env,
        &cfg.constraints,
        &EvalSpec {
            gamma: cfg.rl.gamma,
            episodes: cfg.eval.episodes,
            slots: cfg.eval.slots,
            seed: cfg.seed,
        },
        file.as_mut().map(|f| f as &mut dyn Write),
    )?;
    if let Some(mut f) = file {
        f.flush()?;
    }
    Ok(report)
}

/// Keeps the rows of an existing metrics file that precede `iteration`.
fn truncated_rows(path: &Path, iteration: u64) -> Result<Vec<Vec<String>>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let table = MetricsTable::read(path)?;
    Ok(table
        .rows
        .into_iter()
        .filter(|r| r[0].parse::<u64>().is_ok_and(|i| i < iteration))
        .collect())
}

/// Trains (or, for baselines, only evaluates) and writes the run directory.
/// With `resume`, training continues from the checkpoint and existing
/// metrics rows past it are dropped.
pub fn run(
    cfg: &RunConfig,
    out_dir: &Path,
    resume: Option<&Checkpoint>,
    progress: &mut dyn FnMut(&IterationStats),
) -> Result<RunOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("config.toml"), cfg.to_toml()?)?;
    let trajectory = cfg.eval.trajectory.then(|| out_dir.join("trajectory.csv"));

    let Some(variant) = cfg.method.variant() else {
        let Method::Baseline(kind) = cfg.method else {
            unreachable!("learned methods have a variant")
        };
        let eval = evaluate_agent(cfg, Agent::Baseline(kind), trajectory.as_deref())?;
        write_json(&out_dir.join("eval.json"), &eval)?;
        return Ok(RunOutcome {
            output_dir: out_dir.to_path_buf(),
            stats: Vec::new(),
            eval,
            warm_start: None,
        });
    };

    let mut trainer = Trainer::new(
        cfg.rl.clone(),
        cfg.env.clone(),
        cfg.constraints.clone(),
        variant,
        cfg.seed,
        cfg.iterations,
    )?;
    let metrics_path = out_dir.join("metrics.csv");
    let timing_path = out_dir.join("timing.csv");
    let mut warm = None;
    let (kept_metrics, kept_timing) = match resume {
        Some(ck) => {
            if ck.config.method != cfg.method || ck.config.seed != cfg.seed {
                return Err(Error::config(
                    "checkpoint was written by a different method or seed",
                ));
            }
            trainer.restore(ck.to_snapshot()?)?;
            (
                truncated_rows(&metrics_path, ck.iteration)?,
                truncated_rows(&timing_path, ck.iteration)?,
            )
        }
        None => {
            if cfg.warm_start {
                let report =
                    warmstart_pretrain(trainer.policy_mut(), &cfg.env, &cfg.warmstart, cfg.seed)?;
                write_json(&out_dir.join("warmstart.json"), &report)?;
                warm = Some(report);
            }
            (Vec::new(), Vec::new())
        }
    };

    let mut metrics = MetricsWriter::new(
        BufWriter::new(File::create(&metrics_path)?),
        &cfg.constraints,
    )?;
    metrics.write_raw(&kept_metrics)?;
    let mut timing = csv::Writer::from_writer(BufWriter::new(File::create(&timing_path)?));
    timing.write_record(["iteration", "wall_seconds"])?;
    for r in &kept_timing {
        timing.write_record(r)?;
    }
    let ck_dir = out_dir.join("checkpoints");
    let mut stats = Vec::new();
    while trainer.iteration() < cfg.iterations {
        let started = Instant::now();
        let s = trainer.step()?;
        metrics.write(&s)?;
        timing.write_record([
            s.iteration.to_string(),
            started.elapsed().as_secs_f64().to_string(),
        ])?;
        timing.flush()?;
        progress(&s);
        stats.push(s);
        if cfg.checkpoint_every > 0 && trainer.iteration() % cfg.checkpoint_every == 0 {
            fs::create_dir_all(&ck_dir)?;
            Checkpoint::from_snapshot(cfg, &trainer.snapshot())
                .save(&ck_dir.join(format!("iter-{}.json", trainer.iteration())))?;
        }
    }
    Checkpoint::from_snapshot(cfg, &trainer.snapshot()).save(&out_dir.join("final.json"))?;

    let safety = if variant.safety_layer {
        trainer.safety_layer()
    } else {
        None
    };
    let eval = evaluate_agent(
        cfg,
        Agent::Policy {
            policy: trainer.policy(),
            safety,
        },
        trajectory.as_deref(),
    )?;
    write_json(&out_dir.join("eval.json"), &eval)?;
    Ok(RunOutcome {
        output_dir: out_dir.to_path_buf(),
        stats,
        eval,
        warm_start: warm,
    })
}

/// Evaluates a checkpoint's policy (with its safety layer when the method
/// uses one) under `cfg`'s eval settings.
pub fn evaluate_checkpoint(
    ck: &Checkpoint,
    cfg: &RunConfig,
    trajectory: Option<&Path>,
) -> Result<EvalReport> {
    let deployed = DeployedPolicy::from_checkpoint(ck)?;
    evaluate_agent(cfg, deployed.agent(), trajectory)
}
