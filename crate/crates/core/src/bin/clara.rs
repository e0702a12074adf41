use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use clara::harness::{self, metrics, Checkpoint, EvalReport, MetricsTable, RunConfig};
use clara::{Error, Result};

#[derive(Parser)]
#[command(
    name = "clara",
    version,
    about = "Constrained RL for network-slice bandwidth allocation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a method (or evaluate a baseline) and write a run directory.
    Train {
        config: PathBuf,
        /// Config override, `key.path=value`; repeatable.
        #[arg(long = "set", visible_alias = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Run directory (overrides `output_dir` in the config).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a checkpoint or a `baseline:<kind>` allocator.
    Evaluate {
        /// Checkpoint file, or a baseline method name.
        target: String,
        /// Config for baselines; checkpoints carry their own.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", visible_alias = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also dump the per-slot trajectory as CSV.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Summarise finished run directories as CSV.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Training-curve statistics average this many final iterations.
        #[arg(long, default_value_t = 10)]
        tail: usize,
    },
    /// Align metrics files on iteration for plotting (`label=path` or `path`).
    Plotdata {
        #[arg(required = true)]
        metrics: Vec<String>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn write_out(path: Option<&PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(harness::resolve_output(p), text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn train(
    config: PathBuf,
    overrides: Vec<String>,
    output: Option<PathBuf>,
    resume: Option<PathBuf>,
    quiet: bool,
) -> Result<()> {
    let cfg = RunConfig::load(&config, &overrides)?;
    let dir = output
        .map(|p| harness::resolve_output(&p))
        .unwrap_or_else(|| cfg.resolved_output_dir());
    let ck = resume.map(|p| Checkpoint::load(&p)).transpose()?;
    let mut progress = |s: &clara::rl::IterationStats| {
        if !quiet {
            let j: Vec<String> = s.cost_j.iter().map(|j| format!("{j:.3}")).collect();
            eprintln!(
                "iter {:>4} {:<12} reward {:>10.1} J [{}] latency-viol {:.3} t {:.1}",
                s.iteration,
                s.mode.to_string(),
                s.mean_episode_reward,
                j.join(", "),
                s.latency_violation_frac,
                s.t
            );
        }
    };
    let out = harness::run(&cfg, &dir, ck.as_ref(), &mut progress)?;
    if !quiet {
        eprintln!(
            "eval reward {:.1} J {:?} latency-viol {:.4}; wrote {}",
            out.eval.reward_mean,
            out.eval.cost_j,
            out.eval.latency_violation_frac,
            out.output_dir.display()
        );
    }
    Ok(())
}

fn evaluate(
    target: String,
    config: Option<PathBuf>,
    overrides: Vec<String>,
    output: Option<PathBuf>,
    trajectory: Option<PathBuf>,
) -> Result<()> {
    let trajectory = trajectory.map(|p| harness::resolve_output(&p));
    let report = if let Ok(method) = target.parse::<harness::Method>() {
        if method.variant().is_some() {
            return Err(Error::config(format!(
                "{method} needs a checkpoint, not a method name"
            )));
        }
        let base = match &config {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::config(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut all = overrides;
        all.push(format!("method=\"{method}\""));
        let cfg = RunConfig::from_toml_str(&base, &all)?;
        let harness::Method::Baseline(kind) = cfg.method else {
            unreachable!()
        };
        harness::evaluate_agent(&cfg, harness::Agent::Baseline(kind), trajectory.as_deref())?
    } else {
        if config.is_some() {
            return Err(Error::config(
                "--config applies to baselines; checkpoints carry their own config",
            ));
        }
        let ck = Checkpoint::load(&PathBuf::from(&target))?;
        let cfg = RunConfig::from_toml_str(&ck.config.to_toml()?, &overrides)?;
        harness::evaluate_checkpoint(&ck, &cfg, trajectory.as_deref())?
    };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    write_out(output.as_ref(), &text)
}

fn compare(runs: Vec<PathBuf>, tail: usize) -> Result<()> {
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record([
        "run",
        "method",
        "eval_reward",
        "eval_cost_j",
        "eval_latency_violation_frac",
        "train_iterations",
        "train_tail_reward",
        "train_tail_latency_violation_frac",
    ])?;
    for dir in runs {
        let malformed = |reason: String| Error::Malformed {
            path: dir.display().to_string(),
            reason,
        };
        let cfg_text = std::fs::read_to_string(dir.join("config.toml"))
            .map_err(|e| malformed(e.to_string()))?;
        let cfg = RunConfig::from_toml_str(&cfg_text, &[])?;
        let eval_text =
            std::fs::read_to_string(dir.join("eval.json")).map_err(|e| malformed(e.to_string()))?;
        let eval: EvalReport =
            serde_json::from_str(&eval_text).map_err(|e| malformed(e.to_string()))?;
        let table = match dir.join("metrics.csv") {
            p if p.exists() => Some(MetricsTable::read(&p)?),
            _ => None,
        };
        let stat = |name: &str| {
            table
                .as_ref()
                .map(|t| metrics::tail_mean(&t.series(name), tail).to_string())
                .unwrap_or_default()
        };
        let j: Vec<String> = eval.cost_j.iter().map(f64::to_string).collect();
        out.write_record([
            dir.display().to_string(),
            cfg.method.to_string(),
            eval.reward_mean.to_string(),
            j.join(";"),
            eval.latency_violation_frac.to_string(),
            table
                .as_ref()
                .map(|t| t.rows.len().to_string())
                .unwrap_or_default(),
            stat("reward"),
            stat("latency_violation_frac"),
        ])?;
    }
    let bytes = out
        .into_inner()
        .map_err(|e| Error::Internal(e.to_string()))?;
    std::io::stdout().write_all(&bytes)?;
    Ok(())
}

fn plotdata(inputs: Vec<String>, output: Option<PathBuf>) -> Result<()> {
    let mut runs = Vec::new();
    for spec in inputs {
        let (label, path) = match spec.split_once('=') {
            Some((l, p)) => (l.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(&spec);
                let label = p
                    .parent()
                    .and_then(|d| d.file_name())
                    .or_else(|| p.file_stem())
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| spec.clone());
                (label, p)
            }
        };
        runs.push((label, MetricsTable::read(&path)?));
    }
    let mut buf = Vec::new();
    metrics::write_plot_table(&mut buf, &runs)?;
    write_out(
        output.as_ref(),
        &String::from_utf8(buf).map_err(|e| Error::Internal(e.to_string()))?,
    )
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Command::Train {
            config,
            overrides,
            output,
            resume,
            quiet,
        } => train(config, overrides, output, resume, quiet),
        Command::Evaluate {
            target,
            config,
            overrides,
            output,
            trajectory,
        } => evaluate(target, config, overrides, output, trajectory),
        Command::Compare { runs, tail } => compare(runs, tail),
        Command::Plotdata { metrics, output } => plotdata(metrics, output),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
