//! Command-line surface over `lcot_core::pipeline`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use lcot_core::config::RunConfig;
use lcot_core::eval::{sweep_csv, ReasoningReport};
use lcot_core::pipeline::{Pipeline, Variant};
use lcot_core::policy::{LwmSource, Mode};
use lcot_core::sim::Split;
use lcot_core::train::StepMetrics;

/// Grid of (K, B) points used by `sweep` when `--grid` is not given.
pub const DEFAULT_GRID: &str = "1x2,2x2,3x2,5x1,5x2";

#[derive(Debug, Parser)]
#[command(name = "lcot", version, about = "Latent chain-of-thought driving planner: data, training, evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run config; defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Artifact root.
    #[arg(long, global = true, env = "LCOT_OUT", default_value = "lcot-out")]
    pub out: PathBuf,
    /// none, lwm0 or latent-cot.
    #[arg(long, global = true, default_value = "latent-cot")]
    pub mode: Mode,
    /// gt or predicted.
    #[arg(long = "lwm-source", global = true, default_value = "gt")]
    pub lwm_source: LwmSource,
    /// Reasoning depth (blocks per branch).
    #[arg(long = "K", global = true)]
    pub k: Option<usize>,
    /// Branch count.
    #[arg(long = "B", global = true)]
    pub b: Option<usize>,
    /// Overwrite existing artifacts.
    #[arg(long, global = true)]
    pub force: bool,
    /// Suppress progress lines.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Simulate the train and validation clipsets.
    GenData,
    /// Fit the Δ-pose codebook on the training clips.
    FitCodebook,
    /// Supervised training of the non-reasoning and LWM0 models.
    TrainStage0,
    /// Latent-CoT cold start from the LWM0 model.
    TrainStage1,
    /// GRPO fine-tuning for the selected mode and LWM source.
    TrainStage2,
    /// Metrics on the validation clips.
    Eval {
        /// Evaluate the stage-2 checkpoint instead of the pre-RL one.
        #[arg(long)]
        rl: bool,
    },
    /// Branch diversity/alignment analysis, before vs after RL (B = 2).
    AnalyzeReasoning,
    /// Token budget vs ADE over stage-1 checkpoints.
    Sweep {
        /// Comma separated KxB points.
        #[arg(long, default_value = DEFAULT_GRID)]
        grid: String,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::FitCodebook => "fit-codebook",
            Command::TrainStage0 => "train-stage0",
            Command::TrainStage1 => "train-stage1",
            Command::TrainStage2 => "train-stage2",
            Command::Eval { .. } => "eval",
            Command::AnalyzeReasoning => "analyze-reasoning",
            Command::Sweep { .. } => "sweep",
        }
    }
}

pub fn parse_grid(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|p| {
            let (k, b) = p.trim().split_once(['x', 'X']).with_context(|| format!("grid point {p:?} is not KxB"))?;
            Ok((k.trim().parse()?, b.trim().parse()?))
        })
        .collect()
}

/// Config file (or defaults) with flag overrides applied and validated.
pub fn resolve_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(k) = c.k {
        cfg.train.k = k;
    }
    if let Some(b) = c.b {
        cfg.train.b = b;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn guard(force: bool, paths: &[PathBuf]) -> Result<()> {
    if force {
        return Ok(());
    }
    for p in paths {
        if p.exists() {
            bail!("{} already exists; pass --force to overwrite", p.display());
        }
    }
    Ok(())
}

fn last_loss(log: &[StepMetrics]) -> String {
    match log.last() {
        Some(m) => format!("step {} loss {:.4}", m.step, m.loss),
        None => "no steps".into(),
    }
}

fn copy_into(run: &Path, file: &Path) -> Result<()> {
    let name = file.file_name().context("artifact without file name")?;
    std::fs::copy(file, run.join(name)).with_context(|| format!("copying {}", file.display()))?;
    Ok(())
}

/// Executes one command and returns its one-line summary.
pub fn run_command(cli: &Cli) -> Result<String> {
    let c = &cli.common;
    let cfg = resolve_config(c)?;
    let (k, b) = (cfg.train.k, cfg.train.b);
    let mut p = Pipeline::new(cfg, &c.out);
    p.verbose = !c.quiet;
    let cmd = cli.command.name();
    match &cli.command {
        Command::GenData => {
            guard(c.force, &[p.clips_path(Split::Train), p.clips_path(Split::Val)])?;
            let (train, val) = p.gen_data()?;
            Ok(format!("gen-data: {} train / {} val clips in {}", train.len(), val.len(), c.out.display()))
        }
        Command::FitCodebook => {
            guard(c.force, &[p.codebook_path()])?;
            let cb = p.fit_codebook()?;
            Ok(format!("fit-codebook: {} codes -> {}", cb.len(), p.codebook_path().display()))
        }
        Command::TrainStage0 => {
            let outs = [p.stage0_path(Mode::None), p.stage0_path(Mode::Lwm0)];
            guard(c.force, &outs)?;
            let run = p.run_dir(cmd)?;
            let log = p.train_stage0(&run)?;
            for o in &outs {
                copy_into(&run, o)?;
            }
            Ok(format!("train-stage0: {} -> {}", last_loss(&log), run.display()))
        }
        Command::TrainStage1 => {
            let out = p.stage1_path(k, b);
            guard(c.force, std::slice::from_ref(&out))?;
            let run = p.run_dir(cmd)?;
            let log = p.train_stage1(&run, k, b)?;
            copy_into(&run, &out)?;
            Ok(format!("train-stage1 k{k} b{b}: {} -> {}", last_loss(&log), run.display()))
        }
        Command::TrainStage2 => {
            let out = p.stage2_path(c.mode, c.lwm_source, k, b);
            guard(c.force, std::slice::from_ref(&out))?;
            let run = p.run_dir(cmd)?;
            let log = p.train_stage2(&run, c.mode, c.lwm_source, k, b)?;
            copy_into(&run, &out)?;
            let reward = log.last().map(|m| m.mean_reward).unwrap_or(f64::NAN);
            Ok(format!("train-stage2 {} {}: mean reward {reward:.4} -> {}", c.mode, c.lwm_source, run.display()))
        }
        Command::Eval { rl } => {
            let v = Variant::new(c.mode, c.lwm_source, k, b, *rl);
            let rep = p.evaluate(&v)?;
            let run = p.run_dir(cmd)?;
            p.write_report(&run, "metrics", &rep)?;
            let a = rep.aggregate;
            Ok(format!(
                "eval {}: ade {:.4} offroad@5 {:.2}% coll@5 {:.2}% corner {:.4} -> {}",
                rep.label,
                a.ade,
                a.offroad_5_0,
                a.coll_5_0,
                a.corner_dist,
                run.display()
            ))
        }
        Command::AnalyzeReasoning => {
            let (before, after) = p.analyze_reasoning(c.lwm_source, k, b)?;
            let run = p.run_dir(cmd)?;
            std::fs::write(run.join("reasoning.csv"), ReasoningReport::comparison_csv(&before, &after))?;
            let json = serde_json::json!({ "no_rl": before, "rl": after });
            std::fs::write(run.join("reasoning.json"), serde_json::to_string_pretty(&json)? + "\n")?;
            Ok(format!(
                "analyze-reasoning: diversity {:.3} -> {:.3}, alignment {:.3} -> {:.3} -> {}",
                before.diversity,
                after.diversity,
                before.alignment,
                after.alignment,
                run.display()
            ))
        }
        Command::Sweep { grid } => {
            let grid = parse_grid(grid)?;
            let recs = p.sweep(&grid)?;
            let run = p.run_dir(cmd)?;
            std::fs::write(run.join("sweep.csv"), sweep_csv(&recs))?;
            let best = recs.iter().skip(1).min_by(|a, b| a.ade.total_cmp(&b.ade)).context("empty sweep")?;
            Ok(format!(
                "sweep: {} points, baseline ade {:.4}, best k{} b{} ade {:.4} -> {}",
                recs.len(),
                recs[0].ade,
                best.k,
                best.b,
                best.ade,
                run.display()
            ))
        }
    }
}
