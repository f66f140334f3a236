use std::fs;
use std::path::{Path, PathBuf};

use acpp_core::centers::precompute_centers;
use acpp_core::evaluation::MetricsReport;
use acpp_core::pipeline::gradcheck::{gradcheck, LossKind, DEFAULT_STEP};
use acpp_core::pipeline::{
    evaluate_checkpoint, init_finetune, init_pretrain, load_centers, run_finetune, run_pretrain, save_centers,
    Checkpoint, Dataset, RunLog, RunOptions, Stage, TrainConfig,
};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "acpp", version, about = "Long-tailed semi-supervised segmentation with adaptive anatomical contrast")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Precompute class centers on the unit sphere.
    Centers {
        #[command(flatten)]
        common: Common,
    },
    /// Generate the synthetic dataset and its manifest.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Self-supervised pre-training.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Continue from a pre-training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many completed iterations.
        #[arg(long)]
        stop_at: Option<u64>,
    },
    /// Semi-supervised fine-tuning.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Pre-training checkpoint to start from.
        #[arg(long, required_unless_present = "resume")]
        pretrained: Option<PathBuf>,
        /// Centers file from `acpp centers`; computed on the fly when absent.
        #[arg(long)]
        centers: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        stop_at: Option<u64>,
    },
    /// Validation metrics of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare hand-derived loss gradients with finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
}

fn load_config(common: &Common) -> Result<TrainConfig> {
    let mut cfg = match &common.config {
        Some(p) => TrainConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn prepare(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn centers(common: &Common) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(seed) = common.seed {
        cfg.uniformity.seed = seed;
    }
    prepare(&common.out)?;
    let c = precompute_centers(cfg.model.num_classes, cfg.model.latent_dim, &cfg.uniformity)?;
    save_centers(&c, &common.out.join("centers.acpp"))?;
    let summary = json!({
        "K": c.k(),
        "d": c.dim(),
        "tau": c.tau,
        "final_loss": c.final_loss,
        "final_grad_norm": c.final_grad_norm,
        "iterations": c.iterations,
        "max_pairwise_inner_product": c.max_pairwise_inner_product(),
    });
    write_json(&common.out.join("centers.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn gen_data(common: &Common) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(seed) = common.seed {
        cfg.data.scene.seed = seed;
    }
    prepare(&common.out)?;
    let data = Dataset::generate(&cfg.data)?;
    data.save(&common.out.join("dataset.acpp"))?;
    let manifest = serde_json::to_value(data.manifest())?;
    write_json(&common.out.join("manifest.json"), &manifest)?;
    println!(
        "{} labeled, {} unlabeled, {} validation images; class frequencies {:?}",
        data.labeled.len(),
        data.unlabeled.len(),
        data.validation.len(),
        data.manifest().class_frequencies
    );
    Ok(())
}

fn train(
    common: &Common,
    stage: Stage,
    resume: Option<&Path>,
    stop_at: Option<u64>,
    start: impl FnOnce(&TrainConfig) -> Result<Checkpoint>,
) -> Result<()> {
    prepare(&common.out)?;
    let mut ck = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?;
            if ck.stage != stage {
                bail!("{} is a {:?} checkpoint", p.display(), ck.stage);
            }
            ck
        }
        None => start(&load_config(common)?)?,
    };
    let data = Dataset::resolve(&ck.config.data)?;
    let name = match stage {
        Stage::Pretrain => "pretrain",
        Stage::Finetune => "finetune",
    };
    let log_path = common.out.join(format!("{name}_log.csv"));
    let k = ck.config.model.num_classes;
    let mut log = if resume.is_some() { RunLog::append(&log_path, k)? } else { RunLog::create(&log_path, k)? };
    let opts = RunOptions { stop_at, log: Some(&mut log) };
    let rows = match stage {
        Stage::Pretrain => run_pretrain(&mut ck, &data, opts)?,
        Stage::Finetune => run_finetune(&mut ck, &data, opts)?,
    };
    let path = common.out.join(format!("{name}.acpp"));
    ck.save(&path)?;
    if let Some(r) = rows.last() {
        println!("{name}: iteration {} total loss {:.6}", ck.iteration, r.total);
    }
    println!("checkpoint written to {}", path.display());
    Ok(())
}

fn eval(common: &Common, checkpoint: &Path) -> Result<()> {
    let mut ck = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    if let Some(p) = &common.config {
        ck.config.data = TrainConfig::load(p)?.data;
    }
    prepare(&common.out)?;
    let data = Dataset::resolve(&ck.config.data)?;
    let report = evaluate_checkpoint(&ck, &data.validation)?;
    let k = ck.config.model.num_classes;
    let mut w = csv::Writer::from_path(common.out.join("eval.csv"))?;
    w.write_record(MetricsReport::csv_header(k))?;
    w.write_record(report.csv_record())?;
    w.flush()?;
    let json = serde_json::to_value(&report)?;
    write_json(&common.out.join("eval.json"), &json)?;
    println!("{}", serde_json::to_string_pretty(&json)?);
    Ok(())
}

fn run_gradcheck(common: &Common, instances: usize, step: f64, tolerance: f64) -> Result<()> {
    prepare(&common.out)?;
    let seed = common.seed.unwrap_or(0);
    let mut reports = Vec::new();
    let mut failed = Vec::new();
    for kind in LossKind::ALL {
        let r = gradcheck(kind, instances, seed, step)?;
        println!("{:<12} max rel. error {:.3e}  mean {:.3e}", kind.name(), r.max_relative_error, r.mean_relative_error);
        if !(r.max_relative_error < tolerance) {
            failed.push(kind.name());
        }
        reports.push(r);
    }
    write_json(&common.out.join("gradcheck.json"), &serde_json::to_value(&reports)?)?;
    if !failed.is_empty() {
        bail!("gradient check above tolerance {tolerance:e} for {}", failed.join(", "));
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Centers { common } => centers(&common),
        Command::GenData { common } => gen_data(&common),
        Command::Pretrain { common, resume, stop_at } => {
            train(&common, Stage::Pretrain, resume.as_deref(), stop_at, |cfg| Ok(init_pretrain(cfg)?))
        }
        Command::Finetune { common, pretrained, centers, resume, stop_at } => {
            train(&common, Stage::Finetune, resume.as_deref(), stop_at, |cfg| {
                let path = pretrained.context("--pretrained is required")?;
                let pre = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
                let c = match centers {
                    Some(p) => load_centers(&p)?,
                    None => precompute_centers(cfg.model.num_classes, cfg.model.latent_dim, &cfg.uniformity)?,
                };
                Ok(init_finetune(cfg, &pre, c)?)
            })
        }
        Command::Eval { common, checkpoint } => eval(&common, &checkpoint),
        Command::Gradcheck { common, instances, step, tolerance } => run_gradcheck(&common, instances, step, tolerance),
    }
}
