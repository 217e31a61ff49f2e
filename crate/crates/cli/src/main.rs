use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cpr_core::checkpoint::{load_checkpoint, save_checkpoint};
use cpr_core::config::RunConfig;
use cpr_core::data::{gen_synthetic_pair, DomainPair};
use cpr_core::eval::{anomaly_histogram, evaluate, export_features};
use cpr_core::experiment::{ablate, sweep_unknown_classes, DataSource, Variant};
use cpr_core::trainer::Trainer;

#[derive(Parser)]
#[command(name = "cpr", version, about = "Universal domain adaptation with prototype and reciprocal-point classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic source/target pair.
    GenData(Common),
    /// Train on a dataset directory and write metrics, report, and checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint and print the report as JSON.
    Eval(EvalArgs),
    /// Compare the full method against its ablations over several seeds.
    Ablate(MultiArgs),
    /// Vary the number of target-private classes over several seeds.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset directory (source.csv, target_eval.csv, meta.json).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    no_split: bool,
    #[arg(long)]
    no_warmup: bool,
    #[arg(long)]
    no_consistency_criterion: bool,
    #[arg(long)]
    no_threshold_criterion: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Continue from a checkpoint directory written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Also write a checkpoint every N iterations.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Stop once this many iterations have run in total; `--resume` continues.
    #[arg(long)]
    stop_at: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Write a known/unknown anomaly-score histogram CSV here.
    #[arg(long)]
    histogram: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    bins: usize,
    /// Write per-sample features and predictions CSV here.
    #[arg(long)]
    features: Option<PathBuf>,
}

#[derive(Args)]
struct MultiArgs {
    #[command(flatten)]
    common: Common,
    /// Number of seeds, starting at `--seed` (or the config seed).
    #[arg(long, default_value_t = 5)]
    seeds: u64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    multi: MultiArgs,
    /// Target-private class counts to try.
    #[arg(long, value_delimiter = ',', default_values_t = vec![5, 10, 15, 20])]
    counts: Vec<usize>,
}

impl Common {
    /// Config file plus flag overrides, validated before any work starts.
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.data {
            cfg.paths.data = Some(d.clone());
        }
        if let Some(o) = &self.out {
            cfg.paths.out = Some(o.clone());
        }
        let a = &mut cfg.ablation;
        a.disable_split |= self.no_split;
        a.disable_warmup |= self.no_warmup;
        a.disable_consistency_criterion |= self.no_consistency_criterion;
        a.disable_threshold_criterion |= self.no_threshold_criterion;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.paths.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load_pair(cfg: &RunConfig) -> Result<DomainPair> {
    match &cfg.paths.data {
        Some(d) => Ok(DomainPair::load(d)?),
        None => {
            log::info!("no --data given; generating the synthetic benchmark from the config");
            Ok(gen_synthetic_pair(&cfg.data.synthetic(cfg.seed)?)?)
        }
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn gen_data(args: &Common) -> Result<()> {
    let cfg = args.resolve()?;
    let dir = out_dir(&cfg)?;
    let pair = gen_synthetic_pair(&cfg.data.synthetic(cfg.seed)?)?;
    pair.save(&dir)?;
    cfg.save(&dir.join("config.toml"))?;
    println!(
        "wrote {} source and {} target samples to {}",
        pair.source.len(),
        pair.target_eval.len(),
        dir.display()
    );
    Ok(())
}

fn train(args: &TrainArgs) -> Result<()> {
    let (cfg, state) = match &args.resume {
        Some(ckpt) => {
            let (state, mut cfg) = load_checkpoint(ckpt)?;
            // paths and seed may be overridden, nothing that changes the run
            let c = &args.common;
            if c.config.is_some() || c.no_split || c.no_warmup || c.no_consistency_criterion || c.no_threshold_criterion {
                bail!("--resume takes its configuration from the checkpoint; drop --config and ablation flags");
            }
            if let Some(d) = &c.data {
                cfg.paths.data = Some(d.clone());
            }
            if let Some(o) = &c.out {
                cfg.paths.out = Some(o.clone());
            }
            if c.seed.is_some_and(|s| s != cfg.seed) {
                bail!("--seed differs from the checkpoint's seed {}", cfg.seed);
            }
            (cfg, Some(state))
        }
        None => (args.common.resolve()?, None),
    };
    let dir = out_dir(&cfg)?;
    let pair = load_pair(&cfg)?;
    cfg.save(&dir.join("config.toml"))?;

    let resuming = state.is_some();
    let mut trainer = match state {
        Some(s) => Trainer::resume(cfg.clone(), &pair, s)?,
        None => Trainer::new(cfg.clone(), &pair)?,
    };
    let metrics_path = dir.join("metrics.jsonl");
    let file = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(resuming)
        .truncate(!resuming)
        .open(&metrics_path)
        .with_context(|| format!("opening {}", metrics_path.display()))?;
    let mut metrics = BufWriter::new(file);
    let every = args.checkpoint_every.unwrap_or(0);
    let ckpt_dir = dir.join("checkpoint");
    let stop_at = args.stop_at.unwrap_or(usize::MAX);
    while !trainer.is_finished() && trainer.state().iter < stop_at {
        let row = trainer.step()?;
        serde_json::to_writer(&mut metrics, &row)?;
        metrics.write_all(b"\n")?;
        if let Some(h) = row.h_score {
            log::info!("iter {} phase {} H {:.4}", row.iter, row.phase, h);
        }
        if every > 0 && trainer.state().iter % every == 0 {
            metrics.flush()?;
            save_checkpoint(&ckpt_dir, trainer.state(), &cfg)?;
        }
    }
    metrics.flush()?;
    save_checkpoint(&ckpt_dir, trainer.state(), &cfg)?;
    let report = trainer.evaluate()?;
    write_json(&dir.join("report.json"), &report)?;
    println!(
        "H-score {:.4} (acc_common {:.4}, acc_unknown {})",
        report.h_score,
        report.acc_common,
        report.acc_unknown.map_or("n/a".into(), |a| format!("{a:.4}"))
    );
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let (state, mut cfg) = load_checkpoint(&args.checkpoint)?;
    if let Some(d) = &args.data {
        cfg.paths.data = Some(d.clone());
    }
    let pair = load_pair(&cfg)?;
    let report = evaluate(&state.net, &pair.target_eval, &pair.spec)?;
    if let Some(p) = &args.histogram {
        let h = anomaly_histogram(std::slice::from_ref(&report), args.bins)?;
        fs::write(p, h.to_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &args.features {
        export_features(&state.net, &pair.target_eval, p)?;
    }
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    serde_json::to_writer_pretty(&mut lock, &report)?;
    writeln!(lock)?;
    Ok(())
}

fn data_source(cfg: &RunConfig) -> Result<DataSource> {
    Ok(match &cfg.paths.data {
        Some(d) => DataSource::Fixed(DomainPair::load(d)?),
        None => DataSource::Synthetic,
    })
}

fn seeds(cfg: &RunConfig, n: u64) -> Result<Vec<u64>> {
    if n == 0 {
        bail!("--seeds must be at least 1");
    }
    Ok((cfg.seed..cfg.seed + n).collect())
}

fn cmd_ablate(args: &MultiArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    let dir = out_dir(&cfg)?;
    cfg.save(&dir.join("config.toml"))?;
    let table = ablate(&cfg, &Variant::ALL, &seeds(&cfg, args.seeds)?, &data_source(&cfg)?)?;
    fs::write(dir.join("ablation.csv"), table.to_csv())?;
    write_json(&dir.join("ablation.json"), &table)?;
    print!("{}", table.to_csv());
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let cfg = args.multi.common.resolve()?;
    if cfg.paths.data.is_some() {
        bail!("sweep regenerates synthetic data for each class count; drop --data");
    }
    let dir = out_dir(&cfg)?;
    cfg.save(&dir.join("config.toml"))?;
    let table = sweep_unknown_classes(&cfg, &args.counts, &seeds(&cfg, args.multi.seeds)?)?;
    fs::write(dir.join("sweep.csv"), table.to_csv())?;
    write_json(&dir.join("sweep.json"), &table)?;
    print!("{}", table.to_csv());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}
