//! `least`: synthesize data, preprocess, pretrain, fine-tune, evaluate and
//! export attributions. Summaries go to stdout as JSON; logs go to stderr.

mod config;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use least_core::data::{preprocess_dataset, synth_dataset, Dataset};
use least_core::downstream::predictions::write_jsonl;
use least_core::downstream::Baseline;
use least_core::evaluate::evaluate;
use least_core::model::attribution::attribution_map;
use least_core::model::checkpoint;
use least_core::model::LeastModel;
use least_core::train::{finetune, pretrain, FinetuneMode, BASELINE_KEY};
use serde_json::{json, Value};

use config::{RawConfig, RunConfig};

#[derive(Parser)]
#[command(name = "least", version, about = "Masked ECG autoencoder pretraining and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `section.key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting; repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Shorthand for `--set run.seed=N`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-class dataset.
    Synth(Common),
    /// Run the preprocessing pipeline over `paths.data`.
    Preprocess(Common),
    /// Masked-reconstruction pretraining.
    Pretrain(Common),
    /// Train the task head together with the backbone.
    Finetune(Common),
    /// Train the task head on a frozen backbone.
    Probe(Common),
    /// Score a fine-tuned checkpoint on `task.eval_split`.
    Eval(Common),
    /// Export per-timestep relevance for one record.
    Attribute {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        record: String,
        #[arg(long, default_value_t = 0)]
        label: usize,
    },
}

fn resolve(c: &Common) -> Result<RunConfig> {
    let mut raw = match &c.config {
        Some(p) => RawConfig::load(p)?,
        None => RawConfig::default(),
    };
    for s in &c.sets {
        raw.set(s)?;
    }
    if let Some(seed) = c.seed {
        raw.set(&format!("run.seed={seed}"))?;
    }
    let cfg = RunConfig::resolve(raw)?;
    cfg.write_dump(&c.out)?;
    Ok(cfg)
}

fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    let dir = cfg.data.as_deref().context("paths.data is not set")?;
    ensure!(dir.is_dir(), "dataset directory {} does not exist", dir.display());
    Dataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn load_checkpoint(dir: &Path) -> Result<(LeastModel, std::collections::BTreeMap<String, Value>)> {
    ensure!(dir.is_dir(), "checkpoint directory {} does not exist", dir.display());
    checkpoint::load(dir).with_context(|| format!("loading checkpoint {}", dir.display()))
}

/// The checkpoint at `paths.checkpoint`, or a freshly initialized model.
fn model_for(cfg: &RunConfig) -> Result<LeastModel> {
    match &cfg.checkpoint {
        Some(dir) => {
            let (model, _) = load_checkpoint(dir)?;
            if model.cfg != cfg.model {
                log::warn!("using the model settings stored in {}, not the configured ones", dir.display());
            }
            Ok(model)
        }
        None => Ok(LeastModel::new(cfg.model.clone(), cfg.seed)?),
    }
}

fn required_checkpoint(cfg: &RunConfig) -> Result<(LeastModel, std::collections::BTreeMap<String, Value>)> {
    load_checkpoint(cfg.checkpoint.as_deref().context("paths.checkpoint is not set")?)
}

fn run(cli: Cli) -> Result<Value> {
    match cli.command {
        Command::Synth(c) => {
            let cfg = resolve(&c)?;
            let summary = synth_dataset(&cfg.synth, &cfg.pipeline, &c.out)?;
            Ok(json!({ "command": "synth", "out": c.out, "summary": summary }))
        }
        Command::Preprocess(c) => {
            let cfg = resolve(&c)?;
            let input = dataset(&cfg)?;
            let summary = preprocess_dataset(&input, &cfg.pipeline, &c.out)?;
            Ok(json!({ "command": "preprocess", "out": c.out, "summary": summary }))
        }
        Command::Pretrain(c) => {
            let cfg = resolve(&c)?;
            let ds = dataset(&cfg)?;
            let mut model = model_for(&cfg)?;
            let trace = pretrain(&mut model, &ds, &cfg.pretrain_split, &cfg.pretrain, Some(&c.out))?;
            let last = trace.last().context("pretraining ran no epochs")?;
            Ok(json!({
                "command": "pretrain",
                "out": c.out,
                "epochs": trace.len(),
                "loss": last.loss,
                "loss_ssl": last.loss_ssl,
                "loss_multi": last.loss_multi,
            }))
        }
        Command::Finetune(c) => tune(&c, FinetuneMode::Full),
        Command::Probe(c) => tune(&c, FinetuneMode::LinearProbe),
        Command::Eval(c) => {
            let cfg = resolve(&c)?;
            let ds = dataset(&cfg)?;
            let (model, extras) = required_checkpoint(&cfg)?;
            let head = model.head.as_ref().context("checkpoint has no task head; run finetune or probe first")?;
            if head.spec.kind != cfg.head.kind {
                bail!(
                    "checkpoint head is {:?}, configured task is {:?}",
                    head.spec.kind,
                    cfg.head.kind
                );
            }
            let baseline: Option<Baseline> = extras
                .get(BASELINE_KEY)
                .map(|v| serde_json::from_value(v.clone()))
                .transpose()
                .context("reading the stored survival baseline")?;
            let ev = evaluate(&model, &ds, &cfg.eval_split, baseline.as_ref(), &cfg.eval)?;
            ev.report.write(&c.out, "report")?;
            let path = c.out.join("predictions.jsonl");
            write_jsonl(BufWriter::new(File::create(&path).with_context(|| path.display().to_string())?), &ev.predictions)?;
            if !ev.peaks.is_empty() {
                let path = c.out.join("peaks.jsonl");
                let mut w = BufWriter::new(File::create(&path).with_context(|| path.display().to_string())?);
                for p in &ev.peaks {
                    serde_json::to_writer(&mut w, p)?;
                    std::io::Write::write_all(&mut w, b"\n")?;
                }
            }
            Ok(json!({ "command": "eval", "out": c.out, "report": ev.report }))
        }
        Command::Attribute { common: c, record, label } => {
            let cfg = resolve(&c)?;
            let ds = dataset(&cfg)?;
            let (model, _) = required_checkpoint(&cfg)?;
            let batch = ds.batch(std::slice::from_ref(&record))?;
            let map = attribution_map(&model, &batch.signals, label)?;
            let scores = map.into_iter().next().context("attribution returned no rows")?;
            let path = c.out.join("attribution.csv");
            let mut text = String::from("t,score\n");
            for (t, s) in scores.iter().enumerate() {
                text.push_str(&format!("{t},{s}\n"));
            }
            std::fs::write(&path, text).with_context(|| path.display().to_string())?;
            Ok(json!({ "command": "attribute", "out": path, "record": record, "label": label, "rows": scores.len() }))
        }
    }
}

fn tune(c: &Common, mode: FinetuneMode) -> Result<Value> {
    let cfg = resolve(c)?;
    let ds = dataset(&cfg)?;
    let mut model = model_for(&cfg)?;
    let (trace, _) = finetune(&mut model, cfg.head.clone(), mode, &ds, &cfg.train_split, &cfg.finetune, Some(&c.out))?;
    let last = trace.last().context("fine-tuning ran no epochs")?;
    Ok(json!({
        "command": if mode == FinetuneMode::Full { "finetune" } else { "probe" },
        "out": c.out,
        "epochs": trace.len(),
        "loss": last.loss,
    }))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let summary = run(Cli::parse())?;
    println!("{summary}");
    Ok(())
}
