//! Pretraining and fine-tuning loops with CSV traces and checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::{clip_global_norm, lr_at, AdamW, AdamWConfig, ScheduleConfig};
use crate::data::{batch_order, Batch, Dataset};
use crate::downstream::heads::{rpeak_target, HeadKind, HeadSpec, Standardizer};
use crate::downstream::survival::{breslow, Baseline};
use crate::error::{Error, Result};
use crate::metrics::csv_err;
use crate::model::checkpoint;
use crate::model::least::{LeastModel, Mask};
use crate::tensor::{Tape, Tensor};

pub const TRACE_FILE: &str = "trace.csv";
/// Checkpoint extras key holding the survival baseline.
pub const BASELINE_KEY: &str = "survival_baseline";
/// Half-width in samples of the R-peak training target.
pub const RPEAK_TARGET_DILATION: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: f64,
    pub base_lr: f64,
    pub min_lr: f64,
    pub optimizer: AdamWConfig,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (pretraining only).
    pub checkpoint_every: Option<usize>,
}

impl TrainConfig {
    /// Desk-scale pretraining: batch 16, 50 epochs.
    pub fn tiny_pretrain() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 50,
            warmup_epochs: 5.0,
            base_lr: 1e-3,
            min_lr: 0.0,
            optimizer: AdamWConfig::default(),
            clip_norm: None,
            seed: 0,
            checkpoint_every: None,
        }
    }

    pub fn tiny_finetune() -> Self {
        TrainConfig {
            epochs: 30,
            warmup_epochs: 3.0,
            ..Self::tiny_pretrain()
        }
    }

    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            base_lr: self.base_lr,
            warmup_epochs: self.warmup_epochs,
            total_epochs: self.epochs as f64,
            min_lr: self.min_lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be at least 1".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        self.schedule().validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainRow {
    pub epoch: usize,
    pub loss: f64,
    pub loss_ssl: f64,
    pub loss_multi: f64,
    pub lr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRow {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneMode {
    Full,
    LinearProbe,
}

/// Values of one optimisation step.
#[derive(Clone, Debug)]
pub struct StepStats {
    pub loss: f64,
    pub loss_ssl: f64,
    pub loss_multi: f64,
    /// Gradients before clipping, in parameter order.
    pub grads: Vec<Tensor>,
}

fn check_shape(model: &LeastModel, ds: &Dataset) -> Result<()> {
    let want = (model.cfg.lead_count, model.cfg.input_len);
    match ds.shape() {
        Some(s) if s == want => Ok(()),
        Some(s) => Err(Error::Dimension(format!(
            "dataset records are {}×{}, model expects {}×{}",
            s.0, s.1, want.0, want.1
        ))),
        None => Err(Error::Data("dataset has no records".into())),
    }
}

/// Seed for the masks of one epoch.
fn mask_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (epoch as u64).wrapping_add(1)
}

fn apply(model: &mut LeastModel, opt: &mut AdamW, mut grads: Vec<Tensor>, lr: f64, clip: Option<f64>) -> Result<Vec<Tensor>> {
    let raw = grads.clone();
    if let Some(c) = clip {
        clip_global_norm(&mut grads, c);
    }
    opt.step(&mut model.store, &grads, lr)?;
    Ok(raw)
}

/// One masked-reconstruction step.
pub fn pretrain_step(
    model: &mut LeastModel,
    opt: &mut AdamW,
    signals: &Tensor,
    masks: &[Mask],
    lr: f64,
    clip: Option<f64>,
) -> Result<StepStats> {
    let mut t = Tape::new();
    let p = model.store.bind(&mut t, true);
    let out = model.forward_pretrain(&mut t, &p, signals, masks)?;
    t.backward(out.loss)?;
    let grads = model.store.grads(&t, &p);
    let stats = (
        t.value(out.loss).item(),
        t.value(out.loss_ssl).item(),
        out.loss_multi.map_or(0.0, |m| t.value(m).item()),
    );
    let grads = apply(model, opt, grads, lr, clip)?;
    Ok(StepStats {
        loss: stats.0,
        loss_ssl: stats.1,
        loss_multi: stats.2,
        grads,
    })
}

/// Pretrains `model` on `split`. With `out`, writes `trace.csv` and a
/// checkpoint (at the configured cadence and at the end).
pub fn pretrain(model: &mut LeastModel, ds: &Dataset, split: &str, cfg: &TrainConfig, out: Option<&Path>) -> Result<Vec<PretrainRow>> {
    cfg.validate()?;
    check_shape(model, ds)?;
    let ids = ds.split_ids(split)?.to_vec();
    let schedule = cfg.schedule();
    let mut opt = AdamW::new(&model.store, cfg.optimizer);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let groups = batch_order(&ids, cfg.batch_size, cfg.seed.wrapping_add(epoch as u64))?;
        let seed = mask_seed(cfg.seed, epoch);
        let (mut sum, mut sum_ssl, mut sum_multi, mut lr) = (0.0, 0.0, 0.0, 0.0);
        let mut offset = 0u64;
        for (k, group) in groups.iter().enumerate() {
            let batch = ds.batch(group)?;
            let masks = model.masks(group.len(), seed, offset)?;
            offset += group.len() as u64;
            lr = lr_at(epoch as f64 + k as f64 / groups.len() as f64, &schedule);
            let s = pretrain_step(model, &mut opt, &batch.signals, &masks, lr, cfg.clip_norm)?;
            sum += s.loss;
            sum_ssl += s.loss_ssl;
            sum_multi += s.loss_multi;
        }
        let n = groups.len() as f64;
        let row = PretrainRow {
            epoch: epoch + 1,
            loss: sum / n,
            loss_ssl: sum_ssl / n,
            loss_multi: sum_multi / n,
            lr,
        };
        log::info!(
            "pretrain epoch {} loss {:.6} ssl {:.6} multi {:.6}",
            row.epoch,
            row.loss,
            row.loss_ssl,
            row.loss_multi
        );
        trace.push(row);
        if let (Some(dir), Some(every)) = (out, cfg.checkpoint_every) {
            if every > 0 && (epoch + 1) % every == 0 && epoch + 1 < cfg.epochs {
                checkpoint::save(model, dir, step_extras(opt.steps_taken()))?;
            }
        }
    }
    if let Some(dir) = out {
        checkpoint::save(model, dir, step_extras(opt.steps_taken()))?;
        write_trace(&dir.join(TRACE_FILE), &trace)?;
    }
    Ok(trace)
}

fn step_extras(steps: u64) -> BTreeMap<String, serde_json::Value> {
    let mut m = BTreeMap::new();
    m.insert("steps".to_string(), serde_json::json!(steps));
    m
}

pub fn write_trace<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Task loss on one batch, with the head output for reuse.
pub fn task_loss(model: &LeastModel, t: &mut Tape, p: &crate::model::params::Bound, batch: &Batch) -> Result<crate::tensor::Var> {
    let head = model.head.as_ref().ok_or_else(|| Error::Usage("model has no task head attached".into()))?;
    let x = t.constant(batch.signals.clone());
    let (y, _) = model.forward_head_with(t, p, x, true)?;
    match head.spec.kind {
        HeadKind::Classification { labels } => {
            let target = batch
                .labels
                .as_ref()
                .ok_or_else(|| Error::Data("classification needs label vectors on every record".into()))?;
            if target.shape()[1] != labels {
                return Err(Error::Data(format!(
                    "dataset carries {} labels, head predicts {labels}",
                    target.shape()[1]
                )));
            }
            t.bce_with_logits(y, target)
        }
        HeadKind::Segmentation => {
            let peaks = batch
                .r_peaks
                .as_ref()
                .ok_or_else(|| Error::Data("segmentation needs r_peaks on every record".into()))?;
            let len = model.cfg.input_len;
            let rows: Vec<f64> = peaks.iter().flat_map(|pk| rpeak_target(pk, len, RPEAK_TARGET_DILATION)).collect();
            t.bce_with_logits(y, &Tensor::new(vec![peaks.len(), len], rows)?)
        }
        HeadKind::Survival => {
            let (times, events) = batch
                .survival
                .as_ref()
                .ok_or_else(|| Error::Data("survival needs follow-up on every record".into()))?;
            t.cox_loss(y, times, events)
        }
    }
}

/// Trains a task head (and, in full mode, the backbone) on `split`.
/// Survival runs also fit a Breslow baseline on the same split. With `out`,
/// writes `trace.csv` and the checkpoint.
pub fn finetune(
    model: &mut LeastModel,
    spec: HeadSpec,
    mode: FinetuneMode,
    ds: &Dataset,
    split: &str,
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<(Vec<FinetuneRow>, Option<Baseline>)> {
    cfg.validate()?;
    check_shape(model, ds)?;
    match &model.head {
        Some(h) if h.spec != spec => {
            return Err(Error::Usage(format!(
                "model carries a {} head, task asks for {}",
                h.spec.kind.task_name(),
                spec.kind.task_name()
            )))
        }
        Some(_) => {}
        None => {
            model.attach_head(spec, cfg.seed ^ 0x4845_4144)?;
            let ids = ds.split_ids(split)?.to_vec();
            let fitted = match model.head.as_ref() {
                Some(h) if h.is_pooled() => Some(Standardizer::fit(&pooled_features(model, ds, &ids, cfg.batch_size)?)?),
                _ => None,
            };
            if let Some(h) = model.head.as_mut() {
                h.standardizer = fitted;
            }
        }
    }
    match mode {
        FinetuneMode::Full => model.store.freeze_except(|_| true),
        FinetuneMode::LinearProbe => model.store.freeze_except(|n| n.starts_with("head.")),
    }
    let ids = ds.split_ids(split)?.to_vec();
    let schedule = cfg.schedule();
    let mut opt = AdamW::new(&model.store, cfg.optimizer);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let groups = batch_order(&ids, cfg.batch_size, cfg.seed.wrapping_add(epoch as u64))?;
        let (mut sum, mut lr) = (0.0, 0.0);
        for (k, group) in groups.iter().enumerate() {
            let batch = ds.batch(group)?;
            lr = lr_at(epoch as f64 + k as f64 / groups.len() as f64, &schedule);
            let mut t = Tape::new();
            let p = model.store.bind(&mut t, true);
            let loss = task_loss(model, &mut t, &p, &batch)?;
            t.backward(loss)?;
            sum += t.value(loss).item();
            let grads = model.store.grads(&t, &p);
            apply(model, &mut opt, grads, lr, cfg.clip_norm)?;
        }
        let row = FinetuneRow {
            epoch: epoch + 1,
            loss: sum / groups.len() as f64,
            lr,
        };
        log::info!("finetune epoch {} loss {:.6}", row.epoch, row.loss);
        trace.push(row);
    }
    if model.head.as_ref().is_some_and(|h| h.standardizer.is_some()) {
        let fitted = Standardizer::fit(&pooled_features(model, ds, &ids, cfg.batch_size)?)?;
        if let Some(h) = model.head.as_mut() {
            h.standardizer = Some(fitted);
        }
    }
    let baseline = match spec.kind {
        HeadKind::Survival => {
            let (times, events, risks) = survival_outputs(model, ds, &ids, cfg.batch_size)?;
            Some(breslow(&times, &events, &risks)?)
        }
        _ => None,
    };
    if let Some(dir) = out {
        let mut extras = step_extras(opt.steps_taken());
        if let Some(b) = &baseline {
            extras.insert(BASELINE_KEY.to_string(), serde_json::to_value(b)?);
        }
        checkpoint::save(model, dir, extras)?;
        write_trace(&dir.join(TRACE_FILE), &trace)?;
    }
    Ok((trace, baseline))
}

/// Pooled encoder features (before standardization) for `ids` in order.
pub fn pooled_features(model: &LeastModel, ds: &Dataset, ids: &[String], batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let head = model.head.as_ref().ok_or_else(|| Error::Usage("model has no task head attached".into()))?;
    let mut rows = Vec::with_capacity(ids.len());
    for group in ids.chunks(batch_size.max(1)) {
        let batch = ds.batch(group)?;
        let mut t = Tape::new();
        let p = model.store.bind(&mut t, false);
        let x = t.constant(batch.signals);
        let enc = model.features(&mut t, &p, x)?;
        let pooled = head.pool(&mut t, enc.final_out)?;
        let v = t.value(pooled);
        rows.extend(v.data().chunks(v.shape()[1]).map(<[f64]>::to_vec));
    }
    Ok(rows)
}

/// Raw head outputs for `ids` in order, one row per record.
pub fn head_outputs(model: &LeastModel, ds: &Dataset, ids: &[String], batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::with_capacity(ids.len());
    for group in ids.chunks(batch_size.max(1)) {
        let batch = ds.batch(group)?;
        let mut t = Tape::new();
        let p = model.store.bind(&mut t, false);
        let x = t.constant(batch.signals);
        let (y, _) = model.forward_head(&mut t, &p, x)?;
        let v = t.value(y);
        let width = v.numel() / group.len();
        rows.extend(v.data().chunks(width).map(<[f64]>::to_vec));
    }
    Ok(rows)
}

fn survival_outputs(model: &LeastModel, ds: &Dataset, ids: &[String], bs: usize) -> Result<(Vec<f64>, Vec<bool>, Vec<f64>)> {
    let risks: Vec<f64> = head_outputs(model, ds, ids, bs)?.into_iter().map(|r| r[0]).collect();
    let mut times = Vec::with_capacity(ids.len());
    let mut events = Vec::with_capacity(ids.len());
    for id in ids {
        let s = ds
            .entry(id)?
            .survival
            .ok_or_else(|| Error::Data(format!("record {id} has no follow-up")))?;
        times.push(s.time_days);
        events.push(s.event);
    }
    Ok((times, events, risks))
}
