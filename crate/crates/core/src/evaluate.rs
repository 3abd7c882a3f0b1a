//! Runs a trained head over a split and scores it.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::downstream::heads::HeadKind;
use crate::downstream::predictions::{Payload, Prediction};
use crate::downstream::rpeaks::{detect_rpeaks, RPeakPostConfig};
use crate::downstream::survival::{median_event_time, survival_curve, Baseline};
use crate::error::{Error, Result};
use crate::metrics::{auroc_macro, brier, c_index, match_peaks, multilabel_f1_acc, MetricReport};
use crate::model::least::LeastModel;
use crate::train::head_outputs;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub batch_size: usize,
    pub rpeak: RPeakPostConfig,
    /// Peak matching by maximum cardinality instead of greedy nearest.
    pub optimal_matching: bool,
    /// Brier horizon in days; defaults to the median event time of the split.
    pub horizon: Option<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            batch_size: 16,
            rpeak: RPeakPostConfig::default(),
            optimal_matching: false,
            horizon: None,
        }
    }
}

/// Matched, missed and spurious peaks of one record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeakListing {
    pub id: String,
    pub matched: Vec<(usize, usize)>,
    pub missed: Vec<usize>,
    pub spurious: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub predictions: Vec<Prediction>,
    pub peaks: Vec<PeakListing>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn evaluate(model: &LeastModel, ds: &Dataset, split: &str, baseline: Option<&Baseline>, opts: &EvalOptions) -> Result<Evaluation> {
    let head = model.head.as_ref().ok_or_else(|| Error::Usage("checkpoint has no task head".into()))?;
    let ids = ds.split_ids(split)?.to_vec();
    if ids.is_empty() {
        return Err(Error::Data(format!("split {split} is empty")));
    }
    let outputs = head_outputs(model, ds, &ids, opts.batch_size)?;
    let task = head.spec.kind.task_name();
    let mut report = MetricReport::new(task);
    let mut predictions = Vec::with_capacity(ids.len());
    let mut peaks = Vec::new();
    report.counts.insert("samples".into(), ids.len() as u64);
    match head.spec.kind {
        HeadKind::Classification { labels } => {
            let mut probs = Vec::with_capacity(ids.len());
            let mut truth = Vec::with_capacity(ids.len());
            for (id, row) in ids.iter().zip(&outputs) {
                let lv = ds
                    .entry(id)?
                    .label_vector
                    .clone()
                    .ok_or_else(|| Error::Data(format!("record {id} has no labels")))?;
                if lv.len() != labels {
                    return Err(Error::Data(format!("record {id} has {} labels, head predicts {labels}", lv.len())));
                }
                let p: Vec<f64> = row.iter().map(|&l| sigmoid(l)).collect();
                truth.push(lv.iter().map(|&v| v >= 0.5).collect::<Vec<bool>>());
                predictions.push(Prediction {
                    id: id.clone(),
                    task: task.into(),
                    payload: Payload::Classification { probabilities: p.clone() },
                });
                probs.push(p);
            }
            let pred: Vec<Vec<bool>> = probs.iter().map(|r| r.iter().map(|&p| p >= 0.5).collect()).collect();
            let (acc, f1) = multilabel_f1_acc(&pred, &truth)?;
            let (auc, skipped) = auroc_macro(&probs, &truth)?;
            report.metrics.insert("accuracy".into(), acc);
            report.metrics.insert("auroc_macro".into(), auc);
            report.metrics.insert("f1_macro".into(), f1);
            report.counts.insert("labels".into(), labels as u64);
            report.counts.insert("labels_skipped".into(), skipped as u64);
        }
        HeadKind::Segmentation => {
            let (mut tp, mut n_truth, mut n_pred) = (0usize, 0usize, 0usize);
            for (id, row) in ids.iter().zip(&outputs) {
                let e = ds.entry(id)?;
                let truth = e
                    .r_peaks
                    .clone()
                    .ok_or_else(|| Error::Data(format!("record {id} has no r_peaks")))?;
                let act: Vec<f64> = row.iter().map(|&l| sigmoid(l)).collect();
                let found = detect_rpeaks(&act, e.sampling_rate_hz, &opts.rpeak)?;
                let m = match_peaks(&found, &truth, e.sampling_rate_hz, opts.rpeak.match_window_ms, opts.optimal_matching);
                tp += m.matched.len();
                n_truth += truth.len();
                n_pred += found.len();
                peaks.push(PeakListing {
                    id: id.clone(),
                    matched: m.matched,
                    missed: m.missed,
                    spurious: m.spurious,
                });
                predictions.push(Prediction {
                    id: id.clone(),
                    task: task.into(),
                    payload: Payload::Segmentation { peaks: found },
                });
            }
            let ratio = |a: usize, b: usize| if b == 0 { (a == 0) as u8 as f64 } else { a as f64 / b as f64 };
            let se = ratio(tp, n_truth);
            let ppv = ratio(tp, n_pred);
            let f1 = if se + ppv > 0.0 { 2.0 * se * ppv / (se + ppv) } else { 0.0 };
            report.metrics.insert("sensitivity".into(), se);
            report.metrics.insert("ppv".into(), ppv);
            report.metrics.insert("f1".into(), f1);
            report.counts.insert("matched_peaks".into(), tp as u64);
            report.counts.insert("true_peaks".into(), n_truth as u64);
            report.counts.insert("predicted_peaks".into(), n_pred as u64);
        }
        HeadKind::Survival => {
            let baseline = baseline.ok_or_else(|| Error::Usage("survival evaluation needs the training baseline".into()))?;
            let risks: Vec<f64> = outputs.iter().map(|r| r[0]).collect();
            let mut times = Vec::with_capacity(ids.len());
            let mut events = Vec::with_capacity(ids.len());
            for id in &ids {
                let s = ds
                    .entry(id)?
                    .survival
                    .ok_or_else(|| Error::Data(format!("record {id} has no follow-up")))?;
                times.push(s.time_days);
                events.push(s.event);
            }
            let horizon = match opts.horizon {
                Some(h) => h,
                None => median_event_time(&times, &events)?,
            };
            let surv: Vec<f64> = risks.iter().map(|&r| survival_curve(r, baseline, horizon)).collect();
            let (c, pairs) = c_index(&times, &events, &risks)?;
            let (b, usable) = brier(&surv, &times, &events, horizon)?;
            for ((id, &r), &s) in ids.iter().zip(&risks).zip(&surv) {
                predictions.push(Prediction {
                    id: id.clone(),
                    task: task.into(),
                    payload: Payload::Survival {
                        risk: r,
                        horizon,
                        survival_at_horizon: s,
                    },
                });
            }
            report.metrics.insert("c_index".into(), c);
            report.metrics.insert("brier".into(), b);
            report.metrics.insert("horizon_days".into(), horizon);
            report.counts.insert("comparable_pairs".into(), pairs);
            report.counts.insert("brier_subjects".into(), usable as u64);
        }
    }
    report.validate()?;
    Ok(Evaluation {
        report,
        predictions,
        peaks,
    })
}
