//! Evaluation metrics: AUROC, multi-label F1/accuracy, R-peak detection
//! scores, Harrell's C-index and the Brier score.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mann–Whitney AUROC via average ranks; ties count one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!("auroc: {} scores, {} labels", scores.len(), labels.len())));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Evaluation("auroc needs both classes".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("auroc: non-finite score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < order.len() {
        let mut j = k;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[k]] {
            j += 1;
        }
        // 1-based average rank of the tie group
        let avg = (k + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[k..=j].iter().filter(|&&i| labels[i]).count() as f64;
        k = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Macro AUROC over label columns, skipping single-class labels. Returns the
/// mean and the number of skipped labels.
pub fn auroc_macro(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<(f64, usize)> {
    let k = check_matrix(scores.len(), labels.len(), scores.iter().map(Vec::len), labels.iter().map(Vec::len))?;
    let mut total = 0.0;
    let mut used = 0;
    for c in 0..k {
        let s: Vec<f64> = scores.iter().map(|r| r[c]).collect();
        let l: Vec<bool> = labels.iter().map(|r| r[c]).collect();
        match auroc(&s, &l) {
            Ok(v) => {
                total += v;
                used += 1;
            }
            Err(Error::Evaluation(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::Evaluation("every label has a single class; auroc undefined".into()));
    }
    Ok((total / used as f64, k - used))
}

fn check_matrix(
    rows_a: usize,
    rows_b: usize,
    mut widths_a: impl Iterator<Item = usize>,
    widths_b: impl Iterator<Item = usize>,
) -> Result<usize> {
    if rows_a != rows_b || rows_a == 0 {
        return Err(Error::Dimension(format!("matrices have {rows_a} and {rows_b} rows")));
    }
    let k = widths_a.next().unwrap_or(0);
    if widths_a.any(|w| w != k) || widths_b.into_iter().any(|w| w != k) {
        return Err(Error::Dimension("prediction and truth widths differ".into()));
    }
    Ok(k)
}

/// Element-wise accuracy and macro F1. A label with no positives in either
/// matrix scores F1 = 0.
pub fn multilabel_f1_acc(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<(f64, f64)> {
    let k = check_matrix(pred.len(), truth.len(), pred.iter().map(Vec::len), truth.iter().map(Vec::len))?;
    if k == 0 {
        return Err(Error::Dimension("no label columns".into()));
    }
    let mut agree = 0usize;
    let mut f1 = 0.0;
    for c in 0..k {
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        for (p, t) in pred.iter().zip(truth) {
            match (p[c], t[c]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                (false, false) => {}
            }
            agree += (p[c] == t[c]) as usize;
        }
        let denom = 2 * tp + fp + fneg;
        if denom > 0 {
            f1 += 2.0 * tp as f64 / denom as f64;
        }
    }
    Ok((agree as f64 / (pred.len() * k) as f64, f1 / k as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakScores {
    pub true_positives: usize,
    pub sensitivity: f64,
    pub ppv: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PeakMatching {
    pub matched: Vec<(usize, usize)>,
    pub missed: Vec<usize>,
    pub spurious: Vec<usize>,
}

/// One-to-one matching of sorted predictions to sorted truth within
/// `window_ms`. Greedy: each truth peak, in time order, takes the nearest
/// unmatched prediction (earlier wins ties). Optimal: each truth peak takes
/// the earliest unmatched prediction in range, which maximises the match
/// count on a line.
pub fn match_peaks(pred: &[usize], truth: &[usize], rate_hz: f64, window_ms: f64, optimal: bool) -> PeakMatching {
    let w = window_ms * rate_hz / 1000.0;
    let within = |p: usize, t: usize| (p as f64 - t as f64).abs() <= w + 1e-9;
    let mut used = vec![false; pred.len()];
    let mut out = PeakMatching::default();
    for &t in truth {
        let mut best: Option<usize> = None;
        for (k, &p) in pred.iter().enumerate() {
            if used[k] || !within(p, t) {
                continue;
            }
            if optimal {
                best = Some(k);
                break;
            }
            let d = (p as f64 - t as f64).abs();
            if best.is_none_or(|b| d < (pred[b] as f64 - t as f64).abs()) {
                best = Some(k);
            }
        }
        match best {
            Some(k) => {
                used[k] = true;
                out.matched.push((pred[k], t));
            }
            None => out.missed.push(t),
        }
    }
    out.spurious = pred.iter().zip(&used).filter(|(_, &u)| !u).map(|(&p, _)| p).collect();
    out
}

/// Sensitivity, PPV and F1 under a ±`window_ms` tolerance. Empty truth with
/// empty predictions scores 1 everywhere; any other empty side scores 0.
pub fn rpeak_metrics(pred: &[usize], truth: &[usize], rate_hz: f64, window_ms: f64, optimal: bool) -> PeakScores {
    if pred.is_empty() && truth.is_empty() {
        return PeakScores {
            true_positives: 0,
            sensitivity: 1.0,
            ppv: 1.0,
            f1: 1.0,
        };
    }
    let tp = match_peaks(pred, truth, rate_hz, window_ms, optimal).matched.len();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let se = ratio(tp, truth.len());
    let ppv = ratio(tp, pred.len());
    let f1 = if se + ppv > 0.0 { 2.0 * se * ppv / (se + ppv) } else { 0.0 };
    PeakScores {
        true_positives: tp,
        sensitivity: se,
        ppv,
        f1,
    }
}

/// Harrell's concordance index with its comparable-pair count.
pub fn c_index(times: &[f64], events: &[bool], risks: &[f64]) -> Result<(f64, u64)> {
    let n = times.len();
    if events.len() != n || risks.len() != n {
        return Err(Error::Dimension(format!("c_index: {n} times, {} events, {} risks", events.len(), risks.len())));
    }
    // rank risks for a Fenwick tree over subjects seen so far
    let mut sorted_r: Vec<f64> = risks.to_vec();
    sorted_r.sort_by(f64::total_cmp);
    sorted_r.dedup();
    let rank = |r: f64| sorted_r.partition_point(|&x| x < r);
    let mut tree = vec![0u64; sorted_r.len() + 1];
    let add = |tree: &mut Vec<u64>, i: usize| {
        let mut i = i + 1;
        while i < tree.len() {
            tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    };
    // count of inserted ranks < i
    let below = |tree: &Vec<u64>, i: usize| {
        let mut i = i;
        let mut s = 0;
        while i > 0 {
            s += tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let (mut conc2, mut pairs, mut inserted) = (0u64, 0u64, 0u64);
    let mut k = 0;
    while k < n {
        let mut j = k;
        while j < n && times[order[j]] == times[order[k]] {
            j += 1;
        }
        for &i in &order[k..j] {
            if events[i] {
                let r = rank(risks[i]);
                let lower = below(&tree, r);
                let tied = below(&tree, r + 1) - lower;
                conc2 += 2 * lower + tied;
                pairs += inserted;
            }
        }
        for &i in &order[k..j] {
            add(&mut tree, rank(risks[i]));
            inserted += 1;
        }
        k = j;
    }
    if pairs == 0 {
        return Err(Error::Evaluation("c_index: no comparable pairs".into()));
    }
    Ok((conc2 as f64 / (2 * pairs) as f64, pairs))
}

/// Unweighted Brier score at `horizon`. Subjects censored at or before the
/// horizon are excluded. Returns the score and the usable count.
pub fn brier(surv_at_h: &[f64], times: &[f64], events: &[bool], horizon: f64) -> Result<(f64, usize)> {
    let n = times.len();
    if surv_at_h.len() != n || events.len() != n {
        return Err(Error::Dimension(format!("brier: {} predictions for {n} subjects", surv_at_h.len())));
    }
    let mut total = 0.0;
    let mut used = 0;
    for i in 0..n {
        let outcome = if times[i] > horizon {
            1.0
        } else if events[i] {
            0.0
        } else {
            continue;
        };
        total += (outcome - surv_at_h[i]).powi(2);
        used += 1;
    }
    if used == 0 {
        return Err(Error::Evaluation(format!("brier: no usable subjects at horizon {horizon}")));
    }
    Ok((total / used as f64, used))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub metrics: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, u64>,
}

impl MetricReport {
    pub fn new(task: &str) -> Self {
        MetricReport {
            task: task.to_string(),
            metrics: BTreeMap::new(),
            counts: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (k, v) in &self.metrics {
            if !v.is_finite() {
                return Err(Error::Numeric(format!("metric {k} is not finite")));
            }
        }
        Ok(())
    }

    /// Writes `<stem>.json` and a one-row `<stem>.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        self.validate()?;
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(&json, e))?;
        let path = dir.join(format!("{stem}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        let mut header = vec!["task".to_string()];
        header.extend(self.metrics.keys().cloned());
        header.extend(self.counts.keys().map(|k| format!("n_{k}")));
        let mut row = vec![self.task.clone()];
        row.extend(self.metrics.values().map(|v| format!("{v}")));
        row.extend(self.counts.values().map(u64::to_string));
        w.write_record(&header).map_err(|e| csv_err(&path, e))?;
        w.write_record(&row).map_err(|e| csv_err(&path, e))?;
        w.flush().map_err(|e| Error::io(&path, e))
    }
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}
