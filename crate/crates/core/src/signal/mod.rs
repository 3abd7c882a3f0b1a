//! Record preprocessing: lead ordering, resampling, segmentation, NaN
//! screening, band-pass filtering and min-max scaling, plus a synthetic
//! ECG generator.

pub mod butterworth;
pub mod synth;

use serde::{Deserialize, Serialize};

pub use butterworth::BandPass;
pub use synth::{synth_ecg, synth_ecg_with_parts, ClassMode, SynthParams, Wave};

use crate::error::{Error, Result};

pub const CANONICAL_LEADS: [&str; 12] = [
    "I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Survival {
    pub time_days: f64,
    pub event: bool,
}

/// One multi-lead recording, `leads[l][t]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalRecord {
    pub id: String,
    pub leads: Vec<Vec<f64>>,
    pub sampling_rate_hz: f64,
    pub label_vector: Option<Vec<f64>>,
    pub r_peaks: Option<Vec<usize>>,
    pub survival: Option<Survival>,
}

impl SignalRecord {
    pub fn lead_count(&self) -> usize {
        self.leads.len()
    }

    pub fn len(&self) -> usize {
        self.leads.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn map_leads(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> SignalRecord {
        SignalRecord {
            leads: self.leads.iter().map(|l| f(l)).collect(),
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub target_hz: f64,
    pub segment_seconds: f64,
    pub nan_fraction_limit: f64,
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub filter_order: usize,
    /// Lead names of the incoming rows, in row order.
    pub lead_order: Vec<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            target_hz: 100.0,
            segment_seconds: 10.0,
            nan_fraction_limit: 0.05,
            band_low_hz: 0.5,
            band_high_hz: 45.0,
            filter_order: 3,
            lead_order: CANONICAL_LEADS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl PipelineConfig {
    pub fn segment_len(&self) -> usize {
        (self.segment_seconds * self.target_hz).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.target_hz > 0.0) {
            problems.push(format!("target_hz must be positive, got {}", self.target_hz));
        }
        if !(self.segment_seconds > 0.0) {
            problems.push(format!("segment_seconds must be positive, got {}", self.segment_seconds));
        }
        if !(0.0..=1.0).contains(&self.nan_fraction_limit) {
            problems.push(format!("nan_fraction_limit must lie in [0,1], got {}", self.nan_fraction_limit));
        }
        if !(self.band_low_hz > 0.0 && self.band_low_hz < self.band_high_hz && self.band_high_hz < self.target_hz / 2.0) {
            problems.push(format!(
                "band {}–{} Hz must satisfy 0 < low < high < target_hz/2",
                self.band_low_hz, self.band_high_hz
            ));
        }
        if self.filter_order == 0 {
            problems.push("filter_order must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Reorders rows into the canonical 12-lead order.
pub fn standardize_leads<S: AsRef<str>>(rec: &SignalRecord, source_order: &[S]) -> Result<SignalRecord> {
    if source_order.len() != rec.lead_count() {
        return Err(Error::Signal(format!(
            "{} lead names for {} rows",
            source_order.len(),
            rec.lead_count()
        )));
    }
    let mut row_of = [None; 12];
    for (row, name) in source_order.iter().enumerate() {
        let name = name.as_ref();
        let slot = CANONICAL_LEADS
            .iter()
            .position(|&c| c == name)
            .ok_or_else(|| Error::Signal(format!("unknown lead {name}")))?;
        if row_of[slot].replace(row).is_some() {
            return Err(Error::Signal(format!("duplicate lead {name}")));
        }
    }
    let mut leads = Vec::with_capacity(12);
    for (slot, row) in row_of.iter().enumerate() {
        let row = row.ok_or_else(|| Error::Signal(format!("missing lead {}", CANONICAL_LEADS[slot])))?;
        leads.push(rec.leads[row].clone());
    }
    Ok(SignalRecord { leads, ..rec.clone() })
}

/// Linear-interpolation resampling onto a uniform grid at `target_hz`.
pub fn resample(rec: &SignalRecord, target_hz: f64) -> Result<SignalRecord> {
    if !(target_hz > 0.0) {
        return Err(Error::Config(format!("target rate must be positive, got {target_hz}")));
    }
    let src = rec.sampling_rate_hz;
    if !(src > 0.0) {
        return Err(Error::Signal(format!("record {} has non-positive rate {src}", rec.id)));
    }
    if target_hz == src {
        return Ok(rec.clone());
    }
    let t = rec.len();
    let m = (t as f64 * target_hz / src).round() as usize;
    let ratio = src / target_hz;
    let mut out = rec.map_leads(|x| {
        (0..m)
            .map(|i| {
                let pos = i as f64 * ratio;
                let lo = (pos.floor() as usize).min(t - 1);
                let frac = pos - lo as f64;
                // exact grid hits take the sample itself so a NaN stays local
                if frac <= 0.0 || lo + 1 >= t {
                    x[lo]
                } else {
                    x[lo] * (1.0 - frac) + x[lo + 1] * frac
                }
            })
            .collect()
    });
    out.sampling_rate_hz = target_hz;
    out.r_peaks = rec.r_peaks.as_ref().map(|peaks| {
        let mut mapped: Vec<usize> = peaks
            .iter()
            .map(|&p| ((p as f64 / ratio).round() as usize).min(m.saturating_sub(1)))
            .collect();
        mapped.dedup();
        mapped
    });
    Ok(out)
}

/// Splits into consecutive non-overlapping windows; the remainder is dropped.
pub fn segment(rec: &SignalRecord, seconds: f64) -> Vec<SignalRecord> {
    let w = (seconds * rec.sampling_rate_hz).round() as usize;
    if w == 0 {
        return Vec::new();
    }
    (0..rec.len() / w)
        .map(|k| {
            let span = k * w..(k + 1) * w;
            SignalRecord {
                id: format!("{}_seg{k}", rec.id),
                leads: rec.leads.iter().map(|l| l[span.clone()].to_vec()).collect(),
                sampling_rate_hz: rec.sampling_rate_hz,
                label_vector: rec.label_vector.clone(),
                r_peaks: rec
                    .r_peaks
                    .as_ref()
                    .map(|p| p.iter().filter(|&&i| span.contains(&i)).map(|&i| i - span.start).collect()),
                survival: rec.survival,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Sanitized {
    Accepted(SignalRecord),
    Rejected { fraction: f64 },
}

/// Accepts a record whose non-finite fraction is strictly below `limit`,
/// with those samples zeroed.
pub fn sanitize(rec: &SignalRecord, limit: f64) -> Sanitized {
    let total = rec.lead_count() * rec.len();
    let bad = rec.leads.iter().flatten().filter(|v| !v.is_finite()).count();
    let fraction = if total == 0 { 0.0 } else { bad as f64 / total as f64 };
    if fraction < limit {
        Sanitized::Accepted(rec.map_leads(|l| l.iter().map(|&v| if v.is_finite() { v } else { 0.0 }).collect()))
    } else {
        Sanitized::Rejected { fraction }
    }
}

/// Zero-phase Butterworth band-pass of every lead.
pub fn butterworth_bandpass(rec: &SignalRecord, low_hz: f64, high_hz: f64, order: usize) -> Result<SignalRecord> {
    let bp = BandPass::design(low_hz, high_hz, order, rec.sampling_rate_hz)?;
    let leads = rec.leads.iter().map(|l| bp.filtfilt(l)).collect::<Result<Vec<_>>>()?;
    Ok(SignalRecord { leads, ..rec.clone() })
}

/// Joint min-max scaling over all leads; a constant record maps to 0.5.
pub fn minmax_normalize(rec: &SignalRecord) -> SignalRecord {
    let (lo, hi) = rec
        .leads
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return rec.map_leads(|l| vec![0.5; l.len()]);
    }
    rec.map_leads(|l| l.iter().map(|&v| ((v - lo) / range).clamp(0.0, 1.0)).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub accepted: usize,
    pub rejected: usize,
}

#[derive(Clone, Debug)]
pub struct Preprocessed {
    pub segments: Vec<SignalRecord>,
    pub summary: PipelineSummary,
}

/// standardize → resample → segment → sanitize → filter → normalize.
pub fn preprocess(rec: &SignalRecord, cfg: &PipelineConfig) -> Result<Preprocessed> {
    cfg.validate()?;
    let rec = standardize_leads(rec, &cfg.lead_order).map_err(|e| e.in_stage("standardize"))?;
    let rec = resample(&rec, cfg.target_hz).map_err(|e| e.in_stage("resample"))?;
    let mut out = Preprocessed {
        segments: Vec::new(),
        summary: PipelineSummary::default(),
    };
    for seg in segment(&rec, cfg.segment_seconds) {
        let seg = match sanitize(&seg, cfg.nan_fraction_limit) {
            Sanitized::Accepted(s) => s,
            Sanitized::Rejected { fraction } => {
                log::debug!("{}: rejected, {:.1}% non-finite", seg.id, 100.0 * fraction);
                out.summary.rejected += 1;
                continue;
            }
        };
        let seg = butterworth_bandpass(&seg, cfg.band_low_hz, cfg.band_high_hz, cfg.filter_order)
            .map_err(|e| e.in_stage("filter"))?;
        out.segments.push(minmax_normalize(&seg));
        out.summary.accepted += 1;
    }
    Ok(out)
}
