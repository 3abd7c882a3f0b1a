//! Deterministic synthetic 12-lead ECG built from Gaussian P/Q/R/S/T waves.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{SignalRecord, Survival};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub amplitude: f64,
    pub width_s: f64,
    /// Centre relative to the R apex.
    pub offset_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassMode {
    Normal,
    AfLike,
}

impl ClassMode {
    pub fn label_vector(self) -> Vec<f64> {
        match self {
            ClassMode::Normal => vec![1.0, 0.0],
            ClassMode::AfLike => vec![0.0, 1.0],
        }
    }
}

pub const LABEL_NAMES: [&str; 2] = ["normal", "af_like"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub rate_hz: f64,
    pub duration_s: f64,
    pub mean_hr_bpm: f64,
    /// Per-record heart rate is drawn uniformly within ± this spread.
    pub hr_spread_bpm: f64,
    /// Standard deviation of each RR interval as a fraction of the mean.
    pub rr_jitter: f64,
    /// RR jitter used instead of `rr_jitter` in `af_like` mode.
    pub af_rr_jitter: f64,
    pub p: Wave,
    pub q: Wave,
    pub r: Wave,
    pub s: Wave,
    pub t: Wave,
    pub lead_gains: [f64; 12],
    pub noise_sigma: f64,
    pub mode: ClassMode,
    pub base_hazard_per_day: f64,
    /// Log-hazard increase per unit of RR coefficient of variation.
    pub hazard_coef: f64,
    pub follow_up_days: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            rate_hz: 500.0,
            duration_s: 10.0,
            mean_hr_bpm: 70.0,
            hr_spread_bpm: 10.0,
            rr_jitter: 0.03,
            af_rr_jitter: 0.15,
            p: Wave { amplitude: 0.15, width_s: 0.025, offset_s: -0.2 },
            q: Wave { amplitude: -0.12, width_s: 0.010, offset_s: -0.035 },
            r: Wave { amplitude: 1.0, width_s: 0.012, offset_s: 0.0 },
            s: Wave { amplitude: -0.25, width_s: 0.012, offset_s: 0.035 },
            t: Wave { amplitude: 0.3, width_s: 0.05, offset_s: 0.3 },
            lead_gains: [1.0, 1.2, 0.4, -0.9, 0.5, 0.8, -0.5, -0.3, 0.6, 1.1, 1.0, 0.8],
            noise_sigma: 0.02,
            mode: ClassMode::Normal,
            base_hazard_per_day: 1.0 / 1500.0,
            hazard_coef: 12.0,
            follow_up_days: 1000.0,
        }
    }
}

/// Noise-free single-lead components of a synthetic record.
#[derive(Clone, Debug)]
pub struct SynthParts {
    /// P, Q, R, S and T wave trains in that order.
    pub waves: [Vec<f64>; 5],
    pub rr_s: Vec<f64>,
}

/// Generates one record. Identical `(params, seed)` give identical output.
pub fn synth_ecg(params: &SynthParams, seed: u64) -> Result<SignalRecord> {
    synth_ecg_with_parts(params, seed).map(|(rec, _)| rec)
}

pub fn synth_ecg_with_parts(params: &SynthParams, seed: u64) -> Result<(SignalRecord, SynthParts)> {
    if !(params.rate_hz > 0.0 && params.duration_s > 0.0) {
        return Err(Error::Config(format!(
            "synthesis needs positive rate and duration, got {} Hz and {} s",
            params.rate_hz, params.duration_s
        )));
    }
    if !(params.mean_hr_bpm > 0.0) || params.hr_spread_bpm >= params.mean_hr_bpm {
        return Err(Error::Config("mean heart rate must be positive and exceed its spread".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (params.duration_s * params.rate_hz).round() as usize;
    let rate = params.rate_hz;

    let hr = if params.hr_spread_bpm > 0.0 {
        params.mean_hr_bpm + rng.random_range(-params.hr_spread_bpm..params.hr_spread_bpm)
    } else {
        params.mean_hr_bpm
    };
    let rr_mean = 60.0 / hr;
    let jitter = match params.mode {
        ClassMode::Normal => params.rr_jitter,
        ClassMode::AfLike => params.af_rr_jitter,
    };

    // beat times, first apex at a random phase within one mean interval
    let mut apexes = Vec::new();
    let mut rr_s = Vec::new();
    let mut t = rng.random::<f64>() * rr_mean;
    loop {
        let idx = (t * rate).round() as usize;
        if idx >= n {
            break;
        }
        if apexes.last().is_none_or(|&last| idx > last) {
            apexes.push(idx);
        }
        let z: f64 = StandardNormal.sample(&mut rng);
        let rr = (rr_mean * (1.0 + jitter * z)).max(0.3 * rr_mean);
        rr_s.push(rr);
        t += rr;
    }
    rr_s.truncate(apexes.len().saturating_sub(1));

    let p_amp = match params.mode {
        ClassMode::Normal => params.p.amplitude,
        ClassMode::AfLike => 0.0,
    };
    let specs = [
        Wave { amplitude: p_amp, ..params.p },
        params.q,
        params.r,
        params.s,
        params.t,
    ];
    let waves = specs.map(|w| {
        let mut train = vec![0.0; n];
        if w.amplitude == 0.0 {
            return train;
        }
        let sigma = w.width_s * rate;
        let reach = (5.0 * sigma).ceil() as isize;
        for &apex in &apexes {
            let centre = apex as f64 + w.offset_s * rate;
            let c = centre.round() as isize;
            for i in (c - reach).max(0)..(c + reach + 1).min(n as isize) {
                let d = (i as f64 - centre) / sigma;
                train[i as usize] += w.amplitude * (-0.5 * d * d).exp();
            }
        }
        train
    });
    let template: Vec<f64> = (0..n).map(|i| waves.iter().map(|w| w[i]).sum()).collect();

    let mut leads = Vec::with_capacity(12);
    for &g in &params.lead_gains {
        let lead = template
            .iter()
            .map(|&v| {
                let noise = if params.noise_sigma > 0.0 {
                    params.noise_sigma * Distribution::<f64>::sample(&StandardNormal, &mut rng)
                } else {
                    0.0
                };
                g * v + noise
            })
            .collect();
        leads.push(lead);
    }

    let cv = if rr_s.len() >= 2 {
        let m = rr_s.iter().sum::<f64>() / rr_s.len() as f64;
        let var = rr_s.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / rr_s.len() as f64;
        var.sqrt() / m
    } else {
        0.0
    };
    let hazard = params.base_hazard_per_day * (params.hazard_coef * cv).exp();
    let draw: f64 = Exp::new(hazard)
        .map_err(|e| Error::Config(format!("invalid hazard {hazard}: {e}")))?
        .sample(&mut rng);
    let survival = if draw < params.follow_up_days {
        Survival { time_days: draw.max(1e-3), event: true }
    } else {
        Survival { time_days: params.follow_up_days, event: false }
    };

    let record = SignalRecord {
        id: format!("synth_{seed}"),
        leads,
        sampling_rate_hz: rate,
        label_vector: Some(params.mode.label_vector()),
        r_peaks: Some(apexes),
        survival: Some(survival),
    };
    Ok((record, SynthParts { waves, rr_s }))
}
