//! R-peak extraction from a segmentation activation trace.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RPeakPostConfig {
    /// Minimum prominence as a fraction of the activation range.
    pub min_prominence: f64,
    pub refractory_ms: f64,
    pub max_qrs_ms: f64,
    pub match_window_ms: f64,
    /// A second maximum within one QRS width counts as the same complex
    /// when its height is at least this fraction of the first.
    pub twin_ratio: f64,
    /// Report midpoints between consecutive surviving candidates instead
    /// of one position per QRS cluster.
    pub literal_midpoint: bool,
}

impl Default for RPeakPostConfig {
    fn default() -> Self {
        RPeakPostConfig {
            min_prominence: 0.1,
            refractory_ms: 200.0,
            max_qrs_ms: 120.0,
            match_window_ms: 75.0,
            twin_ratio: 0.9,
            literal_midpoint: false,
        }
    }
}

impl RPeakPostConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.refractory_ms > self.max_qrs_ms && self.max_qrs_ms > 0.0) {
            return Err(Error::Config(format!(
                "need refractory_ms ({}) > max_qrs_ms ({}) > 0",
                self.refractory_ms, self.max_qrs_ms
            )));
        }
        if !(0.0..=1.0).contains(&self.min_prominence) || !(0.0..=1.0).contains(&self.twin_ratio) {
            return Err(Error::Config("min_prominence and twin_ratio must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Local maxima (plateaus report their midpoint, rounded down) with their
/// prominence. A trace end above its only neighbour counts as a maximum, since
/// an apex on the last recorded sample is still an apex.
pub fn local_maxima(x: &[f64]) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    let n = x.len();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[j + 1] == x[i] {
            j += 1;
        }
        let rises = i == 0 || x[i - 1] < x[i];
        let falls = j + 1 == n || x[j + 1] < x[i];
        if rises && falls && !(i == 0 && j + 1 == n) {
            out.push(((i + j) / 2, prominence(x, i, j)));
        }
        i = j + 1;
    }
    out
}

/// Height above the higher of the two bases. A side that reaches the end of
/// the trace without meeting a higher sample is cut off, so its base is
/// unknown and only the other side counts; the global maximum uses the
/// lowest sample on either side.
fn prominence(x: &[f64], lo: usize, hi: usize) -> f64 {
    let h = x[lo];
    let side = |it: &mut dyn Iterator<Item = &f64>| {
        let mut base = h;
        for &v in it {
            if v > h {
                return (base, true);
            }
            base = base.min(v);
        }
        (base, false)
    };
    let (left, left_closed) = side(&mut x[..lo].iter().rev());
    let (right, right_closed) = side(&mut x[hi + 1..].iter());
    let base = match (left_closed, right_closed) {
        (true, true) => left.max(right),
        (true, false) => left,
        (false, true) => right,
        (false, false) => left.min(right),
    };
    h - base
}

struct Cluster {
    lo: usize,
    hi: usize,
    anchor: usize,
    height: f64,
}

impl Cluster {
    fn centre(&self) -> usize {
        // midpoint of the extremes, halves rounded up
        (self.lo + self.hi).div_ceil(2)
    }
}

/// Sorted R-peak sample indices.
pub fn detect_rpeaks(activation: &[f64], rate_hz: f64, cfg: &RPeakPostConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    if !(rate_hz > 0.0) {
        return Err(Error::Config(format!("sampling rate must be positive, got {rate_hz}")));
    }
    let (lo, hi) = activation
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return Ok(Vec::new());
    }
    let refractory = cfg.refractory_ms * rate_hz / 1000.0;
    let qrs = cfg.max_qrs_ms * rate_hz / 1000.0;
    let mut cands: Vec<(usize, f64)> = local_maxima(activation)
        .into_iter()
        .filter(|&(_, p)| p >= cfg.min_prominence * range)
        .map(|(i, _)| (i, activation[i]))
        .collect();
    // highest first; ties go to the earlier sample
    cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut clusters: Vec<Cluster> = Vec::new();
    for &(i, h) in &cands {
        let near = |c: &Cluster| (i as f64 - c.anchor as f64).abs();
        if let Some(c) = clusters.iter_mut().find(|c| near(c) <= qrs && h >= cfg.twin_ratio * c.height) {
            c.lo = c.lo.min(i);
            c.hi = c.hi.max(i);
            continue;
        }
        if clusters.iter().any(|c| near(c) < refractory) {
            continue;
        }
        clusters.push(Cluster {
            lo: i,
            hi: i,
            anchor: i,
            height: h,
        });
    }

    if cfg.literal_midpoint {
        let mut anchors: Vec<usize> = clusters.iter().map(|c| c.anchor).collect();
        anchors.sort_unstable();
        if anchors.len() < 2 {
            return Ok(anchors);
        }
        return Ok(anchors.windows(2).map(|w| (w[0] + w[1]).div_ceil(2)).collect());
    }

    // merged centres can drift toward a neighbour; re-apply the refractory rule
    let mut kept: Vec<&Cluster> = Vec::new();
    for c in &clusters {
        if kept.iter().all(|k| (c.centre() as f64 - k.centre() as f64).abs() >= refractory) {
            kept.push(c);
        }
    }
    let mut out: Vec<usize> = kept.iter().map(|c| c.centre()).collect();
    out.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump(len: usize, centre: f64, width: f64, height: f64) -> Vec<f64> {
        (0..len).map(|i| height * (-((i as f64 - centre) / width).powi(2)).exp()).collect()
    }

    fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    }

    #[test]
    fn single_bump() {
        let x = bump(1000, 500.0, 6.0, 1.0);
        assert_eq!(detect_rpeaks(&x, 500.0, &RPeakPostConfig::default()).unwrap(), vec![500]);
    }

    #[test]
    fn refractory_keeps_the_higher_bump() {
        let x = add(&bump(100, 40.0, 1.5, 1.0), &bump(100, 50.0, 1.5, 0.6));
        assert_eq!(detect_rpeaks(&x, 100.0, &RPeakPostConfig::default()).unwrap(), vec![40]);
        let x = add(&bump(100, 40.0, 1.5, 0.6), &bump(100, 50.0, 1.5, 1.0));
        assert_eq!(detect_rpeaks(&x, 100.0, &RPeakPostConfig::default()).unwrap(), vec![50]);
    }

    #[test]
    fn twin_sub_peaks_merge_to_the_midpoint() {
        let x = add(&bump(1000, 498.0, 1.0, 1.0), &bump(1000, 502.0, 1.0, 1.0));
        assert_eq!(detect_rpeaks(&x, 500.0, &RPeakPostConfig::default()).unwrap(), vec![500]);
    }

    #[test]
    fn plateau_reports_its_middle() {
        let x = [0.0, 0.2, 1.0, 1.0, 1.0, 0.1, 0.0];
        assert_eq!(local_maxima(&x), vec![(3, 1.0)]);
    }

    #[test]
    fn peak_cut_off_by_the_trace_end_keeps_its_rise() {
        let mut x = vec![0.02; 1000];
        x[992..].copy_from_slice(&[0.03, 0.02, 0.03, 0.18, 0.60, 0.87, 0.96, 0.95]);
        x[400..403].copy_from_slice(&[0.5, 1.0, 0.5]);
        let p = local_maxima(&x);
        assert!(p.iter().any(|&(i, pr)| i == 998 && (pr - 0.94).abs() < 1e-12), "{p:?}");
        assert_eq!(detect_rpeaks(&x, 100.0, &RPeakPostConfig::default()).unwrap(), vec![401, 998]);
    }

    #[test]
    fn small_ripple_at_the_edge_stays_below_threshold() {
        let mut x = bump(200, 100.0, 3.0, 1.0);
        x[197] = 0.03;
        x[198] = 0.02;
        assert_eq!(detect_rpeaks(&x, 100.0, &RPeakPostConfig::default()).unwrap(), vec![100]);
    }

    #[test]
    fn flat_input_has_no_peaks() {
        assert!(detect_rpeaks(&[0.3; 50], 100.0, &RPeakPostConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn apex_on_the_last_sample_is_found() {
        let mut x = vec![0.02; 500];
        x[494..].copy_from_slice(&[0.04, 0.03, 0.09, 0.40, 0.80, 0.95]);
        x[100..103].copy_from_slice(&[0.5, 1.0, 0.5]);
        assert_eq!(detect_rpeaks(&x, 100.0, &RPeakPostConfig::default()).unwrap(), vec![101, 499]);
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        assert_eq!(detect_rpeaks(&rev, 100.0, &RPeakPostConfig::default()).unwrap(), vec![0, 398]);
    }

    #[test]
    fn literal_reading_reports_between_beat_midpoints() {
        let x = add(&bump(1000, 200.0, 3.0, 1.0), &bump(1000, 600.0, 3.0, 1.0));
        let cfg = RPeakPostConfig {
            literal_midpoint: true,
            ..Default::default()
        };
        assert_eq!(detect_rpeaks(&x, 500.0, &cfg).unwrap(), vec![400]);
    }

    #[test]
    fn bad_timing_config_is_rejected() {
        let cfg = RPeakPostConfig {
            refractory_ms: 100.0,
            ..Default::default()
        };
        assert!(matches!(detect_rpeaks(&[0.0, 1.0, 0.0], 100.0, &cfg), Err(Error::Config(_))));
    }
}
