//! Breslow baseline survival and per-subject survival probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Baseline survival `S₀` as a right-continuous step function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    /// Distinct event times, ascending.
    pub times: Vec<f64>,
    /// `S₀` just after each event time.
    pub survival: Vec<f64>,
    /// Largest observed time (event or censoring).
    pub max_follow_up: f64,
}

/// Breslow estimate of the baseline from training risks.
pub fn breslow(times: &[f64], events: &[bool], risks: &[f64]) -> Result<Baseline> {
    if times.len() != events.len() || times.len() != risks.len() || times.is_empty() {
        return Err(Error::Dimension(format!(
            "breslow: {} times, {} events, {} risks",
            times.len(),
            events.len(),
            risks.len()
        )));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    // at-risk sums from the back
    let mut at_risk = vec![0.0; order.len()];
    let mut acc = 0.0;
    for k in (0..order.len()).rev() {
        acc += risks[order[k]].exp();
        at_risk[k] = acc;
    }
    let mut out = Baseline {
        times: Vec::new(),
        survival: Vec::new(),
        max_follow_up: times[order[order.len() - 1]],
    };
    let mut cum = 0.0;
    let mut k = 0;
    while k < order.len() {
        let t = times[order[k]];
        let mut deaths = 0usize;
        let mut j = k;
        while j < order.len() && times[order[j]] == t {
            deaths += events[order[j]] as usize;
            j += 1;
        }
        if deaths > 0 {
            cum += deaths as f64 / at_risk[k];
            out.times.push(t);
            out.survival.push((-cum).exp());
        }
        k = j;
    }
    Ok(out)
}

impl Baseline {
    /// `S₀(t)`. Times past the observed follow-up clamp to the last step.
    pub fn at(&self, t: f64) -> f64 {
        if t > self.max_follow_up {
            log::warn!(
                "survival horizon {t} lies beyond the observed follow-up {}; using the last step",
                self.max_follow_up
            );
        }
        match self.times.partition_point(|&x| x <= t) {
            0 => 1.0,
            k => self.survival[k - 1],
        }
    }
}

/// `S(t | x) = S₀(t)^exp(risk)`.
pub fn survival_curve(risk: f64, baseline: &Baseline, horizon: f64) -> f64 {
    baseline.at(horizon).powf(risk.exp())
}

/// Median of the event times (censored subjects excluded).
pub fn median_event_time(times: &[f64], events: &[bool]) -> Result<f64> {
    let mut ev: Vec<f64> = times.iter().zip(events).filter(|(_, &e)| e).map(|(&t, _)| t).collect();
    if ev.is_empty() {
        return Err(Error::Evaluation("no events to take a median horizon from".into()));
    }
    ev.sort_by(f64::total_cmp);
    let n = ev.len();
    Ok(if n % 2 == 1 { ev[n / 2] } else { 0.5 * (ev[n / 2 - 1] + ev[n / 2]) })
}
