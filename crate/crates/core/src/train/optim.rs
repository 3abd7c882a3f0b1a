//! AdamW with decoupled weight decay, warmup + cosine schedule, and
//! global-norm clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamW {
    pub fn new(store: &ParamStore, cfg: AdamWConfig) -> Self {
        AdamW {
            cfg,
            m: store.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: store.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update with learning rate `lr`. Every gradient is checked before
    /// any parameter moves; frozen parameters are left alone.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::Usage(format!(
                "optimizer tracks {} parameters, got {} gradients for {}",
                self.m.len(),
                grads.len(),
                store.len()
            )));
        }
        for (p, g) in store.iter().zip(grads) {
            if !p.frozen && !g.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for parameter {}", p.name)));
            }
        }
        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (k, p) in store.iter_mut().enumerate() {
            if p.frozen {
                continue;
            }
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (i, (w, &g)) in p.value.data_mut().iter_mut().zip(grads[k].data()).enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *w -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * *w);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub base_lr: f64,
    pub warmup_epochs: f64,
    pub total_epochs: f64,
    pub min_lr: f64,
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.warmup_epochs && self.warmup_epochs <= self.total_epochs) {
            return Err(Error::Config(format!(
                "warmup_epochs {} must lie in [0, total_epochs = {}]",
                self.warmup_epochs, self.total_epochs
            )));
        }
        if !(self.base_lr >= 0.0 && self.min_lr >= 0.0) {
            return Err(Error::Config("learning rates must be non-negative".into()));
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `base_lr`, then cosine decay to `min_lr` at
/// `total_epochs`.
pub fn lr_at(epoch: f64, cfg: &ScheduleConfig) -> f64 {
    let e = epoch.clamp(0.0, cfg.total_epochs);
    if e < cfg.warmup_epochs {
        return cfg.base_lr * e / cfg.warmup_epochs;
    }
    let span = cfg.total_epochs - cfg.warmup_epochs;
    if span <= 0.0 {
        return cfg.base_lr;
    }
    let progress = (e - cfg.warmup_epochs) / span;
    cfg.min_lr + 0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::new(vec![values.len()], values.to_vec()).unwrap());
        s
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = store(&[0.3, -1.2]);
        let mut opt = AdamW::new(&s, AdamWConfig { weight_decay: 0.0, ..Default::default() });
        opt.step(&mut s, &[Tensor::zeros(&[2])], 1e-3).unwrap();
        assert_eq!(s.by_name("w").unwrap().value.data(), &[0.3, -1.2]);
    }

    #[test]
    fn zero_gradient_applies_decoupled_decay() {
        let mut s = store(&[2.0]);
        let mut opt = AdamW::new(&s, AdamWConfig::default());
        opt.step(&mut s, &[Tensor::zeros(&[1])], 1e-3).unwrap();
        assert!((s.by_name("w").unwrap().value.data()[0] - 2.0 * (1.0 - 5e-5)).abs() < 1e-15);
    }

    #[test]
    fn first_unit_step_moves_by_lr() {
        let mut s = store(&[1.0]);
        let mut opt = AdamW::new(&s, AdamWConfig { eps: 0.0, weight_decay: 0.0, ..Default::default() });
        opt.step(&mut s, &[Tensor::ones(&[1])], 1e-3).unwrap();
        assert!((s.by_name("w").unwrap().value.data()[0] - (1.0 - 1e-3)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut s = store(&[1.0]);
        let mut opt = AdamW::new(&s, AdamWConfig::default());
        let err = opt.step(&mut s, &[Tensor::full(&[1], f64::NAN)], 1e-3).unwrap_err();
        assert!(err.to_string().contains('w'));
        assert_eq!(s.by_name("w").unwrap().value.data(), &[1.0]);
    }

    #[test]
    fn matches_scalar_rederivation_over_five_steps() {
        let init = [0.5, -0.25, 1.5];
        let grads = [[0.1, -0.3, 0.7], [0.2, 0.0, -0.4], [-0.5, 0.9, 0.1], [0.3, 0.3, 0.3], [1.0, -1.0, 0.05]];
        let (lr, b1, b2, eps, wd) = (0.01, 0.9, 0.999, 1e-8, 0.05);
        let mut s = store(&init);
        let mut opt = AdamW::new(&s, AdamWConfig::default());
        for g in &grads {
            opt.step(&mut s, &[Tensor::new(vec![3], g.to_vec()).unwrap()], lr).unwrap();
        }
        for i in 0..3 {
            let (mut p, mut m, mut v) = (init[i], 0.0f64, 0.0f64);
            for (t, g) in grads.iter().enumerate() {
                let t = (t + 1) as i32;
                m = b1 * m + (1.0 - b1) * g[i];
                v = b2 * v + (1.0 - b2) * g[i] * g[i];
                let mh = m / (1.0 - b1.powi(t));
                let vh = v / (1.0 - b2.powi(t));
                p -= lr * (mh / (vh.sqrt() + eps) + wd * p);
            }
            assert!((s.by_name("w").unwrap().value.data()[i] - p).abs() < 1e-12);
        }
    }

    #[test]
    fn schedule_landmarks() {
        let cfg = ScheduleConfig {
            base_lr: 1e-3,
            warmup_epochs: 4.0,
            total_epochs: 10.0,
            min_lr: 1e-5,
        };
        assert!((lr_at(2.0, &cfg) - 5e-4).abs() < 1e-18);
        assert_eq!(lr_at(4.0, &cfg), 1e-3);
        assert!((lr_at(10.0, &cfg) - 1e-5).abs() < 1e-18);
        assert_eq!(lr_at(0.0, &cfg), 0.0);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![Tensor::new(vec![2], vec![3.0, 4.0]).unwrap()];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15 && (g[0].data()[1] - 0.8).abs() < 1e-15);
    }
}
