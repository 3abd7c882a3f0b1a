//! Task heads on top of encoder features `[B, n, C]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::params::{Bound, Init, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadKind {
    Classification { labels: usize },
    Segmentation,
    Survival,
}

impl HeadKind {
    pub fn task_name(&self) -> &'static str {
        match self {
            HeadKind::Classification { .. } => "classification",
            HeadKind::Segmentation => "segmentation",
            HeadKind::Survival => "survival",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    #[serde(flatten)]
    pub kind: HeadKind,
    #[serde(default)]
    pub pooling: Pooling,
}

impl HeadSpec {
    pub fn classification(labels: usize) -> Self {
        HeadSpec {
            kind: HeadKind::Classification { labels },
            pooling: Pooling::Mean,
        }
    }

    pub fn segmentation() -> Self {
        HeadSpec {
            kind: HeadKind::Segmentation,
            pooling: Pooling::Mean,
        }
    }

    pub fn survival() -> Self {
        HeadSpec {
            kind: HeadKind::Survival,
            pooling: Pooling::Mean,
        }
    }
}

/// Per-channel standardization `(f − shift) · scale` of pooled features
/// ahead of the linear layer, in the manner of a BatchNorm without affine
/// terms. Training steps normalize with the statistics of the current batch;
/// inference uses these stored statistics, refitted over the tuning split once
/// training ends. Pooled encoder features differ little between records, and
/// without this the linear layer would need weights far beyond what a few
/// hundred optimizer steps reach.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Variance floor shared by batch and stored statistics.
pub const STANDARDIZE_EPS: f64 = 1e-12;

impl Standardizer {
    /// Zero mean and unit variance per channel over `rows`.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::Data("cannot fit a standardizer on no records".into()))?;
        let c = first.len();
        let n = rows.len() as f64;
        let shift: Vec<f64> = (0..c).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale = (0..c)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - shift[j]).powi(2)).sum::<f64>() / n;
                1.0 / (var + STANDARDIZE_EPS).sqrt()
            })
            .collect();
        Ok(Standardizer { shift, scale })
    }
}

/// Parameters are named `head.weight` and `head.bias`.
#[derive(Clone, Debug)]
pub struct TaskHead {
    pub spec: HeadSpec,
    pub w: ParamId,
    pub b: ParamId,
    /// Applied to pooled features when set; segmentation ignores it.
    pub standardizer: Option<Standardizer>,
    patch_span: usize,
}

impl TaskHead {
    pub fn new(store: &mut ParamStore, init: &mut Init, spec: HeadSpec, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.embed_dim;
        let p = cfg.patch_span();
        let (w, b) = match spec.kind {
            HeadKind::Classification { labels } => {
                if labels == 0 {
                    return Err(Error::Config("classification head needs at least one label".into()));
                }
                (init.xavier(c, labels), Tensor::zeros(&[labels]))
            }
            // transposed convolution weight [C_in, C_out = 1, p]
            HeadKind::Segmentation => (init.uniform(&[c, 1, p], 1.0 / (c as f64).sqrt()), Tensor::zeros(&[1])),
            HeadKind::Survival => (init.xavier(c, 1), Tensor::zeros(&[1])),
        };
        Ok(TaskHead {
            spec,
            w: store.add("head.weight", w),
            b: store.add("head.bias", b),
            standardizer: None,
            patch_span: p,
        })
    }

    /// Whether the head reads one pooled vector per record.
    pub fn is_pooled(&self) -> bool {
        !matches!(self.spec.kind, HeadKind::Segmentation)
    }

    /// `[B, n, C]` → `[B, C]` under the configured pooling, before any
    /// standardization.
    pub fn pool(&self, t: &mut Tape, x: Var) -> Result<Var> {
        match self.spec.pooling {
            Pooling::Mean => t.mean_axis(x, 1),
            Pooling::Max => t.max_axis(x, 1),
        }
    }

    fn pooled_input(&self, t: &mut Tape, x: Var, batch_stats: bool) -> Result<Var> {
        let pooled = self.pool(t, x)?;
        let Some(s) = &self.standardizer else {
            return Ok(pooled);
        };
        let [b, c] = t.shape(pooled)[..] else {
            return Err(Error::Dimension("pooled features must be [B, C]".into()));
        };
        if batch_stats {
            // normalizing each channel over the batch is a layer norm of the transpose
            let cols = t.transpose(pooled, 0, 1)?;
            let ones = t.constant(Tensor::ones(&[b]));
            let zeros = t.constant(Tensor::zeros(&[b]));
            let normed = t.layer_norm(cols, ones, zeros, STANDARDIZE_EPS)?;
            return t.transpose(normed, 0, 1);
        }
        if s.shift.len() != c || s.scale.len() != c {
            return Err(Error::Dimension(format!("standardizer has {} channels, features have {c}", s.shift.len())));
        }
        let shift = t.constant(Tensor::new(vec![c], s.shift.iter().map(|v| -v).collect())?);
        let scale = t.constant(Tensor::new(vec![c], s.scale.clone())?);
        let centred = t.add(pooled, shift)?;
        t.mul(centred, scale)
    }

    /// Raw head output: logits `[B, K]`, segmentation logits `[B, T]` or
    /// risks `[B]`.
    pub fn forward(&self, t: &mut Tape, p: &Bound, enc: Var) -> Result<Var> {
        self.forward_with(t, p, enc, false)
    }

    /// As [`TaskHead::forward`]; with `batch_stats`, a standardizing head
    /// normalizes with the statistics of this batch instead of stored ones.
    pub fn forward_with(&self, t: &mut Tape, p: &Bound, enc: Var, batch_stats: bool) -> Result<Var> {
        let shape = t.shape(enc).to_vec();
        let [b, _, _] = shape[..] else {
            return Err(Error::Dimension(format!("task head expects [B, n, C], got {shape:?}")));
        };
        match self.spec.kind {
            HeadKind::Classification { .. } => {
                let pooled = self.pooled_input(t, enc, batch_stats)?;
                t.linear(pooled, p.get(self.w), Some(p.get(self.b)))
            }
            HeadKind::Segmentation => {
                let x = t.transpose(enc, 1, 2)?;
                let y = t.conv_transpose1d(x, p.get(self.w), self.patch_span)?;
                let len = t.shape(y)[2];
                let y = t.reshape(y, &[b, len])?;
                t.add(y, p.get(self.b))
            }
            HeadKind::Survival => {
                let pooled = self.pooled_input(t, enc, batch_stats)?;
                let r = t.linear(pooled, p.get(self.w), Some(p.get(self.b)))?;
                t.reshape(r, &[b])
            }
        }
    }

    /// Classification probabilities or segmentation activations.
    pub fn probabilities(&self, t: &mut Tape, p: &Bound, enc: Var) -> Result<Var> {
        let y = self.forward(t, p, enc)?;
        match self.spec.kind {
            HeadKind::Survival => Err(Error::Usage("survival heads output risks, not probabilities".into())),
            _ => Ok(t.sigmoid(y)),
        }
    }
}

/// Thresholds probabilities at 0.5, inclusive.
pub fn binarize(probs: &[f64]) -> Vec<bool> {
    probs.iter().map(|&p| p >= 0.5).collect()
}

/// ±`dilate` sample target mask around each R-peak.
pub fn rpeak_target(peaks: &[usize], len: usize, dilate: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for &r in peaks {
        let lo = r.saturating_sub(dilate);
        let hi = (r + dilate).min(len.saturating_sub(1));
        for v in out.iter_mut().take(hi + 1).skip(lo) {
            *v = 1.0;
        }
    }
    out
}
