//! Temporal-frequency fusion block.
//!
//! The frequency branch transforms the patch axis with a DFT, scales every
//! bin by an input-dependent complex modulation and transforms back. The
//! modulation is `Q ⊙ K̄`, where `Q = Re(Z)ᵀ W_q / m` is one real value per bin
//! and `K̄` is the head-average of a learnable complex filter bank. The
//! temporal branch is self-attention; the two are mixed by `sigmoid(fuse_raw)`.

use super::config::ModelConfig;
use super::layers::{Attention, FeedForward, Norm};
use super::params::{Bound, Init, ParamId, ParamStore};
use crate::error::Result;
use crate::tensor::{ComplexVar, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct TffBlock {
    pub norm1: Norm,
    pub attn: Attention,
    pub w_q: ParamId,
    pub k_re: ParamId,
    pub k_im: ParamId,
    pub fuse_raw: ParamId,
    pub norm2: Norm,
    pub ffn: FeedForward,
}

/// Test hooks overriding learned quantities.
#[derive(Clone, Copy, Debug, Default)]
pub struct TffHooks {
    pub w_fuse: Option<f64>,
    pub unit_query: bool,
}

/// Intermediate values of one block, all `[B, m, C]`.
#[derive(Clone, Copy, Debug)]
pub struct TffTrace {
    pub branch_input: Var,
    pub frequency: Var,
    pub temporal: Var,
    pub fused: Var,
    pub out: Var,
}

/// Linear interpolation from `n` bins to `m` bins as an `[n, m]` matrix.
pub fn interp_matrix(n: usize, m: usize) -> Tensor {
    let mut w = Tensor::zeros(&[n, m]);
    for j in 0..m {
        let pos = if m == 1 { 0.0 } else { j as f64 * (n - 1) as f64 / (m - 1) as f64 };
        let lo = (pos.floor() as usize).min(n - 1);
        let frac = pos - lo as f64;
        w.set(&[lo, j], w.get(&[lo, j]) + 1.0 - frac);
        if frac > 0.0 {
            w.set(&[lo + 1, j], frac);
        }
    }
    w
}

impl TffBlock {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.embed_dim;
        let n = cfg.patch_count;
        let h = cfg.filter_heads;
        Ok(TffBlock {
            norm1: Norm::new(store, &format!("{name}.norm1"), c, cfg.norm_eps),
            attn: Attention::new(store, init, &format!("{name}.attn"), c, cfg.heads_attn)?,
            w_q: store.add(format!("{name}.filter.w_q"), init.uniform(&[c, 1], 1.0 / (c as f64).sqrt())),
            k_re: store.add(format!("{name}.filter.k_re"), Tensor::ones(&[h, n])),
            k_im: store.add(format!("{name}.filter.k_im"), Tensor::zeros(&[h, n])),
            fuse_raw: store.add(format!("{name}.fuse_raw"), Tensor::zeros(&[1])),
            norm2: Norm::new(store, &format!("{name}.norm2"), c, cfg.norm_eps),
            ffn: FeedForward::new(store, init, &format!("{name}.ffn"), c, cfg.mlp_ratio),
        })
    }

    /// Head-averaged filter resampled to `m` bins, as `[1, m]` parts.
    fn filter(&self, t: &mut Tape, p: &Bound, m: usize) -> Result<ComplexVar> {
        let mut parts = [p.get(self.k_re), p.get(self.k_im)];
        let n = t.shape(parts[0])[1];
        for part in &mut parts {
            let avg = t.mean_axis(*part, 0)?;
            let mut row = t.reshape(avg, &[1, n])?;
            if m != n {
                let w = t.constant(interp_matrix(n, m));
                row = t.matmul(row, w)?;
            }
            *part = row;
        }
        Ok(ComplexVar { re: parts[0], im: parts[1] })
    }

    /// Frequency branch on `h: [B, m, C]`.
    pub fn frequency(&self, t: &mut Tape, p: &Bound, h: Var, hooks: TffHooks) -> Result<Var> {
        let shape = t.shape(h).to_vec();
        let (b, m) = (shape[0], shape[1]);
        let ht = t.transpose(h, 1, 2)?; // [B, C, m]
        let z = t.dft_forward(ht);
        let q = if hooks.unit_query {
            t.constant(Tensor::ones(&[b, 1, m]))
        } else {
            // divided by m so the query scale does not depend on how many
            // patches are visible
            let zr = t.transpose(z.re, 1, 2)?; // [B, m, C]
            let q = t.matmul(zr, p.get(self.w_q))?; // [B, m, 1]
            let q = t.scale(q, 1.0 / m as f64);
            t.reshape(q, &[b, 1, m])?
        };
        let k = self.filter(t, p, m)?;
        let modulation = ComplexVar {
            re: t.mul(q, k.re)?,
            im: t.mul(q, k.im)?,
        };
        let filtered = t.complex_mul(z, modulation)?;
        let y = t.dft_inverse(filtered)?;
        t.transpose(y, 1, 2)
    }

    pub fn forward_traced(&self, t: &mut Tape, p: &Bound, z: Var, hooks: TffHooks) -> Result<TffTrace> {
        let h = self.norm1.forward(t, p, z)?;
        let temporal = self.attn.forward(t, p, h)?;
        let frequency = self.frequency(t, p, h, hooks)?;
        let w = match hooks.w_fuse {
            Some(w) => t.constant(Tensor::scalar(w)),
            None => t.sigmoid(p.get(self.fuse_raw)),
        };
        let wc = t.one_minus(w);
        let a = t.mul(frequency, w)?;
        let b = t.mul(temporal, wc)?;
        let fused = t.add(a, b)?;
        let z1 = t.add(z, fused)?;
        let h2 = self.norm2.forward(t, p, z1)?;
        let f = self.ffn.forward(t, p, h2)?;
        let out = t.add(z1, f)?;
        Ok(TffTrace {
            branch_input: h,
            frequency,
            temporal,
            fused,
            out,
        })
    }

    pub fn forward(&self, t: &mut Tape, p: &Bound, z: Var) -> Result<Var> {
        Ok(self.forward_traced(t, p, z, TffHooks::default())?.out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block() -> (ParamStore, TffBlock) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let b = TffBlock::new(&mut store, &mut Init { rng: &mut rng }, "b", &ModelConfig::miniature()).unwrap();
        (store, b)
    }

    fn input(m: usize) -> Tensor {
        Tensor::new(vec![2, m, 8], (0..2 * m * 8).map(|i| ((i * 13) as f64 * 0.1).sin()).collect()).unwrap()
    }

    #[test]
    fn interp_matrix_endpoints_and_identity() {
        let w = interp_matrix(8, 8);
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(w.get(&[i, j]), if i == j { 1.0 } else { 0.0 });
            }
        }
        let w = interp_matrix(8, 3);
        assert_eq!((w.get(&[0, 0]), w.get(&[7, 2])), (1.0, 1.0));
        assert!((w.get(&[3, 1]) - 0.5).abs() < 1e-12 && (w.get(&[4, 1]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fusion_endpoints() {
        let (store, b) = block();
        for m in [8usize, 3] {
            let mut t = Tape::new();
            let p = store.bind(&mut t, false);
            let z = t.constant(input(m));
            let tr = b.forward_traced(&mut t, &p, z, TffHooks { w_fuse: Some(0.0), ..Default::default() }).unwrap();
            assert_eq!(t.value(tr.fused), t.value(tr.temporal));

            let tr = b.forward_traced(&mut t, &p, z, TffHooks::default()).unwrap();
            let f = t.value(tr.frequency).data();
            let tm = t.value(tr.temporal).data();
            for (i, v) in t.value(tr.fused).data().iter().enumerate() {
                assert!((v - 0.5 * (f[i] + tm[i])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unit_filter_and_query_is_identity() {
        let (store, b) = block();
        for m in [8usize, 5] {
            let mut t = Tape::new();
            let p = store.bind(&mut t, false);
            let z = t.constant(input(m));
            let tr = b.forward_traced(&mut t, &p, z, TffHooks { unit_query: true, ..Default::default() }).unwrap();
            assert!(t.value(tr.frequency).max_abs_diff(t.value(tr.branch_input)) < 1e-9);
        }
    }
}
