//! Transformer building blocks over `[B, n, d]` token tensors.

use super::params::{Bound, Init, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        let w = store.add(format!("{name}.weight"), init.xavier(fan_in, fan_out));
        let b = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out])));
        Linear { w, b }
    }

    pub fn forward(&self, t: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        t.linear(x, p.get(self.w), self.b.map(|b| p.get(b)))
    }
}

#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, eps: f64) -> Self {
        Norm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[dim])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim])),
            eps,
        }
    }

    pub fn forward(&self, t: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        t.layer_norm(x, p.get(self.gamma), p.get(self.beta), self.eps)
    }
}

/// Multi-head scaled dot-product self-attention.
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl Attention {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("width {dim} is not divisible by {heads} heads")));
        }
        Ok(Attention {
            q: Linear::new(store, init, &format!("{name}.q"), dim, dim, true),
            k: Linear::new(store, init, &format!("{name}.k"), dim, dim, true),
            v: Linear::new(store, init, &format!("{name}.v"), dim, dim, true),
            o: Linear::new(store, init, &format!("{name}.o"), dim, dim, true),
            heads,
            dim,
        })
    }

    /// `[B, n, d]` → `[B·h, n, d/h]`.
    fn split(&self, t: &mut Tape, x: Var, b: usize, n: usize) -> Result<Var> {
        let dh = self.dim / self.heads;
        let x = t.reshape(x, &[b, n, self.heads, dh])?;
        let x = t.permute(x, &[0, 2, 1, 3])?;
        t.reshape(x, &[b * self.heads, n, dh])
    }

    /// Returns the output and the attention weights `[B·h, n, n]`.
    pub fn forward_with_weights(&self, t: &mut Tape, p: &Bound, x: Var) -> Result<(Var, Var)> {
        let shape = t.shape(x).to_vec();
        let [b, n, d] = shape[..] else {
            return Err(Error::Dimension(format!("attention expects [B, n, d], got {shape:?}")));
        };
        if d != self.dim {
            return Err(Error::Dimension(format!("attention width {} applied to width {d}", self.dim)));
        }
        let dh = d / self.heads;
        let q = self.q.forward(t, p, x)?;
        let k = self.k.forward(t, p, x)?;
        let v = self.v.forward(t, p, x)?;
        let q = self.split(t, q, b, n)?;
        let k = self.split(t, k, b, n)?;
        let v = self.split(t, v, b, n)?;
        let kt = t.transpose(k, 1, 2)?;
        let scores = t.matmul(q, kt)?;
        let scores = t.scale(scores, 1.0 / (dh as f64).sqrt());
        let attn = t.softmax(scores);
        let ctx = t.matmul(attn, v)?;
        let ctx = t.reshape(ctx, &[b, self.heads, n, dh])?;
        let ctx = t.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = t.reshape(ctx, &[b, n, d])?;
        Ok((self.o.forward(t, p, ctx)?, attn))
    }

    pub fn forward(&self, t: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        self.forward_with_weights(t, p, x).map(|(y, _)| y)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, dim: usize, ratio: usize) -> Self {
        FeedForward {
            up: Linear::new(store, init, &format!("{name}.up"), dim, dim * ratio, true),
            down: Linear::new(store, init, &format!("{name}.down"), dim * ratio, dim, true),
        }
    }

    pub fn forward(&self, t: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = self.up.forward(t, p, x)?;
        let h = t.gelu(h);
        self.down.forward(t, p, h)
    }
}

/// Pre-norm attention + feed-forward block.
#[derive(Clone, Debug)]
pub struct PlainBlock {
    pub norm1: Norm,
    pub attn: Attention,
    pub norm2: Norm,
    pub ffn: FeedForward,
}

impl PlainBlock {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, dim: usize, heads: usize, ratio: usize, eps: f64) -> Result<Self> {
        Ok(PlainBlock {
            norm1: Norm::new(store, &format!("{name}.norm1"), dim, eps),
            attn: Attention::new(store, init, &format!("{name}.attn"), dim, heads)?,
            norm2: Norm::new(store, &format!("{name}.norm2"), dim, eps),
            ffn: FeedForward::new(store, init, &format!("{name}.ffn"), dim, ratio),
        })
    }

    pub fn forward(&self, t: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = self.norm1.forward(t, p, x)?;
        let a = self.attn.forward(t, p, h)?;
        let x = t.add(x, a)?;
        let h = self.norm2.forward(t, p, x)?;
        let f = self.ffn.forward(t, p, h)?;
        t.add(x, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn attention(dim: usize, heads: usize) -> (ParamStore, Attention) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let a = Attention::new(&mut store, &mut Init { rng: &mut rng }, "a", dim, heads).unwrap();
        (store, a)
    }

    fn set_identity(store: &mut ParamStore, l: &Linear, dim: usize) {
        let mut eye = Tensor::zeros(&[dim, dim]);
        for i in 0..dim {
            eye.set(&[i, i], 1.0);
        }
        store.get_mut(l.w).value = eye;
    }

    #[test]
    fn rejects_indivisible_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let r = Attention::new(&mut store, &mut Init { rng: &mut rng }, "a", 6, 4);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn equal_keys_average_values() {
        let (mut store, a) = attention(4, 2);
        for l in [&a.q, &a.k, &a.v, &a.o] {
            set_identity(&mut store, l, 4);
        }
        // zero key projection makes every key row equal
        store.get_mut(a.k.w).value = Tensor::zeros(&[4, 4]);
        let mut t = Tape::new();
        let p = store.bind(&mut t, false);
        let x = Tensor::new(vec![1, 3, 4], (0..12).map(|i| i as f64 * 0.5).collect()).unwrap();
        let xv = t.constant(x.clone());
        let y = a.forward(&mut t, &p, xv).unwrap();
        for r in 0..3 {
            for c in 0..4 {
                let mean = (0..3).map(|j| x.get(&[0, j, c])).sum::<f64>() / 3.0;
                assert!((t.value(y).get(&[0, r, c]) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_token_passes_value_through_output_projection() {
        let (store, a) = attention(4, 2);
        let mut t = Tape::new();
        let p = store.bind(&mut t, false);
        let x = t.constant(Tensor::new(vec![1, 1, 4], vec![0.3, -0.2, 0.9, 0.1]).unwrap());
        let y = a.forward(&mut t, &p, x).unwrap();
        let v = a.v.forward(&mut t, &p, x).unwrap();
        let want = a.o.forward(&mut t, &p, v).unwrap();
        assert!(t.value(y).max_abs_diff(t.value(want)) < 1e-12);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let (store, a) = attention(8, 4);
        let mut t = Tape::new();
        let p = store.bind(&mut t, false);
        let x = t.constant(Tensor::new(vec![2, 5, 8], (0..80).map(|i| ((i * 7) as f64).sin()).collect()).unwrap());
        let (_, w) = a.forward_with_weights(&mut t, &p, x).unwrap();
        for row in t.value(w).data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
