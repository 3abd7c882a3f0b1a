//! Convolutional patch embedding: residual stride-2 stages with kernel 5
//! reduce `[B, L, T]` to `[B, n, C]`.

use super::config::ModelConfig;
use super::layers::Norm;
use super::params::{Bound, Init, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug)]
struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
    pad: usize,
}

impl Conv {
    fn new(store: &mut ParamStore, init: &mut Init, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        Conv {
            w: store.add(format!("{name}.weight"), init.conv(cout, cin, k)),
            b: store.add(format!("{name}.bias"), Tensor::zeros(&[cout, 1])),
            stride,
            pad: k / 2,
        }
    }

    fn forward(&self, t: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = t.conv1d(x, p.get(self.w), self.stride, self.pad)?;
        t.add(y, p.get(self.b))
    }
}

#[derive(Clone, Debug)]
struct Stage {
    main1: Conv,
    main2: Conv,
    skip: Conv,
}

#[derive(Clone, Debug)]
pub struct PatchEmbed {
    stages: Vec<Stage>,
    pub norm: Norm,
    pub pos: ParamId,
    lead_count: usize,
    input_len: usize,
}

impl PatchEmbed {
    pub fn new(store: &mut ParamStore, init: &mut Init, cfg: &ModelConfig) -> Self {
        let s = cfg.embed_stages();
        let mut cin = cfg.lead_count;
        let mut stages = Vec::with_capacity(s);
        for i in 0..s {
            let cout = (cfg.embed_dim >> (s - 1 - i)).max(1);
            let name = format!("embed.stage{i}");
            stages.push(Stage {
                main1: Conv::new(store, init, &format!("{name}.conv1"), cin, cout, 5, 2),
                main2: Conv::new(store, init, &format!("{name}.conv2"), cout, cout, 5, 1),
                skip: Conv::new(store, init, &format!("{name}.skip"), cin, cout, 1, 2),
            });
            cin = cout;
        }
        PatchEmbed {
            stages,
            norm: Norm::new(store, "embed.norm", cfg.embed_dim, cfg.norm_eps),
            pos: store.add("embed.pos", init.normal(&[cfg.patch_count, cfg.embed_dim], 0.02)),
            lead_count: cfg.lead_count,
            input_len: cfg.input_len,
        }
    }

    /// `[B, L, T]` → `[B, n, C]` with positional embedding added.
    pub fn forward(&self, t: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let shape = t.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.lead_count || shape[2] != self.input_len {
            return Err(Error::Dimension(format!(
                "patch embedding expects [B, {}, {}], got {shape:?}",
                self.lead_count, self.input_len
            )));
        }
        let mut h = x;
        for st in &self.stages {
            let m = st.main1.forward(t, p, h)?;
            let m = t.gelu(m);
            let m = st.main2.forward(t, p, m)?;
            let s = st.skip.forward(t, p, h)?;
            let sum = t.add(m, s)?;
            h = t.gelu(sum);
        }
        let h = t.transpose(h, 1, 2)?;
        let h = self.norm.forward(t, p, h)?;
        t.add(h, p.get(self.pos))
    }
}
