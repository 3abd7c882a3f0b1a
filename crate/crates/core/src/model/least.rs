//! The masked autoencoder: patch embedding, TFF encoder, lightweight
//! decoder, prototype alignment and the pretraining losses.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, PrototypeMode};
use super::embed::PatchEmbed;
use super::layers::{Linear, Norm, PlainBlock};
use super::params::{Bound, Init, ParamId, ParamStore};
use super::tff::{TffBlock, TffHooks};
use crate::downstream::heads::{HeadSpec, TaskHead};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Sorted masked and visible patch indices for one sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub masked: Vec<usize>,
    pub visible: Vec<usize>,
}

/// Masks `round(ratio·n)` patches, drawn per `(seed, sample)`.
pub fn random_mask(n: usize, ratio: f64, seed: u64, sample: u64) -> Result<Mask> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Config(format!("mask ratio must lie in [0,1), got {ratio}")));
    }
    let count = (ratio * n as f64).round() as usize;
    if count >= n {
        return Err(Error::Config(format!("mask ratio {ratio} leaves no visible patch out of {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut masked = order[..count].to_vec();
    let mut visible = order[count..].to_vec();
    masked.sort_unstable();
    visible.sort_unstable();
    Ok(Mask { masked, visible })
}

/// `[B, L, T]` → `[B, n, L·p]` with `out[b, j, l·p + s] = x[b, l, j·p + s]`.
pub fn patchify(x: &Tensor, patch_count: usize) -> Result<Tensor> {
    let [b, l, t] = x.shape()[..] else {
        return Err(Error::Dimension(format!("patchify expects [B, L, T], got {:?}", x.shape())));
    };
    if t % patch_count != 0 {
        return Err(Error::Dimension(format!("{t} samples do not split into {patch_count} patches")));
    }
    let p = t / patch_count;
    let src = x.data();
    let mut out = vec![0.0; b * t * l];
    for bi in 0..b {
        for li in 0..l {
            for j in 0..patch_count {
                let from = (bi * l + li) * t + j * p;
                let to = (bi * patch_count + j) * l * p + li * p;
                out[to..to + p].copy_from_slice(&src[from..from + p]);
            }
        }
    }
    Tensor::new(vec![b, patch_count, l * p], out)
}

/// Mean squared error over the masked patches only.
pub fn loss_ssl(t: &mut Tape, recon: Var, target: Var, masks: &[Mask]) -> Result<Var> {
    let idx: Vec<Vec<usize>> = masks.iter().map(|m| m.masked.clone()).collect();
    if idx.iter().any(Vec::is_empty) {
        return Err(Error::Usage("reconstruction loss needs at least one masked patch".into()));
    }
    let r = t.gather_rows(recon, &idx)?;
    let y = t.gather_rows(target, &idx)?;
    let d = t.sub(r, y)?;
    let sq = t.square(d)?;
    Ok(t.mean(sq))
}

/// Mean over patches: `[B, m, d]` → `[B, d]`, or `[1, d]` at batch level.
pub fn compute_prototypes(t: &mut Tape, block_out: Var, mode: PrototypeMode) -> Result<Var> {
    let per_sample = t.mean_axis(block_out, 1)?;
    match mode {
        PrototypeMode::PerSample => Ok(per_sample),
        PrototypeMode::BatchLevel => {
            let d = t.shape(per_sample)[1];
            let m = t.mean_axis(per_sample, 0)?;
            t.reshape(m, &[1, d])
        }
    }
}

/// Average over pairs of the batch-mean squared distance between projected
/// prototypes `[B, P]`.
pub fn loss_multi(t: &mut Tape, pairs: &[(Var, Var)]) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::Config("prototype loss needs at least one block pair".into()));
    }
    let mut total: Option<Var> = None;
    for &(pe, pd) in pairs {
        let d = t.sub(pe, pd)?;
        let sq = t.square(d)?;
        let per = t.sum_axis(sq, 1)?;
        let m = t.mean(per);
        total = Some(match total {
            Some(acc) => t.add(acc, m)?,
            None => m,
        });
    }
    Ok(t.scale(total.expect("non-empty"), 1.0 / pairs.len() as f64))
}

/// `L = L_ssl + L_multi`; with alignment disabled this is `L_ssl` itself.
pub fn loss_total(t: &mut Tape, l_ssl: Var, l_multi: Option<Var>) -> Result<Var> {
    match l_multi {
        Some(m) => t.add(l_ssl, m),
        None => Ok(l_ssl),
    }
}

#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// Patch embedding (with positions) before masking, `[B, n, C]`.
    pub embedded: Var,
    pub per_block: Vec<Var>,
    pub final_out: Var,
}

#[derive(Clone, Debug)]
pub struct PretrainOutput {
    pub loss: Var,
    pub loss_ssl: Var,
    pub loss_multi: Option<Var>,
    pub recon: Var,
    pub encoder: EncoderOutput,
    pub decoder_blocks: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct LeastModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub embed: PatchEmbed,
    pub enc_blocks: Vec<TffBlock>,
    pub enc_norm: Norm,
    pub dec_embed: Linear,
    pub mask_token: ParamId,
    pub dec_pos: ParamId,
    pub dec_blocks: Vec<PlainBlock>,
    pub dec_norm: Norm,
    pub dec_head: Linear,
    pub proj_enc: Vec<Linear>,
    pub proj_dec: Vec<Linear>,
    pub head: Option<TaskHead>,
    pairing: Vec<(usize, usize)>,
}

impl LeastModel {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let pairing = cfg.resolved_pairing()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init { rng: &mut rng };
        let mut store = ParamStore::new();
        let c = cfg.embed_dim;
        let dd = cfg.decoder_dim;

        let embed = PatchEmbed::new(&mut store, &mut init, &cfg);
        let enc_blocks = (0..cfg.encoder_blocks)
            .map(|i| TffBlock::new(&mut store, &mut init, &format!("encoder.block{i}"), &cfg))
            .collect::<Result<Vec<_>>>()?;
        let enc_norm = Norm::new(&mut store, "encoder.norm", c, cfg.norm_eps);
        let dec_embed = Linear::new(&mut store, &mut init, "decoder.embed", c, dd, true);
        let mask_token = store.add("decoder.mask_token", init.normal(&[dd], 0.02));
        let dec_pos = store.add("decoder.pos", init.normal(&[cfg.patch_count, dd], 0.02));
        let dec_blocks = (0..cfg.decoder_blocks)
            .map(|i| {
                PlainBlock::new(&mut store, &mut init, &format!("decoder.block{i}"), dd, cfg.heads_attn, cfg.mlp_ratio, cfg.norm_eps)
            })
            .collect::<Result<Vec<_>>>()?;
        let dec_norm = Norm::new(&mut store, "decoder.norm", dd, cfg.norm_eps);
        let dec_head = Linear::new(&mut store, &mut init, "decoder.head", dd, cfg.patch_values(), true);
        let n_proj = if cfg.per_block_projection { pairing.len().max(1) } else { 1 };
        let proj_enc = (0..n_proj)
            .map(|i| Linear::new(&mut store, &mut init, &proj_name("enc", i, cfg.per_block_projection), c, cfg.proto_dim, false))
            .collect();
        let proj_dec = (0..n_proj)
            .map(|i| Linear::new(&mut store, &mut init, &proj_name("dec", i, cfg.per_block_projection), dd, cfg.proto_dim, false))
            .collect();
        Ok(LeastModel {
            cfg,
            store,
            embed,
            enc_blocks,
            enc_norm,
            dec_embed,
            mask_token,
            dec_pos,
            dec_blocks,
            dec_norm,
            dec_head,
            proj_enc,
            proj_dec,
            head: None,
            pairing,
        })
    }

    pub fn pairing(&self) -> &[(usize, usize)] {
        &self.pairing
    }

    /// Adds a fresh task head, replacing any existing one.
    pub fn attach_head(&mut self, spec: HeadSpec, seed: u64) -> Result<()> {
        if let Some(old) = &self.head {
            return Err(Error::Usage(format!("model already carries a {:?} head", old.spec.kind)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.head = Some(TaskHead::new(&mut self.store, &mut Init { rng: &mut rng }, spec, &self.cfg)?);
        Ok(())
    }

    /// Names of frequency-branch parameters (filter bank, query, fusion).
    pub fn is_frequency_param(name: &str) -> bool {
        name.contains(".filter.") || name.ends_with(".fuse_raw")
    }

    pub fn is_projection_param(name: &str) -> bool {
        name.starts_with("proj_")
    }

    /// Sorted per-sample masks for a batch at `seed`, samples numbered from `first`.
    pub fn masks(&self, batch: usize, seed: u64, first: u64) -> Result<Vec<Mask>> {
        (0..batch)
            .map(|i| random_mask(self.cfg.patch_count, self.cfg.mask_ratio, seed, first + i as u64))
            .collect()
    }

    fn encoder_block(&self, t: &mut Tape, p: &Bound, i: usize, z: Var) -> Result<Var> {
        let blk = &self.enc_blocks[i];
        if self.cfg.tff_enabled {
            return blk.forward(t, p, z);
        }
        let h = blk.norm1.forward(t, p, z)?;
        let a = blk.attn.forward(t, p, h)?;
        let z1 = t.add(z, a)?;
        let h2 = blk.norm2.forward(t, p, z1)?;
        let f = blk.ffn.forward(t, p, h2)?;
        t.add(z1, f)
    }

    /// Embeds `x: [B, L, T]` and runs the encoder over the visible patches
    /// (all patches when `visible` is `None`).
    pub fn encode(&self, t: &mut Tape, p: &Bound, x: Var, visible: Option<&[Vec<usize>]>) -> Result<EncoderOutput> {
        let embedded = self.embed.forward(t, p, x)?;
        let mut z = match visible {
            Some(idx) => t.gather_rows(embedded, idx)?,
            None => embedded,
        };
        let mut per_block = Vec::with_capacity(self.enc_blocks.len());
        for i in 0..self.enc_blocks.len() {
            z = self.encoder_block(t, p, i, z)?;
            per_block.push(z);
        }
        let final_out = self.enc_norm.forward(t, p, z)?;
        Ok(EncoderOutput {
            embedded,
            per_block,
            final_out,
        })
    }

    /// Traced variant of one encoder block for tests.
    pub fn encoder_block_traced(&self, t: &mut Tape, p: &Bound, i: usize, z: Var, hooks: TffHooks) -> Result<super::tff::TffTrace> {
        self.enc_blocks[i].forward_traced(t, p, z, hooks)
    }

    /// Reconstructs all `n` patches from the visible latent tokens.
    pub fn decode(&self, t: &mut Tape, p: &Bound, latent: Var, masks: &[Mask]) -> Result<(Var, Vec<Var>)> {
        let y = self.dec_embed.forward(t, p, latent)?;
        let idx: Vec<Vec<usize>> = masks.iter().map(|m| m.visible.clone()).collect();
        let y = t.scatter_rows(y, p.get(self.mask_token), &idx, self.cfg.patch_count)?;
        let mut y = t.add(y, p.get(self.dec_pos))?;
        let mut per_block = Vec::with_capacity(self.dec_blocks.len());
        for blk in &self.dec_blocks {
            y = blk.forward(t, p, y)?;
            per_block.push(y);
        }
        let y = self.dec_norm.forward(t, p, y)?;
        Ok((self.dec_head.forward(t, p, y)?, per_block))
    }

    fn prototype_pairs(&self, t: &mut Tape, p: &Bound, enc: &[Var], dec: &[Var]) -> Result<Vec<(Var, Var)>> {
        let mode = self.cfg.prototype_mode;
        let mut pairs = Vec::with_capacity(self.pairing.len());
        for (k, &(e, d)) in self.pairing.iter().enumerate() {
            let which = if self.cfg.per_block_projection { k } else { 0 };
            let pe = compute_prototypes(t, enc[e], mode)?;
            let pd = compute_prototypes(t, dec[d], mode)?;
            let pe = self.proj_enc[which].forward(t, p, pe)?;
            let pd = self.proj_dec[which].forward(t, p, pd)?;
            pairs.push((pe, pd));
        }
        Ok(pairs)
    }

    /// Full pretraining pass on `x: [B, L, T]` with the given masks.
    pub fn forward_pretrain(&self, t: &mut Tape, p: &Bound, x: &Tensor, masks: &[Mask]) -> Result<PretrainOutput> {
        let shape = x.shape();
        if shape.len() != 3 || shape[0] != masks.len() {
            return Err(Error::Dimension(format!(
                "pretraining batch {shape:?} does not match {} masks",
                masks.len()
            )));
        }
        let target = t.constant(patchify(x, self.cfg.patch_count)?);
        let xv = t.constant(x.clone());
        let visible: Vec<Vec<usize>> = masks.iter().map(|m| m.visible.clone()).collect();
        let encoder = self.encode(t, p, xv, Some(&visible))?;
        let (recon, decoder_blocks) = self.decode(t, p, encoder.final_out, masks)?;
        let l_ssl = loss_ssl(t, recon, target, masks)?;
        let l_multi = if self.cfg.mgpr_enabled {
            let pairs = self.prototype_pairs(t, p, &encoder.per_block, &decoder_blocks)?;
            Some(loss_multi(t, &pairs)?)
        } else {
            None
        };
        let loss = loss_total(t, l_ssl, l_multi)?;
        Ok(PretrainOutput {
            loss,
            loss_ssl: l_ssl,
            loss_multi: l_multi,
            recon,
            encoder,
            decoder_blocks,
        })
    }

    /// Encoder features for downstream use: all patches, no masking.
    pub fn features(&self, t: &mut Tape, p: &Bound, x: Var) -> Result<EncoderOutput> {
        self.encode(t, p, x, None)
    }

    /// Task-head output on unmasked input.
    pub fn forward_head(&self, t: &mut Tape, p: &Bound, x: Var) -> Result<(Var, EncoderOutput)> {
        self.forward_head_with(t, p, x, false)
    }

    /// Task-head output; `batch_stats` selects training-time normalization
    /// of pooled features (see [`crate::downstream::heads::Standardizer`]).
    pub fn forward_head_with(&self, t: &mut Tape, p: &Bound, x: Var, batch_stats: bool) -> Result<(Var, EncoderOutput)> {
        let head = self.head.as_ref().ok_or_else(|| Error::Usage("model has no task head attached".into()))?;
        let enc = self.features(t, p, x)?;
        Ok((head.forward_with(t, p, enc.final_out, batch_stats)?, enc))
    }
}

fn proj_name(side: &str, i: usize, per_block: bool) -> String {
    if per_block {
        format!("proj_{side}.pair{i}")
    } else {
        format!("proj_{side}")
    }
}
