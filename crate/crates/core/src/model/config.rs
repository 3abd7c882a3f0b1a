use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeMode {
    /// One prototype per sample and block (mean over patches).
    PerSample,
    /// Additionally averaged over the batch, one prototype per block.
    BatchLevel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub lead_count: usize,
    pub input_len: usize,
    pub embed_dim: usize,
    pub patch_count: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub decoder_dim: usize,
    pub heads_attn: usize,
    pub filter_heads: usize,
    pub mask_ratio: f64,
    pub proto_dim: usize,
    /// `(encoder block, decoder block)` pairs; `None` uses [`default_pairing`].
    pub pairing: Option<Vec<(usize, usize)>>,
    pub prototype_mode: PrototypeMode,
    pub tff_enabled: bool,
    pub mgpr_enabled: bool,
    /// Separate prototype projections per paired block instead of one per side.
    pub per_block_projection: bool,
    pub mlp_ratio: usize,
    pub norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ModelConfig {
    /// Full-size settings: 12 encoder and 8 decoder blocks at width 256.
    pub fn full() -> Self {
        ModelConfig {
            lead_count: 12,
            input_len: 1000,
            embed_dim: 256,
            patch_count: 125,
            encoder_blocks: 12,
            decoder_blocks: 8,
            decoder_dim: 192,
            heads_attn: 8,
            filter_heads: 8,
            mask_ratio: 0.75,
            proto_dim: 128,
            pairing: None,
            prototype_mode: PrototypeMode::PerSample,
            tff_enabled: true,
            mgpr_enabled: true,
            per_block_projection: false,
            mlp_ratio: 4,
            norm_eps: 1e-5,
        }
    }

    /// Desk-scale preset used by the training loops and acceptance runs.
    pub fn tiny() -> Self {
        ModelConfig {
            embed_dim: 64,
            encoder_blocks: 4,
            decoder_blocks: 2,
            decoder_dim: 32,
            heads_attn: 4,
            filter_heads: 4,
            proto_dim: 32,
            ..Self::full()
        }
    }

    /// Two leads, 32 samples, 8 patches: small enough for finite differences.
    pub fn miniature() -> Self {
        ModelConfig {
            lead_count: 2,
            input_len: 32,
            embed_dim: 8,
            patch_count: 8,
            encoder_blocks: 2,
            decoder_blocks: 1,
            decoder_dim: 8,
            heads_attn: 2,
            filter_heads: 2,
            proto_dim: 4,
            mlp_ratio: 2,
            ..Self::full()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "tiny" => Ok(Self::tiny()),
            "miniature" => Ok(Self::miniature()),
            other => Err(Error::Config(format!("unknown model preset {other}"))),
        }
    }

    /// Samples per patch.
    pub fn patch_span(&self) -> usize {
        self.input_len / self.patch_count.max(1)
    }

    /// Raw values reconstructed per patch.
    pub fn patch_values(&self) -> usize {
        self.lead_count * self.patch_span()
    }

    /// Number of stride-2 stages in the patch embedder.
    pub fn embed_stages(&self) -> usize {
        self.patch_span().trailing_zeros() as usize
    }

    pub fn resolved_pairing(&self) -> Result<Vec<(usize, usize)>> {
        match &self.pairing {
            Some(p) => Ok(p.clone()),
            None => default_pairing(self.encoder_blocks, self.decoder_blocks),
        }
    }

    /// Reports every violated constraint at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let positive = [
            ("lead_count", self.lead_count),
            ("input_len", self.input_len),
            ("embed_dim", self.embed_dim),
            ("patch_count", self.patch_count),
            ("encoder_blocks", self.encoder_blocks),
            ("decoder_blocks", self.decoder_blocks),
            ("decoder_dim", self.decoder_dim),
            ("heads_attn", self.heads_attn),
            ("filter_heads", self.filter_heads),
            ("proto_dim", self.proto_dim),
            ("mlp_ratio", self.mlp_ratio),
        ];
        for (name, v) in positive {
            if v == 0 {
                problems.push(format!("model.{name} must be positive"));
            }
        }
        if self.patch_count > 0 && self.input_len % self.patch_count != 0 {
            problems.push(format!(
                "model.input_len {} is not divisible by model.patch_count {}",
                self.input_len, self.patch_count
            ));
        } else if self.patch_count > 0 && !self.patch_span().is_power_of_two() {
            problems.push(format!(
                "patch span {} must be a power of two for the stride-2 embedder",
                self.patch_span()
            ));
        }
        if self.heads_attn > 0 && self.embed_dim % self.heads_attn != 0 {
            problems.push(format!(
                "model.embed_dim {} is not divisible by model.heads_attn {}",
                self.embed_dim, self.heads_attn
            ));
        }
        if self.heads_attn > 0 && self.decoder_dim % self.heads_attn != 0 {
            problems.push(format!(
                "model.decoder_dim {} is not divisible by model.heads_attn {}",
                self.decoder_dim, self.heads_attn
            ));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            problems.push(format!("model.mask_ratio must lie in [0,1), got {}", self.mask_ratio));
        }
        if self.decoder_blocks > self.encoder_blocks {
            problems.push(format!(
                "model.decoder_blocks {} exceeds model.encoder_blocks {}",
                self.decoder_blocks, self.encoder_blocks
            ));
        } else if self.decoder_blocks > 0 {
            match self.resolved_pairing() {
                Ok(p) => {
                    if let Err(e) = check_pairing(&p, self.encoder_blocks, self.decoder_blocks, self.mgpr_enabled) {
                        problems.push(e.to_string());
                    }
                }
                Err(e) => problems.push(e.to_string()),
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// The published 12→8 selection, otherwise evenly spread encoder indices.
pub fn default_pairing(enc_blocks: usize, dec_blocks: usize) -> Result<Vec<(usize, usize)>> {
    if dec_blocks > enc_blocks {
        return Err(Error::Config(format!(
            "decoder blocks ({dec_blocks}) exceed encoder blocks ({enc_blocks})"
        )));
    }
    if dec_blocks == 0 {
        return Ok(Vec::new());
    }
    if (enc_blocks, dec_blocks) == (12, 8) {
        return Ok([0, 2, 3, 5, 7, 8, 10, 11].into_iter().zip(0..8).collect());
    }
    if dec_blocks == 1 {
        return Ok(vec![(0, 0)]);
    }
    let mut out = Vec::with_capacity(dec_blocks);
    let mut prev: Option<usize> = None;
    for k in 0..dec_blocks {
        let spread = (k as f64 * (enc_blocks - 1) as f64 / (dec_blocks - 1) as f64).round() as usize;
        let e = match prev {
            Some(p) if spread <= p => p + 1,
            _ => spread,
        };
        out.push((e, k));
        prev = Some(e);
    }
    Ok(out)
}

fn check_pairing(p: &[(usize, usize)], enc: usize, dec: usize, mgpr: bool) -> Result<()> {
    if mgpr && p.len() != dec {
        return Err(Error::Config(format!("pairing has {} entries, expected {dec}", p.len())));
    }
    for w in p.windows(2) {
        if w[1].0 <= w[0].0 || w[1].1 <= w[0].1 {
            return Err(Error::Config(format!("pairing {p:?} is not strictly increasing")));
        }
    }
    if let Some(&(e, d)) = p.iter().find(|&&(e, d)| e >= enc || d >= dec) {
        return Err(Error::Config(format!("pair ({e},{d}) is out of range for {enc}/{dec} blocks")));
    }
    Ok(())
}
