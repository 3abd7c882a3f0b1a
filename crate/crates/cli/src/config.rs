//! Flat `section.key = value` run configuration.
//!
//! Values come from built-in defaults, then the config file, then `--set`
//! flags. Resolution reports every problem at once, and the resolved dump
//! lists every key so it can be fed back in unchanged.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use least_core::data::SynthDatasetConfig;
use least_core::downstream::{HeadKind, HeadSpec, Pooling, RPeakPostConfig};
use least_core::evaluate::EvalOptions;
use least_core::model::{ModelConfig, PrototypeMode};
use least_core::signal::PipelineConfig;
use least_core::train::{AdamWConfig, TrainConfig};

pub const RESOLVED_FILE: &str = "resolved.cfg";

/// Explicit settings before resolution, in `section.key` form.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut problems = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) if k.trim().contains('.') => {
                    values.insert(k.trim().to_string(), v.trim().to_string());
                }
                _ => problems.push(format!("{origin}:{}: expected `section.key = value`, got `{line}`", n + 1)),
            }
        }
        if !problems.is_empty() {
            bail!("{}", problems.join("\n"));
        }
        Ok(RawConfig { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .filter(|(k, _)| k.contains('.'))
            .with_context(|| format!("--set expects section.key=value, got `{assignment}`"))?;
        self.values.insert(k.trim().to_string(), v.trim().to_string());
        Ok(())
    }
}

/// Reads typed values, recording errors and the resolved text of each key.
struct Resolver {
    raw: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
    errors: Vec<String>,
}

impl Resolver {
    fn take<T: FromStr + Display>(&mut self, key: &str, default: T) -> T
    where
        T::Err: Display,
    {
        let value = match self.raw.remove(key) {
            Some(text) => match text.parse::<T>() {
                Ok(v) => v,
                Err(e) => {
                    self.errors.push(format!("{key} = {text}: {e}"));
                    default
                }
            },
            None => default,
        };
        self.resolved.insert(key.to_string(), value.to_string());
        value
    }

    /// `none` or a value.
    fn take_opt<T: FromStr + Display + Clone>(&mut self, key: &str, default: Option<T>) -> Option<T>
    where
        T::Err: Display,
    {
        let value = match self.raw.remove(key) {
            Some(text) if text == "none" => None,
            Some(text) => match text.parse::<T>() {
                Ok(v) => Some(v),
                Err(e) => {
                    self.errors.push(format!("{key} = {text}: {e}"));
                    default
                }
            },
            None => default,
        };
        self.resolved
            .insert(key.to_string(), value.as_ref().map_or("none".to_string(), T::to_string));
        value
    }

    fn take_choice<T: Copy>(&mut self, key: &str, default: &str, choices: &[(&str, T)]) -> T {
        let text = self.raw.remove(key).unwrap_or_else(|| default.to_string());
        let found = choices.iter().find(|(n, _)| *n == text).map(|&(_, v)| v);
        let value = found.unwrap_or_else(|| {
            let names: Vec<&str> = choices.iter().map(|(n, _)| *n).collect();
            self.errors.push(format!("{key} = {text}: expected one of {}", names.join(", ")));
            choices.iter().find(|(n, _)| *n == default).expect("default is a choice").1
        });
        let name = choices.iter().find(|(n, _)| found.is_some() && *n == text).map_or(default, |(n, _)| n);
        self.resolved.insert(key.to_string(), name.to_string());
        value
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub synth: SynthDatasetConfig,
    pub pipeline: PipelineConfig,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub head: HeadSpec,
    pub pretrain_split: String,
    pub train_split: String,
    pub eval_split: String,
    pub eval: EvalOptions,
    resolved: BTreeMap<String, String>,
}

fn train_section(r: &mut Resolver, section: &str, base: TrainConfig, opt: AdamWConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: r.take(&format!("{section}.batch_size"), base.batch_size),
        epochs: r.take(&format!("{section}.epochs"), base.epochs),
        warmup_epochs: r.take(&format!("{section}.warmup_epochs"), base.warmup_epochs),
        base_lr: r.take(&format!("{section}.base_lr"), base.base_lr),
        min_lr: r.take(&format!("{section}.min_lr"), base.min_lr),
        clip_norm: r.take_opt(&format!("{section}.clip_norm"), base.clip_norm),
        checkpoint_every: r.take_opt(&format!("{section}.checkpoint_every"), base.checkpoint_every),
        optimizer: opt,
        seed,
    }
}

impl RunConfig {
    pub fn resolve(raw: RawConfig) -> Result<Self> {
        let mut r = Resolver {
            raw: raw.values,
            resolved: BTreeMap::new(),
            errors: Vec::new(),
        };
        let seed = r.take("run.seed", 0u64);
        let data = r.take_opt::<String>("paths.data", None).map(PathBuf::from);
        let checkpoint = r.take_opt::<String>("paths.checkpoint", None).map(PathBuf::from);

        let sd = SynthDatasetConfig::default();
        let sp = sd.params.clone();
        let mut synth = SynthDatasetConfig {
            records: r.take("synth.records", sd.records),
            af_fraction: r.take("synth.af_fraction", sd.af_fraction),
            test_fraction: r.take("synth.test_fraction", sd.test_fraction),
            labeled_per_class: r.take_opt("synth.labeled_per_class", sd.labeled_per_class),
            raw: r.take("synth.raw", sd.raw),
            seed,
            params: sp.clone(),
        };
        synth.params.rate_hz = r.take("synth.rate_hz", sp.rate_hz);
        synth.params.duration_s = r.take("synth.duration_s", sp.duration_s);
        synth.params.mean_hr_bpm = r.take("synth.mean_hr_bpm", sp.mean_hr_bpm);
        synth.params.hr_spread_bpm = r.take("synth.hr_spread_bpm", sp.hr_spread_bpm);
        synth.params.rr_jitter = r.take("synth.rr_jitter", sp.rr_jitter);
        synth.params.af_rr_jitter = r.take("synth.af_rr_jitter", sp.af_rr_jitter);
        synth.params.noise_sigma = r.take("synth.noise_sigma", sp.noise_sigma);
        synth.params.p.amplitude = r.take("synth.p_amplitude", sp.p.amplitude);

        let pd = PipelineConfig::default();
        let pipeline = PipelineConfig {
            target_hz: r.take("pipeline.target_hz", pd.target_hz),
            segment_seconds: r.take("pipeline.segment_seconds", pd.segment_seconds),
            nan_fraction_limit: r.take("pipeline.nan_fraction_limit", pd.nan_fraction_limit),
            band_low_hz: r.take("pipeline.band_low_hz", pd.band_low_hz),
            band_high_hz: r.take("pipeline.band_high_hz", pd.band_high_hz),
            filter_order: r.take("pipeline.filter_order", pd.filter_order),
            lead_order: r
                .take("pipeline.lead_order", pd.lead_order.join(","))
                .split(',')
                .map(|s| s.trim().to_string())
                .collect(),
        };

        let preset = r.take("model.preset", "tiny".to_string());
        let base = ModelConfig::preset(&preset).unwrap_or_else(|e| {
            r.errors.push(format!("model.preset = {preset}: {e}"));
            ModelConfig::tiny()
        });
        let model = ModelConfig {
            lead_count: r.take("model.lead_count", base.lead_count),
            input_len: r.take("model.input_len", base.input_len),
            embed_dim: r.take("model.embed_dim", base.embed_dim),
            patch_count: r.take("model.patch_count", base.patch_count),
            encoder_blocks: r.take("model.encoder_blocks", base.encoder_blocks),
            decoder_blocks: r.take("model.decoder_blocks", base.decoder_blocks),
            decoder_dim: r.take("model.decoder_dim", base.decoder_dim),
            heads_attn: r.take("model.heads_attn", base.heads_attn),
            filter_heads: r.take("model.filter_heads", base.filter_heads),
            mask_ratio: r.take("model.mask_ratio", base.mask_ratio),
            proto_dim: r.take("model.proto_dim", base.proto_dim),
            pairing: parse_pairing(&mut r, base.pairing.clone()),
            prototype_mode: r.take_choice(
                "model.prototype_mode",
                "per_sample",
                &[("per_sample", PrototypeMode::PerSample), ("batch_level", PrototypeMode::BatchLevel)],
            ),
            tff_enabled: r.take("model.tff_enabled", base.tff_enabled),
            mgpr_enabled: r.take("model.mgpr_enabled", base.mgpr_enabled),
            per_block_projection: r.take("model.per_block_projection", base.per_block_projection),
            mlp_ratio: r.take("model.mlp_ratio", base.mlp_ratio),
            norm_eps: r.take("model.norm_eps", base.norm_eps),
        };

        let od = AdamWConfig::default();
        let opt = AdamWConfig {
            beta1: r.take("optimizer.beta1", od.beta1),
            beta2: r.take("optimizer.beta2", od.beta2),
            eps: r.take("optimizer.eps", od.eps),
            weight_decay: r.take("optimizer.weight_decay", od.weight_decay),
        };
        let pretrain = train_section(&mut r, "pretrain", TrainConfig::tiny_pretrain(), opt, seed);
        let finetune = train_section(&mut r, "finetune", TrainConfig::tiny_finetune(), opt, seed);

        #[derive(Clone, Copy)]
        enum Kind {
            Classification,
            Segmentation,
            Survival,
        }
        let kind = r.take_choice(
            "task.kind",
            "classification",
            &[
                ("classification", Kind::Classification),
                ("segmentation", Kind::Segmentation),
                ("survival", Kind::Survival),
            ],
        );
        let labels = r.take("task.labels", 2usize);
        let pooling = r.take_choice("task.pooling", "mean", &[("mean", Pooling::Mean), ("max", Pooling::Max)]);
        let head = HeadSpec {
            kind: match kind {
                Kind::Classification => HeadKind::Classification { labels },
                Kind::Segmentation => HeadKind::Segmentation,
                Kind::Survival => HeadKind::Survival,
            },
            pooling,
        };
        let pretrain_split = r.take("task.pretrain_split", "train".to_string());
        let train_split = r.take("task.train_split", "train".to_string());
        let eval_split = r.take("task.eval_split", "test".to_string());

        let rd = RPeakPostConfig::default();
        let eval = EvalOptions {
            batch_size: r.take("eval.batch_size", 16usize),
            optimal_matching: r.take("eval.optimal_matching", false),
            horizon: r.take_opt("eval.horizon_days", None),
            rpeak: RPeakPostConfig {
                min_prominence: r.take("rpeak.min_prominence", rd.min_prominence),
                refractory_ms: r.take("rpeak.refractory_ms", rd.refractory_ms),
                max_qrs_ms: r.take("rpeak.max_qrs_ms", rd.max_qrs_ms),
                match_window_ms: r.take("rpeak.match_window_ms", rd.match_window_ms),
                twin_ratio: r.take("rpeak.twin_ratio", rd.twin_ratio),
                literal_midpoint: r.take("rpeak.literal_midpoint", rd.literal_midpoint),
            },
        };

        for key in r.raw.keys() {
            r.errors.push(format!("{key}: unknown setting"));
        }
        let mut errors = std::mem::take(&mut r.errors);
        for (what, res) in [
            ("pipeline", pipeline.validate()),
            ("model", model.validate()),
            ("pretrain", pretrain.validate()),
            ("finetune", finetune.validate()),
            ("rpeak", eval.rpeak.validate()),
        ] {
            if let Err(e) = res {
                errors.push(format!("{what}: {e}"));
            }
        }
        if !errors.is_empty() {
            bail!("invalid configuration:\n  {}", errors.join("\n  "));
        }
        Ok(RunConfig {
            seed,
            data,
            checkpoint,
            synth,
            pipeline,
            model,
            pretrain,
            finetune,
            head,
            pretrain_split,
            train_split,
            eval_split,
            eval,
            resolved: r.resolved,
        })
    }

    /// Every key with its resolved value, grouped by section.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (k, v) in &self.resolved {
            let s = k.split('.').next().unwrap_or("");
            if s != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("# {s}\n"));
                section = s;
            }
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn write_dump(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(RESOLVED_FILE);
        std::fs::write(&path, self.dump()).with_context(|| format!("writing {}", path.display()))
    }
}

fn parse_pairing(r: &mut Resolver, default: Option<Vec<(usize, usize)>>) -> Option<Vec<(usize, usize)>> {
    let show = |p: &Option<Vec<(usize, usize)>>| match p {
        None => "default".to_string(),
        Some(v) => v.iter().map(|(a, b)| format!("{a}:{b}")).collect::<Vec<_>>().join(","),
    };
    let value = match r.raw.remove("model.pairing") {
        None => default,
        Some(t) if t == "default" => None,
        Some(t) => {
            let parsed: std::result::Result<Vec<(usize, usize)>, String> = t
                .split(',')
                .map(|pair| {
                    let (a, b) = pair.split_once(':').ok_or_else(|| format!("`{pair}` is not enc:dec"))?;
                    Ok((
                        a.trim().parse().map_err(|e| format!("`{pair}`: {e}"))?,
                        b.trim().parse().map_err(|e| format!("`{pair}`: {e}"))?,
                    ))
                })
                .collect();
            match parsed {
                Ok(p) => Some(p),
                Err(e) => {
                    r.errors.push(format!("model.pairing = {t}: {e}"));
                    default
                }
            }
        }
    };
    r.resolved.insert("model.pairing".into(), show(&value));
    value
}
