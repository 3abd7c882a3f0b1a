//! On-disk dataset: `manifest.json` plus a headerless blob of little-endian
//! f32 samples, lead-major per record.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::synth::{synth_ecg, ClassMode, SynthParams, LABEL_NAMES};
use crate::signal::{preprocess, PipelineConfig, PipelineSummary, Preprocessed, SignalRecord, Survival};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "signals.f32";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    /// Byte offset of the record's first sample in the blob.
    pub blob_offset: u64,
    pub lead_count: usize,
    pub sample_count: usize,
    pub sampling_rate_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_vector: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_peaks: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub survival: Option<Survival>,
}

impl ManifestRecord {
    fn byte_len(&self) -> u64 {
        (self.lead_count * self.sample_count * 4) as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub records: Vec<ManifestRecord>,
    pub label_names: Vec<String>,
    pub split: BTreeMap<String, Vec<String>>,
}

impl DatasetManifest {
    /// Checks offsets against the blob size and split ids against records.
    pub fn validate(&self, blob_len: u64) -> Result<()> {
        let mut spans: Vec<(u64, u64, &str)> = self
            .records
            .iter()
            .map(|r| (r.blob_offset, r.blob_offset + r.byte_len(), r.id.as_str()))
            .collect();
        spans.sort();
        for w in spans.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::Data(format!("records {} and {} overlap in the blob", w[0].2, w[1].2)));
            }
        }
        if let Some(&(_, end, id)) = spans.iter().max_by_key(|s| s.1) {
            if end > blob_len {
                return Err(Error::Data(format!("record {id} ends at byte {end} past blob length {blob_len}")));
            }
        }
        let mut seen = HashMap::new();
        for r in &self.records {
            if seen.insert(r.id.as_str(), ()).is_some() {
                return Err(Error::Data(format!("duplicate record id {}", r.id)));
            }
        }
        for (name, ids) in &self.split {
            for id in ids {
                if !seen.contains_key(id.as_str()) {
                    return Err(Error::Data(format!("split {name} references unknown record id {id}")));
                }
            }
        }
        Ok(())
    }
}

/// Writes `records` to `dir` and returns the manifest that was written.
pub fn write_dataset(
    records: &[SignalRecord],
    split: BTreeMap<String, Vec<String>>,
    label_names: &[String],
    dir: &Path,
) -> Result<DatasetManifest> {
    if let Some(first) = records.first() {
        let (l, t) = (first.lead_count(), first.len());
        if let Some(bad) = records.iter().find(|r| r.lead_count() != l || r.len() != t) {
            return Err(Error::Data(format!(
                "record {} has shape {}×{}, expected {l}×{t}",
                bad.id,
                bad.lead_count(),
                bad.len()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(records.len());
    for r in records {
        entries.push(ManifestRecord {
            id: r.id.clone(),
            blob_offset: blob.len() as u64,
            lead_count: r.lead_count(),
            sample_count: r.len(),
            sampling_rate_hz: r.sampling_rate_hz,
            label_vector: r.label_vector.clone(),
            r_peaks: r.r_peaks.clone(),
            survival: r.survival,
        });
        for v in r.leads.iter().flatten() {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let manifest = DatasetManifest {
        version: FORMAT_VERSION,
        records: entries,
        label_names: label_names.to_vec(),
        split,
    };
    manifest.validate(blob.len() as u64)?;
    let blob_path = dir.join(BLOB_FILE);
    fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

/// Synthetic two-class corpus settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthDatasetConfig {
    pub records: usize,
    /// Fraction of records generated in `af_like` mode, rounded to a count.
    pub af_fraction: f64,
    /// Per-class fraction of records held out as the `test` split.
    pub test_fraction: f64,
    /// When set, the first this many training records of each class also
    /// form a `labeled` split.
    pub labeled_per_class: Option<usize>,
    /// Write the generated recordings unprocessed, for a later
    /// [`preprocess_dataset`] pass.
    pub raw: bool,
    pub seed: u64,
    pub params: SynthParams,
}

impl Default for SynthDatasetConfig {
    fn default() -> Self {
        SynthDatasetConfig {
            records: 256,
            af_fraction: 0.5,
            test_fraction: 0.25,
            labeled_per_class: None,
            raw: false,
            seed: 0,
            params: SynthParams::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub records: usize,
    pub segments: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub normal: usize,
    pub af_like: usize,
    pub train: usize,
    pub test: usize,
    pub labeled: usize,
}

/// Generates, preprocesses and writes a synthetic dataset with `train` and
/// `test` splits. Class membership and the split are stratified: exactly
/// `round(af_fraction·N)` records are `af_like`, and each class contributes
/// `round(test_fraction·count)` records to `test`.
pub fn synth_dataset(cfg: &SynthDatasetConfig, pipeline: &PipelineConfig, dir: &Path) -> Result<SynthSummary> {
    if !(0.0..=1.0).contains(&cfg.af_fraction) || !(0.0..1.0).contains(&cfg.test_fraction) {
        return Err(Error::Config("af_fraction must lie in [0,1] and test_fraction in [0,1)".into()));
    }
    if cfg.records == 0 {
        return Err(Error::Config("records must be at least 1".into()));
    }
    let n_af = (cfg.af_fraction * cfg.records as f64).round() as usize;
    let mut slots: Vec<usize> = (0..cfg.records).collect();
    slots.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let mut is_af = vec![false; cfg.records];
    for &k in &slots[..n_af] {
        is_af[k] = true;
    }
    let mut test = vec![false; cfg.records];
    for class in [false, true] {
        let members: Vec<usize> = slots.iter().copied().filter(|&k| is_af[k] == class).collect();
        let n_test = (cfg.test_fraction * members.len() as f64).round() as usize;
        for &k in members.iter().rev().take(n_test) {
            test[k] = true;
        }
    }

    let mut summary = SynthSummary {
        records: cfg.records,
        af_like: n_af,
        normal: cfg.records - n_af,
        ..Default::default()
    };
    let mut segments = Vec::new();
    let mut split: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut labeled_taken = [0usize; 2];
    for k in 0..cfg.records {
        let params = SynthParams {
            mode: if is_af[k] { ClassMode::AfLike } else { ClassMode::Normal },
            ..cfg.params.clone()
        };
        let rec = synth_ecg(&params, cfg.seed.wrapping_mul(1_000_003).wrapping_add(k as u64))?;
        let out = if cfg.raw {
            Preprocessed {
                segments: vec![rec],
                summary: PipelineSummary { accepted: 1, rejected: 0 },
            }
        } else {
            preprocess(&rec, pipeline)?
        };
        summary.accepted += out.summary.accepted;
        summary.rejected += out.summary.rejected;
        let name = if test[k] { "test" } else { "train" };
        let seg_ids: Vec<String> = out.segments.iter().map(|s| s.id.clone()).collect();
        split.entry(name.to_string()).or_default().extend(seg_ids.iter().cloned());
        segments.extend(out.segments);
        if let (false, Some(limit)) = (test[k], cfg.labeled_per_class) {
            if labeled_taken[is_af[k] as usize] < limit {
                labeled_taken[is_af[k] as usize] += 1;
                split.entry("labeled".to_string()).or_default().extend(seg_ids);
            }
        }
    }
    summary.segments = segments.len();
    summary.train = split.get("train").map_or(0, Vec::len);
    summary.test = split.get("test").map_or(0, Vec::len);
    summary.labeled = split.get("labeled").map_or(0, Vec::len);
    let names: Vec<String> = LABEL_NAMES.iter().map(|s| s.to_string()).collect();
    write_dataset(&segments, split, &names, dir)?;
    Ok(summary)
}

/// Runs the pipeline over every record of `input` and writes the segments
/// to `dir`. Each split keeps the segments of its records.
pub fn preprocess_dataset(input: &Dataset, pipeline: &PipelineConfig, dir: &Path) -> Result<PipelineSummary> {
    let mut summary = PipelineSummary::default();
    let mut segments = Vec::new();
    let mut seg_ids: HashMap<String, Vec<String>> = HashMap::new();
    for e in &input.manifest.records {
        let out = preprocess(&input.record(&e.id)?, pipeline)
            .map_err(|err| Error::Data(format!("record {}: {err}", e.id)))?;
        summary.accepted += out.summary.accepted;
        summary.rejected += out.summary.rejected;
        seg_ids.insert(e.id.clone(), out.segments.iter().map(|s| s.id.clone()).collect());
        segments.extend(out.segments);
    }
    let split = input
        .manifest
        .split
        .iter()
        .map(|(name, ids)| (name.clone(), ids.iter().flat_map(|id| seg_ids[id].iter().cloned()).collect()))
        .collect();
    write_dataset(&segments, split, &input.manifest.label_names, dir)?;
    Ok(summary)
}

/// A loaded dataset; read-only after [`Dataset::load`].
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    blob: Vec<f32>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        let blob_path = dir.join(BLOB_FILE);
        let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Data(format!("blob length {} is not a multiple of 4", bytes.len())));
        }
        manifest.validate(bytes.len() as u64)?;
        let blob = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let index = manifest
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.clone(), i))
            .collect();
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest,
            blob,
            index,
        })
    }

    pub fn split_ids(&self, split: &str) -> Result<&[String]> {
        self.manifest
            .split
            .get(split)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Data(format!("unknown split {split}")))
    }

    pub fn entry(&self, id: &str) -> Result<&ManifestRecord> {
        self.index
            .get(id)
            .map(|&i| &self.manifest.records[i])
            .ok_or_else(|| Error::Data(format!("unknown record id {id}")))
    }

    fn samples(&self, e: &ManifestRecord) -> &[f32] {
        let start = (e.blob_offset / 4) as usize;
        &self.blob[start..start + e.lead_count * e.sample_count]
    }

    pub fn record(&self, id: &str) -> Result<SignalRecord> {
        let e = self.entry(id)?;
        let s = self.samples(e);
        Ok(SignalRecord {
            id: e.id.clone(),
            leads: s.chunks(e.sample_count).map(|c| c.iter().map(|&v| v as f64).collect()).collect(),
            sampling_rate_hz: e.sampling_rate_hz,
            label_vector: e.label_vector.clone(),
            r_peaks: e.r_peaks.clone(),
            survival: e.survival,
        })
    }

    /// Record shape `(leads, samples)` shared by every record.
    pub fn shape(&self) -> Option<(usize, usize)> {
        self.manifest.records.first().map(|r| (r.lead_count, r.sample_count))
    }

    /// Stacks the given ids into one batch.
    pub fn batch(&self, ids: &[String]) -> Result<Batch> {
        let entries = ids.iter().map(|id| self.entry(id)).collect::<Result<Vec<_>>>()?;
        let first = entries.first().ok_or_else(|| Error::Data("empty batch".into()))?;
        let (l, t) = (first.lead_count, first.sample_count);
        let mut signals = Vec::with_capacity(ids.len() * l * t);
        for e in &entries {
            if (e.lead_count, e.sample_count) != (l, t) {
                return Err(Error::Data(format!("record {} does not share batch shape {l}×{t}", e.id)));
            }
            signals.extend(self.samples(e).iter().map(|&v| v as f64));
        }
        let labels = if entries.iter().all(|e| e.label_vector.is_some()) {
            let k = first.label_vector.as_ref().map_or(0, Vec::len);
            let rows: Vec<f64> = entries.iter().flat_map(|e| e.label_vector.clone().unwrap_or_default()).collect();
            if k > 0 && rows.len() == k * entries.len() {
                Some(Tensor::new(vec![entries.len(), k], rows)?)
            } else {
                None
            }
        } else {
            None
        };
        let r_peaks = entries
            .iter()
            .map(|e| e.r_peaks.clone())
            .collect::<Option<Vec<_>>>();
        let survival = entries
            .iter()
            .map(|e| e.survival)
            .collect::<Option<Vec<_>>>()
            .map(|s| (s.iter().map(|x| x.time_days).collect(), s.iter().map(|x| x.event).collect()));
        Ok(Batch {
            ids: ids.to_vec(),
            signals: Tensor::new(vec![ids.len(), l, t], signals)?,
            labels,
            r_peaks,
            survival,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<String>,
    pub signals: Tensor,
    pub labels: Option<Tensor>,
    pub r_peaks: Option<Vec<Vec<usize>>>,
    pub survival: Option<(Vec<f64>, Vec<bool>)>,
}

/// Id groups for one epoch: a seeded Fisher–Yates shuffle, then chunks of
/// `batch_size` with the short remainder kept. Use `seed + epoch` per epoch.
pub fn batch_order(ids: &[String], batch_size: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if ids.is_empty() {
        return Err(Error::Data("cannot iterate an empty split".into()));
    }
    let mut order = ids.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order.chunks(batch_size).map(<[String]>::to_vec).collect())
}

/// Batches of `split` in seeded order.
pub fn iterate_batches<'a>(
    ds: &'a Dataset,
    split: &str,
    batch_size: usize,
    seed: u64,
) -> Result<impl Iterator<Item = Result<Batch>> + 'a> {
    let groups = batch_order(ds.split_ids(split)?, batch_size, seed)?;
    Ok(groups.into_iter().map(move |ids| ds.batch(&ids)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, value: f64) -> SignalRecord {
        SignalRecord {
            id: id.into(),
            leads: (0..12).map(|l| (0..1000).map(|t| (value + (l * t) as f64 * 1e-4).fract()).collect()).collect(),
            sampling_rate_hz: 100.0,
            label_vector: Some(vec![1.0, 0.0]),
            r_peaks: Some(vec![10, 200]),
            survival: Some(Survival { time_days: 5.0, event: true }),
        }
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("r{i}")).collect()
    }

    #[test]
    fn blob_size_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![rec("a", 0.1), rec("b", 0.7)];
        let split = BTreeMap::from([("train".to_string(), vec!["a".to_string(), "b".to_string()])]);
        write_dataset(&records, split, &["x".into(), "y".into()], dir.path()).unwrap();
        assert_eq!(fs::metadata(dir.path().join(BLOB_FILE)).unwrap().len(), 96_000);
        let ds = Dataset::load(dir.path()).unwrap();
        let back = ds.record("b").unwrap();
        for (x, y) in back.leads.iter().flatten().zip(records[1].leads.iter().flatten()) {
            assert!((x - y).abs() <= y.abs() * 2f64.powi(-20) + 1e-12);
        }
        assert_eq!(back.r_peaks, records[1].r_peaks);
    }

    #[test]
    fn unknown_split_id_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let split = BTreeMap::from([("test".to_string(), vec!["ghost".to_string()])]);
        let err = write_dataset(&[rec("a", 0.1)], split, &[], dir.path()).unwrap_err();
        assert!(err.to_string().contains("ghost"), "{err}");
    }

    #[test]
    fn batch_sizes_keep_short_tail() {
        let sizes: Vec<usize> = batch_order(&ids(10), 4, 3).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn batch_order_is_seeded() {
        assert_eq!(batch_order(&ids(10), 4, 5).unwrap(), batch_order(&ids(10), 4, 5).unwrap());
        let differing = (0..20u64)
            .filter(|&s| batch_order(&ids(10), 10, s).unwrap() != batch_order(&ids(10), 10, s + 1).unwrap())
            .count();
        // two uniform permutations of 10 items coincide with probability 1/10!
        assert_eq!(differing, 20);
        assert!(batch_order(&[], 4, 0).is_err());
    }

    #[test]
    fn raw_synth_then_preprocess_matches_direct_synth() {
        let raw_dir = tempfile::tempdir().unwrap();
        let cooked_dir = tempfile::tempdir().unwrap();
        let direct_dir = tempfile::tempdir().unwrap();
        let cfg = SynthDatasetConfig {
            records: 4,
            seed: 3,
            ..Default::default()
        };
        let pipeline = PipelineConfig::default();
        synth_dataset(&SynthDatasetConfig { raw: true, ..cfg.clone() }, &pipeline, raw_dir.path()).unwrap();
        let raw = Dataset::load(raw_dir.path()).unwrap();
        assert_eq!(raw.shape(), Some((12, 5000)));
        let summary = preprocess_dataset(&raw, &pipeline, cooked_dir.path()).unwrap();
        assert_eq!(summary, PipelineSummary { accepted: 4, rejected: 0 });
        synth_dataset(&cfg, &pipeline, direct_dir.path()).unwrap();
        // the raw blob stores f32, so samples agree only to single precision
        let cooked = Dataset::load(cooked_dir.path()).unwrap();
        let direct = Dataset::load(direct_dir.path()).unwrap();
        assert_eq!(cooked.manifest.split, direct.manifest.split);
        let gap = cooked
            .blob
            .iter()
            .zip(&direct.blob)
            .fold(0.0f32, |m, (a, b)| m.max((a - b).abs()));
        assert!(gap < 1e-4, "max sample gap {gap}");
    }
}
