//! Edge-ness scoring and preference-pair construction.
//!
//! Caption variants of a scene are scored by how badly a detector does on
//! the scene they describe; the highest-loss variant is what the curation
//! loop wants more of. Losses either come from an external file (a real
//! training stack exporting its own loss) or from [`proxy_loss`], a
//! detection-quality proxy built on greedy matching. Per image, the
//! max-loss and min-loss variants become a preference pair for DPO.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datamodel::{Annotation, Prediction};
use crate::error::{Error, Result};
use crate::geometry::{ThresholdMode, match_single_image};
use crate::io;

/// Number of caption variants per image unless a record says otherwise.
pub const DEFAULT_VARIANTS: usize = 5;

fn default_n() -> usize {
    DEFAULT_VARIANTS
}

/// A base caption plus its `n` semantic variants for one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: u64,
    pub base_caption: String,
    pub variants: Vec<String>,
    #[serde(default = "default_n")]
    pub n: usize,
}

impl CaptionRecord {
    pub fn validate(&self) -> Result<()> {
        if self.variants.len() != self.n {
            return Err(Error::Integrity(format!(
                "caption record for image {} has {} variants, expected n = {}",
                self.image_id,
                self.variants.len(),
                self.n
            )));
        }
        if self.base_caption.is_empty() || self.variants.iter().any(String::is_empty) {
            return Err(Error::Integrity(format!(
                "caption record for image {} contains an empty caption",
                self.image_id
            )));
        }
        Ok(())
    }
}

/// Edge-ness of one caption variant: the detector's loss on the scene it
/// describes. Higher means harder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgenessRecord {
    pub image_id: u64,
    pub variant_index: usize,
    pub loss: f64,
}

impl EdgenessRecord {
    pub fn validate(&self) -> Result<()> {
        if !self.loss.is_finite() || self.loss < 0.0 {
            return Err(Error::Integrity(format!(
                "loss for image {} variant {} must be finite and nonnegative, got {}",
                self.image_id, self.variant_index, self.loss
            )));
        }
        Ok(())
    }
}

/// One DPO training example: the base caption as prompt, the hardest variant
/// as chosen, the easiest as rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub score_chosen: f64,
    pub score_rejected: f64,
}

/// Weights for the detection-quality proxy loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyLossConfig {
    /// Weight on mean localization error (1 - IoU) over matched pairs.
    pub w_loc: f64,
    /// Weight on the miss rate (unmatched annotations / annotations).
    pub w_fn: f64,
    /// Weight on the false-positive rate (unmatched predictions / predictions).
    pub w_fp: f64,
    /// IoU threshold for the class-aware greedy match.
    pub match_iou: f64,
}

impl Default for ProxyLossConfig {
    fn default() -> Self {
        ProxyLossConfig {
            w_loc: 1.0,
            w_fn: 2.0,
            w_fp: 1.0,
            match_iou: 0.5,
        }
    }
}

impl ProxyLossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w_loc", self.w_loc), ("w_fn", self.w_fn), ("w_fp", self.w_fp)] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Domain(format!(
                    "{name} must be finite and nonnegative, got {w}"
                )));
            }
        }
        if self.w_loc == 0.0 && self.w_fn == 0.0 && self.w_fp == 0.0 {
            return Err(Error::Domain("at least one proxy-loss weight must be positive".into()));
        }
        if !(self.match_iou > 0.0 && self.match_iou <= 1.0) {
            return Err(Error::Domain(format!(
                "match_iou must be in (0, 1], got {}",
                self.match_iou
            )));
        }
        Ok(())
    }
}

/// Detection-quality proxy for a detector's training loss on one image:
/// weighted sum of mean localization error over matched pairs, miss rate,
/// and false-positive rate. Zero iff every annotation is matched at IoU 1
/// and no prediction is left over.
///
/// Panics if `cfg` is invalid; callers taking config from user input should
/// run [`ProxyLossConfig::validate`] first.
pub fn proxy_loss(preds: &[Prediction], pseudo_anns: &[Annotation], cfg: &ProxyLossConfig) -> f64 {
    cfg.validate().expect("valid proxy-loss config");
    let indexed: Vec<(usize, &Prediction)> = preds.iter().enumerate().collect();
    let anns: Vec<&Annotation> = pseudo_anns.iter().collect();
    let m = match_single_image(
        &indexed,
        &anns,
        cfg.match_iou,
        ThresholdMode::Inclusive,
        true,
        0.0,
    );
    let loc = if m.pairs.is_empty() {
        0.0
    } else {
        m.pairs.iter().map(|(_, _, iou)| 1.0 - iou).sum::<f64>() / m.pairs.len() as f64
    };
    let fn_rate = m.unmatched_annotations.len() as f64 / pseudo_anns.len().max(1) as f64;
    let fp_rate = m.unmatched_predictions.len() as f64 / preds.len().max(1) as f64;
    cfg.w_loc * loc + cfg.w_fn * fn_rate + cfg.w_fp * fp_rate
}

/// Predictions and pseudo-annotations for one (image, variant) cell, the
/// input the proxy path scores.
#[derive(Debug, Clone, Default)]
pub struct DetectionSet {
    pub predictions: Vec<Prediction>,
    pub pseudo_annotations: Vec<Annotation>,
}

/// Where variant losses come from.
pub enum LossSource<'a> {
    /// Precomputed losses, e.g. exported by a real training stack.
    External(&'a [EdgenessRecord]),
    /// Score each variant with [`proxy_loss`] on its detection set.
    Proxy {
        detections: &'a BTreeMap<(u64, usize), DetectionSet>,
        config: &'a ProxyLossConfig,
    },
}

/// Produces one [`EdgenessRecord`] per caption variant. Every
/// (image_id, variant_index) cell must have exactly one source entry;
/// missing, duplicate, or unknown entries are errors, as are invalid records
/// or negative losses.
pub fn score_variants(records: &[CaptionRecord], losses: &LossSource<'_>) -> Result<Vec<EdgenessRecord>> {
    for r in records {
        r.validate()?;
    }
    let mut wanted: BTreeSet<(u64, usize)> = BTreeSet::new();
    for r in records {
        for v in 0..r.n {
            wanted.insert((r.image_id, v));
        }
    }

    let by_key: BTreeMap<(u64, usize), f64> = match losses {
        LossSource::External(entries) => {
            let mut map = BTreeMap::new();
            for e in *entries {
                e.validate()?;
                let key = (e.image_id, e.variant_index);
                if !wanted.contains(&key) {
                    return Err(Error::Integrity(format!(
                        "loss entry for unknown image {} variant {}",
                        e.image_id, e.variant_index
                    )));
                }
                if map.insert(key, e.loss).is_some() {
                    return Err(Error::Integrity(format!(
                        "duplicate loss entry for image {} variant {}",
                        e.image_id, e.variant_index
                    )));
                }
            }
            map
        }
        LossSource::Proxy { detections, config } => {
            config.validate()?;
            for key in detections.keys() {
                if !wanted.contains(key) {
                    return Err(Error::Integrity(format!(
                        "detection set for unknown image {} variant {}",
                        key.0, key.1
                    )));
                }
            }
            detections
                .iter()
                .map(|(key, ds)| {
                    (*key, proxy_loss(&ds.predictions, &ds.pseudo_annotations, config))
                })
                .collect()
        }
    };

    let mut out = Vec::with_capacity(wanted.len());
    for r in records {
        for v in 0..r.n {
            let Some(loss) = by_key.get(&(r.image_id, v)) else {
                return Err(Error::Integrity(format!(
                    "missing loss entry for image {} variant {v}",
                    r.image_id
                )));
            };
            out.push(EdgenessRecord {
                image_id: r.image_id,
                variant_index: v,
                loss: *loss,
            });
        }
    }
    Ok(out)
}

/// Pairs plus the number of images skipped for having no usable contrast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairBuild {
    pub pairs: Vec<PreferencePair>,
    pub skipped: u64,
}

/// Builds one preference pair per caption record: chosen = max-loss variant,
/// rejected = min-loss variant, ties to the lowest variant index. Images
/// where all variants score equally, or where the chosen and rejected texts
/// coincide, are skipped and counted. Scores must cover every variant of
/// every record exactly once.
pub fn build_pairs(records: &[CaptionRecord], scores: &[EdgenessRecord]) -> Result<PairBuild> {
    for r in records {
        r.validate()?;
    }
    let mut by_key: BTreeMap<(u64, usize), f64> = BTreeMap::new();
    for s in scores {
        s.validate()?;
        if by_key.insert((s.image_id, s.variant_index), s.loss).is_some() {
            return Err(Error::Integrity(format!(
                "duplicate score for image {} variant {}",
                s.image_id, s.variant_index
            )));
        }
    }

    let mut pairs = Vec::new();
    let mut skipped = 0u64;
    for r in records {
        let mut losses = Vec::with_capacity(r.n);
        for v in 0..r.n {
            let Some(loss) = by_key.get(&(r.image_id, v)) else {
                return Err(Error::Integrity(format!(
                    "missing score for image {} variant {v}",
                    r.image_id
                )));
            };
            losses.push(*loss);
        }
        let mut max_idx = 0usize;
        let mut min_idx = 0usize;
        for (i, l) in losses.iter().enumerate() {
            if *l > losses[max_idx] {
                max_idx = i;
            }
            if *l < losses[min_idx] {
                min_idx = i;
            }
        }
        if losses[max_idx] == losses[min_idx] || r.variants[max_idx] == r.variants[min_idx] {
            skipped += 1;
            continue;
        }
        pairs.push(PreferencePair {
            prompt: r.base_caption.clone(),
            chosen: r.variants[max_idx].clone(),
            rejected: r.variants[min_idx].clone(),
            score_chosen: losses[max_idx],
            score_rejected: losses[min_idx],
        });
    }
    Ok(PairBuild { pairs, skipped })
}

/// Cumulative dataset sizes for `iterations` rounds of augmentation, each
/// round adding `multiplier * base_count` images: entry k is
/// `base_count + k * multiplier * base_count` for k = 0..=iterations.
pub fn augmentation_plan(base_count: u64, multiplier: u64, iterations: u64) -> Result<Vec<u64>> {
    if base_count == 0 {
        return Err(Error::Domain("base_count must be positive".into()));
    }
    if multiplier == 0 {
        return Err(Error::Domain("multiplier must be at least 1".into()));
    }
    let step = base_count
        .checked_mul(multiplier)
        .ok_or_else(|| Error::Domain("augmentation plan overflows u64".into()))?;
    let mut out = Vec::with_capacity(iterations as usize + 1);
    let mut current = base_count;
    out.push(current);
    for _ in 0..iterations {
        current = current
            .checked_add(step)
            .ok_or_else(|| Error::Domain("augmentation plan overflows u64".into()))?;
        out.push(current);
    }
    Ok(out)
}

/// Summary statistics over edge-ness values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgenessStats {
    pub count: u64,
    pub mean: f64,
    /// Midpoint average of the two central values for even counts.
    pub median: f64,
    /// Population standard deviation.
    pub std: f64,
}

/// Mean, median, and population standard deviation of the losses.
pub fn edgeness_stats(scores: &[EdgenessRecord]) -> Result<EdgenessStats> {
    if scores.is_empty() {
        return Err(Error::Domain("edgeness_stats requires at least one record".into()));
    }
    let n = scores.len();
    let mut values: Vec<f64> = scores.iter().map(|s| s.loss).collect();
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite losses"));
    let mean = values.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    };
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    Ok(EdgenessStats {
        count: n as u64,
        mean,
        median,
        std: var.sqrt(),
    })
}

/// Reads caption records from JSONL, one object per line.
pub fn load_captions(path: &Path) -> Result<Vec<CaptionRecord>> {
    let records: Vec<CaptionRecord> = io::read_jsonl(path)?;
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}

/// Reads externally computed variant losses from JSONL.
pub fn load_loss_entries(path: &Path) -> Result<Vec<EdgenessRecord>> {
    let entries: Vec<EdgenessRecord> = io::read_jsonl(path)?;
    for e in &entries {
        e.validate()?;
    }
    Ok(entries)
}

/// Writes edge-ness records as JSONL, atomically.
pub fn save_edgeness(path: &Path, records: &[EdgenessRecord]) -> Result<()> {
    io::write_atomic(path, io::to_jsonl(records).as_bytes())
}

/// Writes preference pairs as JSONL, atomically.
pub fn save_pairs(path: &Path, pairs: &[PreferencePair]) -> Result<()> {
    io::write_atomic(path, io::to_jsonl(pairs).as_bytes())
}
