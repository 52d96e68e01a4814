//! mAP w/o TP: score a model only on a baseline's blind spots.
//!
//! The pipeline has three steps. First the ground truth is partitioned by
//! what a baseline model A already detects confidently (strict IoU above
//! `tp_iou` with matching class): those annotations are "non-weak", the rest
//! are "weak". Second, the candidate model B's predictions are filtered so
//! that redetections of non-weak instances do not inflate the score. Third,
//! ordinary evaluation runs against the weak annotations only.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::datamodel::{Dataset, Prediction};
use crate::error::{Error, Result};
use crate::geometry::{ThresholdMode, iou, match_single_image};
use crate::metrics::{ApMode, EvalReport, evaluate};

/// Ground-truth annotation ids split by whether the baseline detected them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeakPartition {
    /// Annotations the baseline missed (G_weak).
    pub weak: BTreeSet<u64>,
    /// Annotations the baseline detected confidently (G_non-weak).
    pub non_weak: BTreeSet<u64>,
    /// Label for the baseline model that induced the partition.
    pub baseline_name: String,
}

impl WeakPartition {
    /// Panics unless `weak` and `non_weak` exactly partition the annotation
    /// ids of `d`. Callers pass partitions and datasets around separately,
    /// and silently mixing them up would produce plausible-looking garbage.
    fn assert_partitions(&self, d: &Dataset) {
        assert!(
            self.weak.is_disjoint(&self.non_weak),
            "weak and non_weak sets overlap"
        );
        let all: BTreeSet<u64> = d.annotations.iter().map(|a| a.ann_id).collect();
        let union: BTreeSet<u64> = self.weak.union(&self.non_weak).copied().collect();
        assert!(
            union == all,
            "partition does not cover the dataset's annotation ids (partition {} ids, dataset {})",
            union.len(),
            all.len()
        );
    }
}

/// Knobs for the blind-spot pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlindspotConfig {
    /// Strict IoU bound for counting a baseline prediction as a true
    /// positive; must lie inside (0, 1).
    pub tp_iou: f64,
    /// Model-B predictions whose best class-agnostic IoU lands on a non-weak
    /// annotation are kept only when that IoU is strictly below this bound.
    pub keep_iou: f64,
    /// Baseline predictions scoring below this are ignored when deciding
    /// which annotations the baseline detected.
    pub score_threshold: f64,
}

impl Default for BlindspotConfig {
    fn default() -> Self {
        BlindspotConfig {
            tp_iou: 0.95,
            keep_iou: 0.5,
            score_threshold: 0.25,
        }
    }
}

/// Evaluation on the weak subset plus the bookkeeping counts that make the
/// headline number interpretable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlindspotReport {
    /// Evaluation of the filtered predictions against weak annotations only.
    /// `eval.map_value` is NaN when the baseline left no weak annotations.
    pub eval: EvalReport,
    pub weak_count: u64,
    pub non_weak_count: u64,
    pub kept_predictions: u64,
    pub dropped_predictions: u64,
}

/// Splits the annotations of `d` by whether model A detected them: an
/// annotation is non-weak when a greedy per-image, class-aware match at
/// strict IoU > `tp_iou` (predictions below `score_threshold` ignored) pairs
/// some prediction with it. Everything else is weak.
pub fn partition_weak(
    preds_a: &[Prediction],
    d: &Dataset,
    tp_iou: f64,
    score_threshold: f64,
    baseline_name: &str,
) -> Result<WeakPartition> {
    if !(tp_iou > 0.0 && tp_iou < 1.0) {
        return Err(Error::Domain(format!(
            "tp_iou must be inside (0, 1), got {tp_iou}"
        )));
    }
    let scene_ids = d.scene_ids();
    let mut preds_by_image: BTreeMap<u64, Vec<(usize, &Prediction)>> = BTreeMap::new();
    for (i, p) in preds_a.iter().enumerate() {
        if scene_ids.contains(&p.image_id) {
            preds_by_image.entry(p.image_id).or_default().push((i, p));
        }
    }

    let mut non_weak = BTreeSet::new();
    for (image_id, anns) in d.annotations_by_image() {
        let Some(img_preds) = preds_by_image.get(&image_id) else {
            continue;
        };
        let m = match_single_image(
            img_preds,
            &anns,
            tp_iou,
            ThresholdMode::Exclusive,
            true,
            score_threshold,
        );
        non_weak.extend(m.pairs.iter().map(|(_, ann_id, _)| *ann_id));
    }
    let weak = d
        .annotations
        .iter()
        .map(|a| a.ann_id)
        .filter(|id| !non_weak.contains(id))
        .collect();
    Ok(WeakPartition {
        weak,
        non_weak,
        baseline_name: baseline_name.to_string(),
    })
}

/// Filters model B's predictions for blind-spot scoring, preserving order.
///
/// Each prediction is compared class-agnostically against every annotation
/// in its image; the highest-IoU annotation (ties to the lowest ann_id)
/// decides its fate. Kept when that annotation is weak, or when it is
/// non-weak but the overlap is strictly below `keep_iou`. Predictions
/// overlapping nothing at all are kept too: they are exactly the false
/// positives the blind-spot score must not hide.
pub fn filter_predictions(
    preds_b: &[Prediction],
    d: &Dataset,
    part: &WeakPartition,
    keep_iou: f64,
) -> Vec<Prediction> {
    part.assert_partitions(d);
    let anns_by_image = d.annotations_by_image();
    preds_b
        .iter()
        .filter(|p| {
            let Some(anns) = anns_by_image.get(&p.image_id) else {
                return true;
            };
            let mut best: Option<(f64, u64)> = None;
            for a in anns {
                let v = iou(&p.bbox, &a.bbox);
                if v <= 0.0 {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bv, bid)) => v > bv || (v == bv && a.ann_id < bid),
                };
                if better {
                    best = Some((v, a.ann_id));
                }
            }
            match best {
                None => true,
                Some((v, ann_id)) => part.weak.contains(&ann_id) || v < keep_iou,
            }
        })
        .cloned()
        .collect()
}

/// Runs the full blind-spot pipeline: partition by model A's true positives,
/// filter model B, evaluate on the weak annotations only.
///
/// When the baseline detected everything there is nothing left to score;
/// `eval.map_value` is then NaN and the counts tell the story.
pub fn map_wo_tp(
    preds_a: &[Prediction],
    preds_b: &[Prediction],
    d: &Dataset,
    baseline_name: &str,
    cfg: &BlindspotConfig,
    iou_thresholds: &[f64],
    mode: ApMode,
) -> Result<BlindspotReport> {
    let part = partition_weak(preds_a, d, cfg.tp_iou, cfg.score_threshold, baseline_name)?;
    let kept = filter_predictions(preds_b, d, &part, cfg.keep_iou);
    let eval = if part.weak.is_empty() {
        EvalReport {
            map_value: f64::NAN,
            ap_by_class: BTreeMap::new(),
            map_by_tag: BTreeMap::new(),
            counts_by_class: d.categories.iter().map(|c| (c.id, 0)).collect(),
            iou_thresholds: iou_thresholds.to_vec(),
        }
    } else {
        let d_weak = d.restrict_annotations(&part.weak);
        evaluate(&kept, &d_weak, iou_thresholds, mode)
    };
    Ok(BlindspotReport {
        eval,
        weak_count: part.weak.len() as u64,
        non_weak_count: part.non_weak.len() as u64,
        kept_predictions: kept.len() as u64,
        dropped_predictions: (preds_b.len() - kept.len()) as u64,
    })
}
