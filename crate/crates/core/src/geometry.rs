//! Box geometry and greedy score-ordered matching.
//!
//! Matching walks predictions in descending score order and assigns each to
//! the best remaining annotation. All tie-breaks are pinned (score ties keep
//! input order, IoU ties take the lowest annotation id) so results are
//! reproducible across runs and platforms.

use crate::datamodel::{Annotation, BBox, Prediction};
use crate::error::{Error, Result};

/// Intersection-over-union of two boxes in continuous coordinates.
/// Returns 0 for disjoint boxes. Assumes valid boxes (`w, h > 0`).
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let left = a.x.max(b.x);
    let top = a.y.max(b.y);
    let right = (a.x + a.w).min(b.x + b.w);
    let bottom = (a.y + a.h).min(b.y + b.h);
    if right <= left || bottom <= top {
        return 0.0;
    }
    let inter = (right - left) * (bottom - top);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// How a candidate IoU is compared against the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ThresholdMode {
    /// Match requires `iou >= threshold` (the public contract).
    Inclusive,
    /// Match requires `iou > threshold` (used by the blind-spot partition).
    Exclusive,
}

/// One-to-one assignment of predictions to annotations for a single image.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `(prediction_index, ann_id, iou)` per matched pair, in the order
    /// predictions were processed (descending score). Prediction indexes
    /// refer to the input slice.
    pub pairs: Vec<(usize, u64, f64)>,
    /// Indexes of predictions that passed the score filter but matched
    /// nothing.
    pub unmatched_predictions: Vec<usize>,
    /// Annotation ids left unmatched, in input order.
    pub unmatched_annotations: Vec<u64>,
    pub iou_threshold: f64,
    pub class_aware: bool,
}

/// Greedy matcher core shared by the public API, the metrics module, and the
/// blind-spot partition. `preds` carries original indexes so callers can
/// pre-filter without losing track of positions.
pub(crate) fn match_single_image(
    preds: &[(usize, &Prediction)],
    anns: &[&Annotation],
    iou_threshold: f64,
    mode: ThresholdMode,
    class_aware: bool,
    score_threshold: f64,
) -> MatchResult {
    let mut order: Vec<&(usize, &Prediction)> = preds
        .iter()
        .filter(|(_, p)| p.score >= score_threshold)
        .collect();
    order.sort_by(|a, b| b.1.score.partial_cmp(&a.1.score).expect("finite scores"));

    let mut ann_taken = vec![false; anns.len()];
    let mut pairs = Vec::new();
    let mut unmatched_predictions = Vec::new();
    for (pred_idx, pred) in order {
        let mut best: Option<(usize, f64)> = None;
        for (ai, ann) in anns.iter().enumerate() {
            if ann_taken[ai] {
                continue;
            }
            if class_aware && ann.category_id != pred.category_id {
                continue;
            }
            let val = iou(&pred.bbox, &ann.bbox);
            let passes = match mode {
                ThresholdMode::Inclusive => val >= iou_threshold,
                ThresholdMode::Exclusive => val > iou_threshold,
            };
            if !passes {
                continue;
            }
            let better = match best {
                None => true,
                Some((bi, bv)) => {
                    val > bv || (val == bv && ann.ann_id < anns[bi].ann_id)
                }
            };
            if better {
                best = Some((ai, val));
            }
        }
        match best {
            Some((ai, val)) => {
                ann_taken[ai] = true;
                pairs.push((*pred_idx, anns[ai].ann_id, val));
            }
            None => unmatched_predictions.push(*pred_idx),
        }
    }
    let unmatched_annotations = anns
        .iter()
        .enumerate()
        .filter(|(ai, _)| !ann_taken[*ai])
        .map(|(_, a)| a.ann_id)
        .collect();
    MatchResult {
        pairs,
        unmatched_predictions,
        unmatched_annotations,
        iou_threshold,
        class_aware,
    }
}

/// Greedy score-descending matching for one image.
///
/// Predictions below `score_threshold` are discarded up front; the rest are
/// processed in descending score (ties keep input order) and each is matched
/// to the unmatched annotation of highest IoU at or above `iou_threshold`
/// (same class required when `class_aware`). IoU ties go to the lowest
/// annotation id.
pub fn greedy_match(
    preds: &[Prediction],
    anns: &[Annotation],
    iou_threshold: f64,
    class_aware: bool,
    score_threshold: f64,
) -> Result<MatchResult> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::Domain(format!(
            "iou_threshold must be in (0, 1], got {iou_threshold}"
        )));
    }
    let mut image_ids = preds
        .iter()
        .map(|p| p.image_id)
        .chain(anns.iter().map(|a| a.image_id));
    if let Some(first) = image_ids.next() {
        if let Some(other) = image_ids.find(|id| *id != first) {
            return Err(Error::Domain(format!(
                "mixed image ids in one match call: {first} and {other}"
            )));
        }
    }
    let indexed: Vec<(usize, &Prediction)> = preds.iter().enumerate().collect();
    let ann_refs: Vec<&Annotation> = anns.iter().collect();
    Ok(match_single_image(
        &indexed,
        &ann_refs,
        iou_threshold,
        ThresholdMode::Inclusive,
        class_aware,
        score_threshold,
    ))
}
