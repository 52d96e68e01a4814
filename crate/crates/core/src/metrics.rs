//! Precision-recall curves, average precision, and mAP with class-wise and
//! time-of-day slicing.
//!
//! Matching follows the usual detection-evaluator recipe: predictions are
//! matched greedily per image and class, then pooled across images in
//! descending score order to build each curve. Two AP integration modes are
//! provided: 101-point interpolation (the COCO convention, the default) and
//! exact integration under the precision envelope.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::datamodel::{Annotation, Category, Dataset, Prediction, TimeOfDay};
use crate::error::{Error, Result};
use crate::geometry::{ThresholdMode, match_single_image};

/// AP integration mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ApMode {
    /// Sample the precision envelope at recalls 0.00, 0.01, ..., 1.00 and
    /// average the 101 values.
    #[serde(rename = "interp101")]
    Interp101,
    /// Integrate exactly under the precision envelope.
    #[serde(rename = "all_points")]
    AllPoints,
}

impl fmt::Display for ApMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ApMode::Interp101 => "interp101",
            ApMode::AllPoints => "all_points",
        })
    }
}

/// The default IoU thresholds, 0.50 to 0.95 in steps of 0.05.
pub fn coco_iou_thresholds() -> Vec<f64> {
    vec![0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95]
}

/// One cumulative step of a precision-recall curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub score_cut: f64,
}

/// Cumulative precision-recall curve for one class at one IoU threshold.
/// Points are recall-ascending; an empty curve means the class had no
/// positives (AP is 0 by convention).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub n_positives: u64,
}

/// Evaluation summary: overall mAP plus class-wise and tag-wise slices.
///
/// `ap_by_class` holds classes with at least one annotation; classes absent
/// from ground truth are excluded from the mAP mean rather than counted as
/// zero. `counts_by_class` covers the whole registry (zeros included).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map_value: f64,
    pub ap_by_class: BTreeMap<u64, f64>,
    pub map_by_tag: BTreeMap<TimeOfDay, f64>,
    pub counts_by_class: BTreeMap<u64, u64>,
    pub iou_thresholds: Vec<f64>,
}

/// Builds the PR curve for one class at one IoU threshold. Predictions and
/// annotations may span many images; matching is per image with
/// `class_aware = true`. The registry determines which category ids are
/// valid.
pub fn pr_curve(
    preds: &[Prediction],
    anns: &[Annotation],
    categories: &[Category],
    category_id: u64,
    iou_threshold: f64,
) -> Result<PrCurve> {
    if !categories.iter().any(|c| c.id == category_id) {
        return Err(Error::Domain(format!("unknown category id {category_id}")));
    }
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::Domain(format!(
            "iou_threshold must be in (0, 1], got {iou_threshold}"
        )));
    }
    let n_positives = anns.iter().filter(|a| a.category_id == category_id).count() as u64;
    if n_positives == 0 {
        return Ok(PrCurve {
            points: Vec::new(),
            n_positives: 0,
        });
    }

    type Group<'a> = (Vec<(usize, &'a Prediction)>, Vec<&'a Annotation>);
    let mut by_image: BTreeMap<u64, Group> = BTreeMap::new();
    for a in anns.iter().filter(|a| a.category_id == category_id) {
        by_image.entry(a.image_id).or_default().1.push(a);
    }
    for (i, p) in preds.iter().enumerate() {
        if p.category_id == category_id {
            by_image.entry(p.image_id).or_default().0.push((i, p));
        }
    }

    // (score, is_tp) in image order then input order; a stable sort on score
    // alone then gives a fully deterministic global ordering.
    let mut flagged: Vec<(f64, bool)> = Vec::new();
    for (img_preds, img_anns) in by_image.values() {
        let m = match_single_image(
            img_preds,
            img_anns,
            iou_threshold,
            ThresholdMode::Inclusive,
            true,
            0.0,
        );
        let matched: BTreeSet<usize> = m.pairs.iter().map(|(pi, _, _)| *pi).collect();
        for (pi, p) in img_preds {
            flagged.push((p.score, matched.contains(pi)));
        }
    }
    flagged.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite scores"));

    let mut tp = 0u64;
    let mut fp = 0u64;
    let points = flagged
        .iter()
        .map(|(score, is_tp)| {
            if *is_tp {
                tp += 1;
            } else {
                fp += 1;
            }
            PrPoint {
                recall: tp as f64 / n_positives as f64,
                precision: tp as f64 / (tp + fp) as f64,
                score_cut: *score,
            }
        })
        .collect();
    Ok(PrCurve { points, n_positives })
}

/// Integrates a PR curve into a single AP value. Empty curves give 0.
pub fn average_precision(curve: &PrCurve, mode: ApMode) -> f64 {
    let points = &curve.points;
    if points.is_empty() {
        return 0.0;
    }
    // Precision envelope: env[i] = max precision at recall >= recall[i].
    let mut env = vec![0.0f64; points.len()];
    let mut running = 0.0f64;
    for i in (0..points.len()).rev() {
        running = running.max(points[i].precision);
        env[i] = running;
    }
    match mode {
        ApMode::Interp101 => {
            let mut sum = 0.0;
            for k in 0..=100u32 {
                let r = f64::from(k) / 100.0;
                let idx = points.partition_point(|p| p.recall < r);
                if idx < points.len() {
                    sum += env[idx];
                }
            }
            sum / 101.0
        }
        ApMode::AllPoints => {
            let mut ap = 0.0;
            let mut prev_recall = 0.0;
            for (i, p) in points.iter().enumerate() {
                ap += (p.recall - prev_recall) * env[i];
                prev_recall = p.recall;
            }
            ap
        }
    }
}

fn mean_ap_by_class(
    preds: &[Prediction],
    d: &Dataset,
    iou_thresholds: &[f64],
    mode: ApMode,
) -> (f64, BTreeMap<u64, f64>) {
    let classes_with_anns: BTreeSet<u64> =
        d.annotations.iter().map(|a| a.category_id).collect();
    let mut ap_by_class = BTreeMap::new();
    for cid in classes_with_anns {
        let mut sum = 0.0;
        for t in iou_thresholds {
            let curve = pr_curve(preds, &d.annotations, &d.categories, cid, *t)
                .expect("annotation categories are registered and thresholds validated");
            sum += average_precision(&curve, mode);
        }
        ap_by_class.insert(cid, sum / iou_thresholds.len() as f64);
    }
    let map_value = if ap_by_class.is_empty() {
        0.0
    } else {
        ap_by_class.values().sum::<f64>() / ap_by_class.len() as f64
    };
    (map_value, ap_by_class)
}

/// Full evaluation: per-class AP averaged over `iou_thresholds`, mAP over
/// classes with at least one annotation, and tag-wise mAP recomputed on each
/// time-of-day scene subset.
///
/// Thresholds must be nonempty and lie in `(0, 1]`. Predictions referencing
/// images absent from `d` are ignored, mirroring evaluators that define the
/// evaluation universe by the ground-truth image set.
pub fn evaluate(preds: &[Prediction], d: &Dataset, iou_thresholds: &[f64], mode: ApMode) -> EvalReport {
    assert!(!iou_thresholds.is_empty(), "iou_thresholds must be nonempty");
    let scene_ids = d.scene_ids();
    let in_scope: Vec<Prediction> = preds
        .iter()
        .filter(|p| scene_ids.contains(&p.image_id))
        .cloned()
        .collect();

    let (map_value, ap_by_class) = mean_ap_by_class(&in_scope, d, iou_thresholds, mode);

    let mut counts_by_class: BTreeMap<u64, u64> =
        d.categories.iter().map(|c| (c.id, 0)).collect();
    for a in &d.annotations {
        if let Some(n) = counts_by_class.get_mut(&a.category_id) {
            *n += 1;
        }
    }

    let mut map_by_tag = BTreeMap::new();
    for tag in TimeOfDay::ALL {
        if !d.scenes.iter().any(|s| s.time_of_day == tag) {
            continue;
        }
        let d_tag = d.restrict_to_tag(tag);
        let tag_ids = d_tag.scene_ids();
        let tag_preds: Vec<Prediction> = in_scope
            .iter()
            .filter(|p| tag_ids.contains(&p.image_id))
            .cloned()
            .collect();
        let (tag_map, _) = mean_ap_by_class(&tag_preds, &d_tag, iou_thresholds, mode);
        map_by_tag.insert(tag, tag_map);
    }

    EvalReport {
        map_value,
        ap_by_class,
        map_by_tag,
        counts_by_class,
        iou_thresholds: iou_thresholds.to_vec(),
    }
}
