//! Reference implementations and generators shared by the integration tests.
//!
//! Everything here favors clarity over speed (quadratic scans, no shared
//! code with the library's evaluation path), so agreement between the two
//! is evidence of correctness rather than the same bug counted twice.

#![allow(dead_code)]

use std::collections::BTreeSet;

use edgekit_core::datamodel::{
    Annotation, BBox, Dataset, Prediction, SceneMeta, TimeOfDay, default_categories,
};
use rand::RngExt;
use rand_pcg::Pcg64;

/// IoU recomputed from interval overlaps.
pub fn ref_iou(a: &BBox, b: &BBox) -> f64 {
    let ix = overlap(a.x, a.x + a.w, b.x, b.x + b.w);
    let iy = overlap(a.y, a.y + a.h, b.y, b.y + b.h);
    let inter = ix * iy;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.w * a.h + b.w * b.h - inter;
    if union <= 0.0 { 0.0 } else { inter / union }
}

fn overlap(lo1: f64, hi1: f64, lo2: f64, hi2: f64) -> f64 {
    let lo = if lo1 > lo2 { lo1 } else { lo2 };
    let hi = if hi1 < hi2 { hi1 } else { hi2 };
    if hi > lo { hi - lo } else { 0.0 }
}

struct RefDet {
    score: f64,
    image_id: u64,
    input_pos: usize,
    is_tp: bool,
}

/// Average precision for one class at one IoU threshold: per-image greedy
/// matching followed by a direct max-scan integration of the PR points.
fn ref_ap(preds: &[Prediction], d: &Dataset, category_id: u64, threshold: f64, interp: bool) -> f64 {
    let gt: Vec<&Annotation> = d
        .annotations
        .iter()
        .filter(|a| a.category_id == category_id)
        .collect();
    if gt.is_empty() {
        return 0.0;
    }

    let mut dets: Vec<RefDet> = Vec::new();
    for image_id in d.scene_ids() {
        let img_preds: Vec<(usize, &Prediction)> = preds
            .iter()
            .enumerate()
            .filter(|(_, p)| p.image_id == image_id && p.category_id == category_id)
            .collect();
        let img_anns: Vec<&&Annotation> = gt.iter().filter(|a| a.image_id == image_id).collect();
        let mut order: Vec<usize> = (0..img_preds.len()).collect();
        order.sort_by(|i, j| {
            img_preds[*j]
                .1
                .score
                .partial_cmp(&img_preds[*i].1.score)
                .expect("finite scores")
        });
        let mut used: BTreeSet<u64> = BTreeSet::new();
        for oi in order {
            let (input_pos, p) = img_preds[oi];
            let mut best: Option<(u64, f64)> = None;
            for a in &img_anns {
                if used.contains(&a.ann_id) {
                    continue;
                }
                let v = ref_iou(&p.bbox, &a.bbox);
                if v < threshold {
                    continue;
                }
                let take = match best {
                    None => true,
                    Some((bid, bv)) => v > bv || (v == bv && a.ann_id < bid),
                };
                if take {
                    best = Some((a.ann_id, v));
                }
            }
            let is_tp = match best {
                Some((id, _)) => {
                    used.insert(id);
                    true
                }
                None => false,
            };
            dets.push(RefDet {
                score: p.score,
                image_id,
                input_pos,
                is_tp,
            });
        }
    }
    dets.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("finite scores")
            .then(a.image_id.cmp(&b.image_id))
            .then(a.input_pos.cmp(&b.input_pos))
    });

    let n_pos = gt.len() as f64;
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut recalls = Vec::with_capacity(dets.len());
    let mut precisions = Vec::with_capacity(dets.len());
    for det in &dets {
        if det.is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        recalls.push(tp as f64 / n_pos);
        precisions.push(tp as f64 / (tp + fp) as f64);
    }

    if interp {
        let mut total = 0.0;
        for k in 0..=100u32 {
            let r = f64::from(k) / 100.0;
            let mut best = 0.0;
            for i in 0..recalls.len() {
                if recalls[i] >= r && precisions[i] > best {
                    best = precisions[i];
                }
            }
            total += best;
        }
        total / 101.0
    } else {
        let mut total = 0.0;
        let mut prev = 0.0;
        for i in 0..recalls.len() {
            let mut best = precisions[i];
            for &p in &precisions[i + 1..] {
                if p > best {
                    best = p;
                }
            }
            total += (recalls[i] - prev) * best;
            prev = recalls[i];
        }
        total
    }
}

/// Reference mAP plus per-class APs (classes with at least one annotation),
/// predictions restricted to the dataset's images first.
pub fn ref_map(
    preds: &[Prediction],
    d: &Dataset,
    thresholds: &[f64],
    interp: bool,
) -> (f64, Vec<(u64, f64)>) {
    let images = d.scene_ids();
    let in_scope: Vec<Prediction> = preds
        .iter()
        .filter(|p| images.contains(&p.image_id))
        .cloned()
        .collect();
    let classes: BTreeSet<u64> = d.annotations.iter().map(|a| a.category_id).collect();
    let mut per_class = Vec::new();
    for cid in &classes {
        let mut sum = 0.0;
        for t in thresholds {
            sum += ref_ap(&in_scope, d, *cid, *t, interp);
        }
        per_class.push((*cid, sum / thresholds.len() as f64));
    }
    let map = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|(_, ap)| *ap).sum::<f64>() / per_class.len() as f64
    };
    (map, per_class)
}

/// First index whose value is >= (respectively <=) every element, found by
/// checking each candidate against the whole slice.
pub fn ref_extremes(values: &[f64]) -> (usize, usize) {
    let hi = (0..values.len())
        .find(|i| values.iter().all(|v| values[*i] >= *v))
        .expect("nonempty values");
    let lo = (0..values.len())
        .find(|i| values.iter().all(|v| values[*i] <= *v))
        .expect("nonempty values");
    (hi, lo)
}

/// Central finite difference of `f` at `x`, one coordinate at a time.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut hi = x.to_vec();
            let mut lo = x.to_vec();
            hi[i] += h;
            lo[i] -= h;
            (f(&hi) - f(&lo)) / (2.0 * h)
        })
        .collect()
}

/// Boxes on a quarter-pixel grid: coordinate sums and differences stay
/// exactly representable, so an identical prediction really scores IoU 1.0
/// rather than 1 minus an ulp.
pub fn random_box(rng: &mut Pcg64) -> BBox {
    BBox::new(
        f64::from(rng.random_range(0..640u32)) * 0.25,
        f64::from(rng.random_range(0..640u32)) * 0.25,
        f64::from(rng.random_range(32..=160u32)) * 0.25,
        f64::from(rng.random_range(32..=160u32)) * 0.25,
    )
}

/// A noisy copy of `b`, shifted and rescaled enough to spread matches across
/// the whole IoU threshold ladder.
pub fn perturb_box(b: &BBox, rng: &mut Pcg64) -> BBox {
    let dx = rng.random_range(-8.0..8.0);
    let dy = rng.random_range(-8.0..8.0);
    let sw = rng.random_range(0.7..1.3);
    let sh = rng.random_range(0.7..1.3);
    BBox::new(b.x + dx, b.y + dy, (b.w * sw).max(1.0), (b.h * sh).max(1.0))
}

fn unique_score(rng: &mut Pcg64, seen: &mut BTreeSet<u64>) -> f64 {
    loop {
        let s: f64 = rng.random();
        if seen.insert(s.to_bits()) {
            return s;
        }
    }
}

/// Small random detection instance: 1-5 images, 0-5 annotations and 0-8
/// predictions per image, classes 1-3. Half the predictions perturb a real
/// annotation so matches occur at interesting IoU levels; scores are drawn
/// until globally distinct so no result hinges on tie-break conventions.
pub fn random_instance(rng: &mut Pcg64) -> (Dataset, Vec<Prediction>) {
    let n_images: u64 = rng.random_range(1..=5);
    let mut scenes = Vec::new();
    let mut anns: Vec<Annotation> = Vec::new();
    let mut preds = Vec::new();
    let mut ann_id = 1u64;
    let mut seen_scores = BTreeSet::new();
    for image_id in 1..=n_images {
        scenes.push(SceneMeta {
            image_id,
            file_name: format!("r{image_id}.jpg"),
            camera_id: rng.random_range(1..=3),
            time_of_day: TimeOfDay::ALL[rng.random_range(0..4)],
            width: 200,
            height: 200,
        });
        let first_ann = anns.len();
        for _ in 0..rng.random_range(0..=5u32) {
            anns.push(Annotation {
                ann_id,
                image_id,
                category_id: rng.random_range(1..=3),
                bbox: random_box(rng),
            });
            ann_id += 1;
        }
        for _ in 0..rng.random_range(0..=8u32) {
            let bbox = if anns.len() > first_ann && rng.random::<bool>() {
                perturb_box(&anns[rng.random_range(first_ann..anns.len())].bbox, rng)
            } else {
                random_box(rng)
            };
            preds.push(Prediction {
                image_id,
                category_id: rng.random_range(1..=3),
                bbox,
                score: unique_score(rng, &mut seen_scores),
            });
        }
    }
    let d = Dataset::new("random", scenes, anns, default_categories()).expect("valid instance");
    (d, preds)
}

/// Like [`random_instance`] but guaranteed to contain at least one
/// annotation.
pub fn random_instance_with_anns(rng: &mut Pcg64) -> (Dataset, Vec<Prediction>) {
    loop {
        let inst = random_instance(rng);
        if !inst.0.annotations.is_empty() {
            return inst;
        }
    }
}
