//! Seeded synthetic scenes and a biased synthetic detector.
//!
//! Nothing here is photorealistic: scenes are boxes with tags, the detector
//! is a noise model with knobs for per-tag/per-class recall, localization
//! jitter, class confusion, and false positives. That is enough to run the
//! whole curation loop (evaluate, partition, score, pair) at desk scale and
//! to property-test it: biasing the detector against one time-of-day tag
//! must show up in tag-wise mAP, and max-loss selection must beat random
//! selection in mean edge-ness.
//!
//! Every output is a pure function of (config, seed). Randomness comes from
//! one named generator ([`RNG_ALGORITHM`]) with per-image derived streams,
//! so results do not depend on iteration or thread order.

mod selection;

pub use selection::{MaxLossSelection, RandomSelection, SelectionStrategy, selection_by_name, selection_names};

use std::collections::BTreeMap;

use rand::RngExt;
use rand_distr::{Distribution, Normal, Poisson};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::curation::{
    CaptionRecord, DEFAULT_VARIANTS, EdgenessRecord, ProxyLossConfig, build_pairs, proxy_loss,
};
use crate::datamodel::{
    Annotation, BBox, Dataset, Prediction, SceneMeta, TimeOfDay, default_categories,
};
use crate::error::{Error, Result};

/// The generator family behind every random draw in this module, recorded in
/// output metadata so traces can be reproduced by any implementation of the
/// same algorithm.
pub const RNG_ALGORITHM: &str = "pcg64-xsl-rr-128-64";

/// Pixel sigma used when re-rendering a scene as a caption-variant stand-in.
pub const VARIANT_JITTER_SIGMA: f64 = 2.0;

const PURPOSE_SCENE: u64 = 1;
const PURPOSE_DETECT: u64 = 2;
const PURPOSE_VARIANT: u64 = 3;
const PURPOSE_SELECT: u64 = 4;

/// Derives an independent generator from (seed, purpose, payload). Streams
/// with distinct purposes or payloads never overlap, which keeps per-image
/// work order-independent.
fn sub_rng(seed: u64, purpose: u64, payload: u64) -> Pcg64 {
    Pcg64::new(u128::from(seed), (u128::from(purpose) << 64) | u128::from(payload))
}

/// Scene-generator configuration. Fields omitted from a serialized config
/// fall back to the defaults below, so config files only need to state what
/// they change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneGenConfig {
    pub n_images: u64,
    /// Camera ids drawn uniformly per scene.
    pub cameras: Vec<u32>,
    /// Relative weights for time-of-day tags; zero-weight tags never occur.
    pub tod_weights: BTreeMap<TimeOfDay, f64>,
    /// Inclusive (min, max) object count per image.
    pub objects_per_image: (u32, u32),
    /// Inclusive (min, max) box side length in pixels.
    pub size_range: (f64, f64),
    pub image_width: u32,
    pub image_height: u32,
    pub seed: u64,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        let mut tod_weights = BTreeMap::new();
        for tod in TimeOfDay::ALL {
            tod_weights.insert(tod, 1.0);
        }
        SceneGenConfig {
            n_images: 20,
            cameras: vec![1, 2, 3],
            tod_weights,
            objects_per_image: (1, 4),
            size_range: (20.0, 120.0),
            image_width: 640,
            image_height: 640,
            seed: 0,
        }
    }
}

impl SceneGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cameras.is_empty() {
            return Err(Error::Domain("cameras must be nonempty".into()));
        }
        if self.tod_weights.is_empty()
            || self.tod_weights.values().any(|w| !w.is_finite() || *w < 0.0)
            || self.tod_weights.values().sum::<f64>() <= 0.0
        {
            return Err(Error::Domain(
                "tod_weights must be nonnegative, finite, and not all zero".into(),
            ));
        }
        let (omin, omax) = self.objects_per_image;
        if omin > omax {
            return Err(Error::Domain(format!(
                "objects_per_image min {omin} exceeds max {omax}"
            )));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::Domain("image dimensions must be positive".into()));
        }
        let (smin, smax) = self.size_range;
        if !(smin > 0.0 && smin <= smax) || !smax.is_finite() {
            return Err(Error::Domain(format!(
                "size_range must satisfy 0 < min <= max, got ({smin}, {smax})"
            )));
        }
        let side = f64::from(self.image_width.min(self.image_height));
        if smax > side {
            return Err(Error::Domain(format!(
                "size_range max {smax} exceeds the {side} px image side"
            )));
        }
        Ok(())
    }
}

fn draw_weighted_tod(weights: &BTreeMap<TimeOfDay, f64>, rng: &mut Pcg64) -> TimeOfDay {
    let total: f64 = weights.values().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = None;
    for (tod, w) in weights {
        if *w > 0.0 {
            last = Some(*tod);
            if u < *w {
                return *tod;
            }
            u -= *w;
        }
    }
    last.expect("validated: at least one positive weight")
}

/// Generates a synthetic dataset: one scene per image id 1..=n_images with a
/// uniformly drawn camera, a weighted time-of-day tag, and uniformly placed
/// boxes (classes uniform over the default registry) fully inside the image.
/// Deterministic in `cfg.seed`, independent of evaluation order, via one
/// derived generator per image.
pub fn generate_scenes(cfg: &SceneGenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let categories = default_categories();
    let (w_img, h_img) = (f64::from(cfg.image_width), f64::from(cfg.image_height));
    let mut scenes = Vec::with_capacity(cfg.n_images as usize);
    let mut annotations = Vec::new();
    let mut next_ann_id = 1u64;
    for image_id in 1..=cfg.n_images {
        let mut rng = sub_rng(cfg.seed, PURPOSE_SCENE, image_id);
        let camera_id = cfg.cameras[rng.random_range(0..cfg.cameras.len())];
        let time_of_day = draw_weighted_tod(&cfg.tod_weights, &mut rng);
        scenes.push(SceneMeta {
            image_id,
            file_name: format!("sim_{image_id:06}.jpg"),
            camera_id,
            time_of_day,
            width: cfg.image_width,
            height: cfg.image_height,
        });
        let n_objects = rng.random_range(cfg.objects_per_image.0..=cfg.objects_per_image.1);
        for _ in 0..n_objects {
            let bw = rng.random_range(cfg.size_range.0..=cfg.size_range.1);
            let bh = rng.random_range(cfg.size_range.0..=cfg.size_range.1);
            let x = rng.random_range(0.0..=(w_img - bw));
            let y = rng.random_range(0.0..=(h_img - bh));
            let category_id = categories[rng.random_range(0..categories.len())].id;
            annotations.push(Annotation {
                ann_id: next_ann_id,
                image_id,
                category_id,
                bbox: BBox::new(x, y, bw, bh),
            });
            next_ann_id += 1;
        }
    }
    Dataset::new("synthetic", scenes, annotations, categories)
}

/// Detection probability override for one tag, optionally narrowed to one
/// class. The most specific applicable rule wins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectProbRule {
    pub tod: TimeOfDay,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_id: Option<u64>,
    pub prob: f64,
}

/// Score distribution for emitted predictions; samples are clamped to
/// [0, 1], and sigma 0 means every score is exactly `mean`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub mean: f64,
    pub sigma: f64,
}

/// Noise model for a synthetic detector. Like [`SceneGenConfig`], omitted
/// fields deserialize to their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorProfile {
    /// Recall overrides; anything unlisted uses `default_detect_prob`.
    pub detect_prob: Vec<DetectProbRule>,
    pub default_detect_prob: f64,
    /// Gaussian sigma, in pixels, applied to each box corner coordinate.
    pub box_jitter_sigma: f64,
    /// Per-class relabeling distribution; classes without a row keep their
    /// label. Rows must sum to 1 within 1e-9.
    pub class_confusion: BTreeMap<u64, BTreeMap<u64, f64>>,
    /// Expected false positives per image (Poisson).
    pub fp_rate: f64,
    pub score_model: ScoreModel,
}

impl Default for DetectorProfile {
    fn default() -> Self {
        DetectorProfile {
            detect_prob: Vec::new(),
            default_detect_prob: 0.9,
            box_jitter_sigma: 2.0,
            class_confusion: BTreeMap::new(),
            fp_rate: 0.5,
            score_model: ScoreModel {
                mean: 0.8,
                sigma: 0.1,
            },
        }
    }
}

impl DetectorProfile {
    /// Detects everything exactly: probability 1, no jitter, no relabeling,
    /// no false positives, constant score 0.9.
    pub fn perfect() -> Self {
        DetectorProfile {
            detect_prob: Vec::new(),
            default_detect_prob: 1.0,
            box_jitter_sigma: 0.0,
            class_confusion: BTreeMap::new(),
            fp_rate: 0.0,
            score_model: ScoreModel {
                mean: 0.9,
                sigma: 0.0,
            },
        }
    }

    /// Adds a rule covering every class of one tag.
    pub fn with_tag_prob(mut self, tod: TimeOfDay, prob: f64) -> Self {
        self.detect_prob.push(DetectProbRule {
            tod,
            category_id: None,
            prob,
        });
        self
    }

    fn lookup_detect_prob(&self, tod: TimeOfDay, category_id: u64) -> f64 {
        let mut tag_wide = None;
        for rule in &self.detect_prob {
            if rule.tod != tod {
                continue;
            }
            match rule.category_id {
                Some(c) if c == category_id => return rule.prob,
                None => tag_wide = Some(rule.prob),
                Some(_) => {}
            }
        }
        tag_wide.unwrap_or(self.default_detect_prob)
    }

    pub fn validate(&self) -> Result<()> {
        let prob_ok = |p: f64| p.is_finite() && (0.0..=1.0).contains(&p);
        if !prob_ok(self.default_detect_prob) {
            return Err(Error::Domain(format!(
                "default_detect_prob must be in [0, 1], got {}",
                self.default_detect_prob
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for rule in &self.detect_prob {
            if !prob_ok(rule.prob) {
                return Err(Error::Domain(format!(
                    "detect_prob for ({}, {:?}) must be in [0, 1], got {}",
                    rule.tod, rule.category_id, rule.prob
                )));
            }
            if !seen.insert((rule.tod, rule.category_id)) {
                return Err(Error::Domain(format!(
                    "duplicate detect_prob rule for ({}, {:?})",
                    rule.tod, rule.category_id
                )));
            }
        }
        if !self.box_jitter_sigma.is_finite() || self.box_jitter_sigma < 0.0 {
            return Err(Error::Domain(format!(
                "box_jitter_sigma must be nonnegative, got {}",
                self.box_jitter_sigma
            )));
        }
        if !self.fp_rate.is_finite() || self.fp_rate < 0.0 {
            return Err(Error::Domain(format!(
                "fp_rate must be nonnegative, got {}",
                self.fp_rate
            )));
        }
        if !self.score_model.mean.is_finite()
            || !self.score_model.sigma.is_finite()
            || self.score_model.sigma < 0.0
        {
            return Err(Error::Domain(format!(
                "score_model must have finite mean and nonnegative sigma, got ({}, {})",
                self.score_model.mean, self.score_model.sigma
            )));
        }
        for (from, row) in &self.class_confusion {
            let mut total = 0.0;
            for (to, w) in row {
                if !w.is_finite() || *w < 0.0 {
                    return Err(Error::Domain(format!(
                        "confusion weight {from}->{to} must be nonnegative, got {w}"
                    )));
                }
                total += w;
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!(
                    "confusion row for class {from} sums to {total}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

/// Jitters each corner coordinate with Normal(0, sigma), then repairs the
/// box: corners reordered if they crossed, clamped inside the image, at
/// least 1 px per side.
fn jitter_box(b: &BBox, sigma: f64, w_img: f64, h_img: f64, rng: &mut Pcg64) -> BBox {
    if sigma == 0.0 {
        return *b;
    }
    let noise = Normal::new(0.0, sigma).expect("validated sigma");
    let mut x1 = b.x + noise.sample(rng);
    let mut y1 = b.y + noise.sample(rng);
    let mut x2 = b.x + b.w + noise.sample(rng);
    let mut y2 = b.y + b.h + noise.sample(rng);
    if x2 < x1 {
        std::mem::swap(&mut x1, &mut x2);
    }
    if y2 < y1 {
        std::mem::swap(&mut y1, &mut y2);
    }
    x1 = x1.clamp(0.0, w_img - 1.0);
    x2 = x2.clamp(x1 + 1.0, w_img);
    y1 = y1.clamp(0.0, h_img - 1.0);
    y2 = y2.clamp(y1 + 1.0, h_img);
    BBox::new(x1, y1, x2 - x1, y2 - y1)
}

fn sample_confused_class(
    category_id: u64,
    confusion: &BTreeMap<u64, BTreeMap<u64, f64>>,
    rng: &mut Pcg64,
) -> u64 {
    let Some(row) = confusion.get(&category_id) else {
        return category_id;
    };
    let mut u = rng.random::<f64>();
    let mut last = category_id;
    for (to, w) in row {
        if *w > 0.0 {
            last = *to;
            if u < *w {
                return *to;
            }
            u -= *w;
        }
    }
    last
}

fn sample_score(model: &ScoreModel, rng: &mut Pcg64) -> f64 {
    if model.sigma == 0.0 {
        return model.mean.clamp(0.0, 1.0);
    }
    let noise = Normal::new(model.mean, model.sigma).expect("validated sigma");
    noise.sample(rng).clamp(0.0, 1.0)
}

/// Runs the noise model over every annotation of `d`: detect with the
/// applicable probability, jitter the box, maybe relabel the class, then add
/// Poisson false positives per image. Deterministic in `seed` with one
/// derived generator per image.
pub fn simulate_detector(d: &Dataset, profile: &DetectorProfile, seed: u64) -> Result<Vec<Prediction>> {
    profile.validate()?;
    for row in self_confusion_targets(profile) {
        if d.category(row).is_none() {
            return Err(Error::Domain(format!(
                "confusion maps onto class {row}, which is not in the dataset registry"
            )));
        }
    }
    let anns_by_image = d.annotations_by_image();
    let fp_sampler = if profile.fp_rate > 0.0 {
        Some(Poisson::new(profile.fp_rate).expect("validated fp_rate"))
    } else {
        None
    };
    let mut preds = Vec::new();
    for scene in &d.scenes {
        let mut rng = sub_rng(seed, PURPOSE_DETECT, scene.image_id);
        let (w_img, h_img) = (f64::from(scene.width), f64::from(scene.height));
        for ann in anns_by_image.get(&scene.image_id).into_iter().flatten() {
            let p = profile.lookup_detect_prob(scene.time_of_day, ann.category_id);
            if rng.random::<f64>() >= p {
                continue;
            }
            let bbox = jitter_box(&ann.bbox, profile.box_jitter_sigma, w_img, h_img, &mut rng);
            let category_id = sample_confused_class(ann.category_id, &profile.class_confusion, &mut rng);
            let score = sample_score(&profile.score_model, &mut rng);
            preds.push(Prediction {
                image_id: scene.image_id,
                category_id,
                bbox,
                score,
            });
        }
        if let Some(sampler) = &fp_sampler {
            let n_fp = sampler.sample(&mut rng) as u64;
            for _ in 0..n_fp {
                let max_side = w_img.min(h_img);
                let hi = 110.0f64.min(max_side);
                let lo = 10.0f64.min(hi);
                let bw = rng.random_range(lo..=hi);
                let bh = rng.random_range(lo..=hi);
                let x = rng.random_range(0.0..=(w_img - bw));
                let y = rng.random_range(0.0..=(h_img - bh));
                let category_id = d.categories[rng.random_range(0..d.categories.len())].id;
                let score = sample_score(&profile.score_model, &mut rng);
                preds.push(Prediction {
                    image_id: scene.image_id,
                    category_id,
                    bbox: BBox::new(x, y, bw, bh),
                    score,
                });
            }
        }
    }
    Ok(preds)
}

fn self_confusion_targets(profile: &DetectorProfile) -> impl Iterator<Item = u64> + '_ {
    profile
        .class_confusion
        .values()
        .flat_map(|row| row.iter().filter(|(_, w)| **w > 0.0).map(|(to, _)| *to))
}

/// Outcome of one loop-demo run: how much harder the selected samples are
/// than the pool, plus the preference pairs the batch produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopSummary {
    pub selection: String,
    pub k: u64,
    pub pool_size: u64,
    pub mean_selected_loss: f64,
    pub mean_pool_loss: f64,
    /// Population standard deviation of the pool losses.
    pub std_pool_loss: f64,
    pub pairs_built: u64,
    pub pairs_skipped: u64,
    pub variants_per_image: u64,
    pub seed: u64,
    pub rng: String,
}

/// Runs one iteration of the curation loop at desk scale: generate scenes,
/// realize each caption variant as a re-jittered copy of its scene, score
/// each variant's simulated detections with the proxy loss, select k
/// variants by the named strategy, and build preference pairs from the
/// scores. Returns the summary the loop would act on.
pub fn run_loop_demo(
    scene_cfg: &SceneGenConfig,
    profile: &DetectorProfile,
    selection: &str,
    k: u64,
    seed: u64,
) -> Result<LoopSummary> {
    let strategy = selection_by_name(selection).ok_or_else(|| {
        Error::Domain(format!(
            "unknown selection strategy {selection:?}; expected one of {:?}",
            selection_names()
        ))
    })?;
    profile.validate()?;
    let d = generate_scenes(scene_cfg)?;
    let anns_by_image = d.annotations_by_image();
    let loss_cfg = ProxyLossConfig::default();

    let mut captions = Vec::with_capacity(d.scenes.len());
    let mut pool = Vec::with_capacity(d.scenes.len() * DEFAULT_VARIANTS);
    for scene in &d.scenes {
        let (w_img, h_img) = (f64::from(scene.width), f64::from(scene.height));
        let scene_anns: Vec<&Annotation> =
            anns_by_image.get(&scene.image_id).cloned().unwrap_or_default();
        for variant_index in 0..DEFAULT_VARIANTS {
            let payload = scene.image_id * 8 + variant_index as u64;
            let mut rng = sub_rng(seed, PURPOSE_VARIANT, payload);
            let variant_anns: Vec<Annotation> = scene_anns
                .iter()
                .map(|a| Annotation {
                    bbox: jitter_box(&a.bbox, VARIANT_JITTER_SIGMA, w_img, h_img, &mut rng),
                    ..**a
                })
                .collect();
            let variant_scene = Dataset::new(
                "variant",
                vec![scene.clone()],
                variant_anns.clone(),
                d.categories.clone(),
            )?;
            let detector_seed = rng.random::<u64>();
            let variant_preds = simulate_detector(&variant_scene, profile, detector_seed)?;
            pool.push(EdgenessRecord {
                image_id: scene.image_id,
                variant_index,
                loss: proxy_loss(&variant_preds, &variant_anns, &loss_cfg),
            });
        }
        captions.push(CaptionRecord {
            image_id: scene.image_id,
            base_caption: format!("synthetic scene {}", scene.image_id),
            variants: (0..DEFAULT_VARIANTS)
                .map(|v| format!("rendering {v} of scene {}", scene.image_id))
                .collect(),
            n: DEFAULT_VARIANTS,
        });
    }

    if k > pool.len() as u64 {
        return Err(Error::Domain(format!(
            "k = {k} exceeds the pool of {} variants",
            pool.len()
        )));
    }
    let mean_pool_loss = if pool.is_empty() {
        0.0
    } else {
        pool.iter().map(|r| r.loss).sum::<f64>() / pool.len() as f64
    };
    let std_pool_loss = if pool.is_empty() {
        0.0
    } else {
        (pool
            .iter()
            .map(|r| (r.loss - mean_pool_loss) * (r.loss - mean_pool_loss))
            .sum::<f64>()
            / pool.len() as f64)
            .sqrt()
    };

    let mut selection_rng = sub_rng(seed, PURPOSE_SELECT, 0);
    let mut picked = strategy.select(&pool, k as usize, &mut selection_rng);
    picked.sort_unstable();
    let mean_selected_loss = if picked.is_empty() {
        0.0
    } else {
        picked.iter().map(|i| pool[*i].loss).sum::<f64>() / picked.len() as f64
    };

    let built = build_pairs(&captions, &pool)?;
    Ok(LoopSummary {
        selection: strategy.name().to_string(),
        k,
        pool_size: pool.len() as u64,
        mean_selected_loss,
        mean_pool_loss,
        std_pool_loss,
        pairs_built: built.pairs.len() as u64,
        pairs_skipped: built.skipped,
        variants_per_image: DEFAULT_VARIANTS as u64,
        seed,
        rng: RNG_ALGORITHM.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::tag_histogram;
    use crate::metrics::{ApMode, coco_iou_thresholds, evaluate};

    fn a_only(cfg: &mut SceneGenConfig) {
        cfg.tod_weights = BTreeMap::from([(TimeOfDay::Afternoon, 1.0)]);
    }

    #[test]
    fn zero_images_gives_empty_dataset() {
        let cfg = SceneGenConfig {
            n_images: 0,
            ..SceneGenConfig::default()
        };
        let d = generate_scenes(&cfg).unwrap();
        assert!(d.scenes.is_empty());
        assert!(d.annotations.is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SceneGenConfig::default();
        assert_eq!(generate_scenes(&cfg).unwrap(), generate_scenes(&cfg).unwrap());
        let other = SceneGenConfig {
            seed: 1,
            ..SceneGenConfig::default()
        };
        assert_ne!(generate_scenes(&cfg).unwrap(), generate_scenes(&other).unwrap());
    }

    #[test]
    fn single_weighted_tag_dominates_histogram() {
        let mut cfg = SceneGenConfig {
            n_images: 1000,
            ..SceneGenConfig::default()
        };
        a_only(&mut cfg);
        let d = generate_scenes(&cfg).unwrap();
        let hist = tag_histogram(&d);
        assert!(!hist.is_empty());
        assert!(hist.keys().all(|(_, tod)| *tod == TimeOfDay::Afternoon));
        assert_eq!(hist.values().sum::<u64>(), 1000);
    }

    #[test]
    fn boxes_stay_inside_image_bounds() {
        let cfg = SceneGenConfig {
            n_images: 200,
            size_range: (5.0, 300.0),
            ..SceneGenConfig::default()
        };
        let d = generate_scenes(&cfg).unwrap();
        d.validate().unwrap();
        for a in &d.annotations {
            assert!(a.bbox.x >= 0.0 && a.bbox.y >= 0.0);
            assert!(a.bbox.x + a.bbox.w <= 640.0);
            assert!(a.bbox.y + a.bbox.h <= 640.0);
        }
    }

    #[test]
    fn impossible_geometry_rejected() {
        let cfg = SceneGenConfig {
            size_range: (20.0, 700.0),
            ..SceneGenConfig::default()
        };
        let err = generate_scenes(&cfg).unwrap_err();
        assert!(err.to_string().contains("size_range"), "{err}");
    }

    #[test]
    fn bad_configs_rejected() {
        let base = SceneGenConfig::default();
        let no_cams = SceneGenConfig {
            cameras: vec![],
            ..base.clone()
        };
        assert!(generate_scenes(&no_cams).is_err());
        let zero_weights = SceneGenConfig {
            tod_weights: BTreeMap::from([(TimeOfDay::Night, 0.0)]),
            ..base.clone()
        };
        assert!(generate_scenes(&zero_weights).is_err());
        let bad_counts = SceneGenConfig {
            objects_per_image: (4, 1),
            ..base
        };
        assert!(generate_scenes(&bad_counts).is_err());
    }

    #[test]
    fn perfect_detector_reproduces_annotations() {
        let cfg = SceneGenConfig {
            n_images: 30,
            ..SceneGenConfig::default()
        };
        let d = generate_scenes(&cfg).unwrap();
        let preds = simulate_detector(&d, &DetectorProfile::perfect(), 7).unwrap();
        assert_eq!(preds.len(), d.annotations.len());
        for (p, a) in preds.iter().zip(&d.annotations) {
            assert_eq!(p.image_id, a.image_id);
            assert_eq!(p.category_id, a.category_id);
            assert_eq!(p.bbox, a.bbox);
            assert_eq!(p.score, 0.9);
        }
        let report = evaluate(&preds, &d, &coco_iou_thresholds(), ApMode::Interp101);
        assert_eq!(report.map_value, 1.0);
    }

    #[test]
    fn blind_detector_emits_nothing() {
        let d = generate_scenes(&SceneGenConfig::default()).unwrap();
        let profile = DetectorProfile {
            default_detect_prob: 0.0,
            fp_rate: 0.0,
            ..DetectorProfile::default()
        };
        assert!(simulate_detector(&d, &profile, 3).unwrap().is_empty());
    }

    #[test]
    fn simulation_is_deterministic_in_seed() {
        let d = generate_scenes(&SceneGenConfig::default()).unwrap();
        let profile = DetectorProfile::default();
        assert_eq!(
            simulate_detector(&d, &profile, 5).unwrap(),
            simulate_detector(&d, &profile, 5).unwrap()
        );
        assert_ne!(
            simulate_detector(&d, &profile, 5).unwrap(),
            simulate_detector(&d, &profile, 6).unwrap()
        );
    }

    #[test]
    fn confusion_rows_must_be_distributions() {
        let mut profile = DetectorProfile::default();
        profile.class_confusion.insert(1, BTreeMap::from([(1, 0.5), (2, 0.4)]));
        assert!(profile.validate().is_err());
        profile.class_confusion.insert(1, BTreeMap::from([(1, 1.5), (2, -0.5)]));
        assert!(profile.validate().is_err());
        profile.class_confusion.insert(1, BTreeMap::from([(1, 0.5), (2, 0.5)]));
        assert!(profile.validate().is_ok());
    }

    #[test]
    fn confusion_relabels_classes() {
        let d = generate_scenes(&SceneGenConfig {
            n_images: 40,
            ..SceneGenConfig::default()
        })
        .unwrap();
        let mut profile = DetectorProfile::perfect();
        // Every class collapses onto class 2 with certainty.
        for from in 1..=5u64 {
            profile.class_confusion.insert(from, BTreeMap::from([(2, 1.0)]));
        }
        let preds = simulate_detector(&d, &profile, 11).unwrap();
        assert!(!preds.is_empty());
        assert!(preds.iter().all(|p| p.category_id == 2));
    }

    #[test]
    fn confusion_onto_unknown_class_rejected() {
        let d = generate_scenes(&SceneGenConfig::default()).unwrap();
        let mut profile = DetectorProfile::perfect();
        profile.class_confusion.insert(1, BTreeMap::from([(99, 1.0)]));
        let err = simulate_detector(&d, &profile, 0).unwrap_err();
        assert!(err.to_string().contains("class 99"), "{err}");
    }

    #[test]
    fn false_positives_appear_without_detections() {
        let d = generate_scenes(&SceneGenConfig {
            n_images: 50,
            ..SceneGenConfig::default()
        })
        .unwrap();
        let profile = DetectorProfile {
            default_detect_prob: 0.0,
            fp_rate: 2.0,
            ..DetectorProfile::default()
        };
        let preds = simulate_detector(&d, &profile, 9).unwrap();
        assert!(!preds.is_empty());
        for p in &preds {
            assert!(d.category(p.category_id).is_some());
            assert!((0.0..=1.0).contains(&p.score));
            assert!(p.bbox.w > 0.0 && p.bbox.h > 0.0);
        }
    }

    #[test]
    fn scores_are_clamped_to_unit_interval() {
        let d = generate_scenes(&SceneGenConfig {
            n_images: 60,
            ..SceneGenConfig::default()
        })
        .unwrap();
        let profile = DetectorProfile {
            score_model: ScoreModel {
                mean: 0.95,
                sigma: 0.6,
            },
            ..DetectorProfile::default()
        };
        let preds = simulate_detector(&d, &profile, 2).unwrap();
        assert!(preds.iter().all(|p| (0.0..=1.0).contains(&p.score)));
        // With that sigma some draw must actually hit the clamp.
        assert!(preds.iter().any(|p| p.score == 1.0));
    }

    #[test]
    fn biased_tag_scores_lower() {
        let mut cfg = SceneGenConfig {
            n_images: 100,
            seed: 4,
            ..SceneGenConfig::default()
        };
        cfg.tod_weights =
            BTreeMap::from([(TimeOfDay::Afternoon, 0.5), (TimeOfDay::Night, 0.5)]);
        let d = generate_scenes(&cfg).unwrap();
        let profile = DetectorProfile {
            box_jitter_sigma: 1.0,
            fp_rate: 0.1,
            ..DetectorProfile::default()
        }
        .with_tag_prob(TimeOfDay::Afternoon, 0.95)
        .with_tag_prob(TimeOfDay::Night, 0.05);
        let preds = simulate_detector(&d, &profile, 1).unwrap();
        let report = evaluate(&preds, &d, &coco_iou_thresholds(), ApMode::Interp101);
        let map_a = report.map_by_tag[&TimeOfDay::Afternoon];
        let map_n = report.map_by_tag[&TimeOfDay::Night];
        assert!(map_a > map_n, "A {map_a} vs N {map_n}");
    }

    #[test]
    fn sub_rng_streams_are_distinct() {
        use rand::Rng;
        let a = sub_rng(0, 1, 0).next_u64();
        let b = sub_rng(0, 1, 1).next_u64();
        let c = sub_rng(0, 2, 0).next_u64();
        let d = sub_rng(1, 1, 0).next_u64();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    fn demo_cfg() -> SceneGenConfig {
        SceneGenConfig {
            n_images: 12,
            seed: 21,
            ..SceneGenConfig::default()
        }
    }

    #[test]
    fn loop_demo_is_deterministic() {
        let cfg = demo_cfg();
        let profile = DetectorProfile::default();
        let a = run_loop_demo(&cfg, &profile, "max_loss", 10, 3).unwrap();
        let b = run_loop_demo(&cfg, &profile, "max_loss", 10, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rng, RNG_ALGORITHM);
        assert_eq!(a.pool_size, 60);
        assert_eq!(a.variants_per_image, 5);
    }

    #[test]
    fn max_loss_selection_beats_the_pool_mean() {
        let cfg = demo_cfg();
        let profile = DetectorProfile::default();
        for seed in 0..5 {
            let s = run_loop_demo(&cfg, &profile, "max_loss", 10, seed).unwrap();
            assert!(
                s.mean_selected_loss >= s.mean_pool_loss,
                "seed {seed}: {} < {}",
                s.mean_selected_loss,
                s.mean_pool_loss
            );
        }
    }

    #[test]
    fn random_selection_stays_near_the_pool_mean() {
        let cfg = SceneGenConfig {
            n_images: 40,
            seed: 8,
            ..SceneGenConfig::default()
        };
        let profile = DetectorProfile::default();
        let k = 50u64;
        let mut within = 0;
        for seed in 0..20 {
            let s = run_loop_demo(&cfg, &profile, "random", k, seed).unwrap();
            // Sampling without replacement has standard error at most
            // std / sqrt(k), so 3 of those is a conservative bound.
            let diff = (s.mean_selected_loss - s.mean_pool_loss).abs();
            if diff <= 3.0 * s.std_pool_loss / (k as f64).sqrt() {
                within += 1;
            }
        }
        assert!(within >= 19, "only {within}/20 seeds within 3 standard errors");
    }

    #[test]
    fn selecting_the_whole_pool_makes_strategies_agree() {
        let cfg = demo_cfg();
        let profile = DetectorProfile::default();
        let a = run_loop_demo(&cfg, &profile, "max_loss", 60, 5).unwrap();
        let b = run_loop_demo(&cfg, &profile, "random", 60, 5).unwrap();
        assert_eq!(a.mean_selected_loss, b.mean_selected_loss);
        assert_eq!(a.mean_pool_loss, b.mean_pool_loss);
        assert_eq!(a.pairs_built, b.pairs_built);
    }

    #[test]
    fn loop_demo_rejects_bad_requests() {
        let cfg = demo_cfg();
        let profile = DetectorProfile::default();
        let err = run_loop_demo(&cfg, &profile, "best", 1, 0).unwrap_err();
        assert!(err.to_string().contains("unknown selection"), "{err}");
        let err = run_loop_demo(&cfg, &profile, "random", 61, 0).unwrap_err();
        assert!(err.to_string().contains("exceeds the pool"), "{err}");
    }

    #[test]
    fn loop_demo_builds_pairs_from_every_image() {
        let cfg = demo_cfg();
        let s = run_loop_demo(&cfg, &DetectorProfile::default(), "max_loss", 5, 0).unwrap();
        assert_eq!(s.pairs_built + s.pairs_skipped, 12);
    }
}
