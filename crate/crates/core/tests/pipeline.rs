//! File-level integration: everything that crosses a process boundary
//! (datasets, predictions, captions, losses, pairs, log-probs) must survive
//! a save/load cycle without changing any downstream number.

mod common;

use std::collections::BTreeMap;
use std::fs;

use edgekit_core::blindspot::{BlindspotConfig, map_wo_tp};
use edgekit_core::curation::{
    CaptionRecord, EdgenessRecord, LossSource, build_pairs, load_captions, load_loss_entries,
    save_edgeness, save_pairs, score_variants,
};
use edgekit_core::datamodel::{
    TimeOfDay, load_dataset, load_predictions, save_dataset, save_predictions,
};
use edgekit_core::dpo::{LogProbQuad, load_logprobs};
use edgekit_core::io;
use edgekit_core::metrics::{ApMode, coco_iou_thresholds, evaluate};
use edgekit_core::simharness::{DetectorProfile, SceneGenConfig, generate_scenes, simulate_detector};
use rand::SeedableRng;
use rand_pcg::Pcg64;
use tempfile::TempDir;

#[test]
fn dataset_round_trip_is_lossless_and_stable() {
    let dir = TempDir::new().unwrap();
    let cfg = SceneGenConfig {
        n_images: 12,
        seed: 11,
        ..SceneGenConfig::default()
    };
    let d = generate_scenes(&cfg).unwrap();

    let path = dir.path().join("annotations.json");
    save_dataset(&d, &path).unwrap();
    let loaded = load_dataset(&path).unwrap();
    assert_eq!(loaded.name, "annotations");
    assert_eq!(loaded.scenes, d.scenes);
    assert_eq!(loaded.annotations, d.annotations);
    assert_eq!(loaded.categories, d.categories);

    let again = dir.path().join("again.json");
    save_dataset(&loaded, &again).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn predictions_round_trip_is_canonical() {
    let dir = TempDir::new().unwrap();
    let mut rng = Pcg64::seed_from_u64(41);
    let (_, preds) = common::random_instance_with_anns(&mut rng);

    let path = dir.path().join("predictions.json");
    save_predictions(&preds, &path).unwrap();
    let loaded = load_predictions(&path).unwrap();
    let mut want = preds.clone();
    want.sort_by(|a, b| {
        a.image_id
            .cmp(&b.image_id)
            .then(b.score.partial_cmp(&a.score).unwrap())
    });
    assert_eq!(loaded, want);

    // once canonicalized, the representation is a fixed point
    let canon = dir.path().join("canonical.json");
    save_predictions(&loaded, &canon).unwrap();
    assert_eq!(load_predictions(&canon).unwrap(), loaded);
    let canon2 = dir.path().join("canonical2.json");
    save_predictions(&loaded, &canon2).unwrap();
    assert_eq!(fs::read(&canon).unwrap(), fs::read(&canon2).unwrap());
}

#[test]
fn curation_files_round_trip() {
    let dir = TempDir::new().unwrap();
    let records: Vec<CaptionRecord> = (1..=4u64)
        .map(|image_id| CaptionRecord {
            image_id,
            base_caption: format!("scene {image_id}"),
            variants: (0..5).map(|v| format!("scene {image_id} take {v}")).collect(),
            n: 5,
        })
        .collect();
    let captions_path = dir.path().join("captions.jsonl");
    io::write_atomic(&captions_path, io::to_jsonl(&records).as_bytes()).unwrap();
    assert_eq!(load_captions(&captions_path).unwrap(), records);

    let losses: Vec<EdgenessRecord> = records
        .iter()
        .flat_map(|r| {
            (0..r.n).map(move |v| EdgenessRecord {
                image_id: r.image_id,
                variant_index: v,
                loss: (r.image_id * 10 + v as u64) as f64 / 7.0,
            })
        })
        .collect();
    let losses_path = dir.path().join("losses.jsonl");
    save_edgeness(&losses_path, &losses).unwrap();
    assert_eq!(load_loss_entries(&losses_path).unwrap(), losses);

    let scored = score_variants(&records, &LossSource::External(&losses)).unwrap();
    assert_eq!(scored, losses);
    let built = build_pairs(&records, &scored).unwrap();
    assert_eq!(built.pairs.len(), 4);
    assert_eq!(built.skipped, 0);
    let pairs_path = dir.path().join("pairs.jsonl");
    save_pairs(&pairs_path, &built.pairs).unwrap();
    let reloaded: Vec<edgekit_core::curation::PreferencePair> =
        io::read_jsonl(&pairs_path).unwrap();
    assert_eq!(reloaded, built.pairs);
}

#[test]
fn logprob_file_round_trip() {
    let dir = TempDir::new().unwrap();
    let quads: Vec<LogProbQuad> = (0..6)
        .map(|i| LogProbQuad {
            pair_id: format!("p{i}"),
            lp_theta_w: -1.0 - f64::from(i) * 0.25,
            lp_theta_l: -3.0 - f64::from(i) * 0.5,
            lp_ref_w: -1.5,
            lp_ref_l: -2.5,
        })
        .collect();
    let path = dir.path().join("logprobs.jsonl");
    io::write_atomic(&path, io::to_jsonl(&quads).as_bytes()).unwrap();
    assert_eq!(load_logprobs(&path).unwrap(), quads);
}

#[test]
fn evaluation_numbers_survive_the_file_layer() {
    let dir = TempDir::new().unwrap();
    let cfg = SceneGenConfig {
        n_images: 30,
        seed: 3,
        ..SceneGenConfig::default()
    };
    let d = generate_scenes(&cfg).unwrap();
    // distinct scores throughout (tight sigma, no clamping) so reordering
    // by the file layer cannot shuffle score ties
    let profile_b = DetectorProfile {
        score_model: edgekit_core::simharness::ScoreModel {
            mean: 0.5,
            sigma: 0.05,
        },
        ..DetectorProfile::default()
    };
    let profile_a = DetectorProfile {
        default_detect_prob: 0.3,
        box_jitter_sigma: 3.0,
        fp_rate: 0.1,
        score_model: edgekit_core::simharness::ScoreModel {
            mean: 0.5,
            sigma: 0.05,
        },
        detect_prob: Vec::new(),
        class_confusion: BTreeMap::new(),
    };
    let preds_a = simulate_detector(&d, &profile_a, 22).unwrap();
    let preds_b = simulate_detector(&d, &profile_b, 21).unwrap();

    let thresholds = coco_iou_thresholds();
    let eval_direct = evaluate(&preds_b, &d, &thresholds, ApMode::Interp101);
    let bs_direct = map_wo_tp(
        &preds_a,
        &preds_b,
        &d,
        "baseline",
        &BlindspotConfig::default(),
        &thresholds,
        ApMode::AllPoints,
    )
    .unwrap();

    let d_path = dir.path().join("annotations.json");
    let a_path = dir.path().join("preds_a.json");
    let b_path = dir.path().join("preds_b.json");
    save_dataset(&d, &d_path).unwrap();
    save_predictions(&preds_a, &a_path).unwrap();
    save_predictions(&preds_b, &b_path).unwrap();
    let d2 = load_dataset(&d_path).unwrap();
    let a2 = load_predictions(&a_path).unwrap();
    let b2 = load_predictions(&b_path).unwrap();

    let eval_file = evaluate(&b2, &d2, &thresholds, ApMode::Interp101);
    assert_eq!(eval_direct, eval_file);
    assert!(eval_direct.map_by_tag.keys().all(|t| TimeOfDay::ALL.contains(t)));

    let bs_file = map_wo_tp(
        &a2,
        &b2,
        &d2,
        "baseline",
        &BlindspotConfig::default(),
        &thresholds,
        ApMode::AllPoints,
    )
    .unwrap();
    assert_eq!(bs_direct, bs_file);
    assert!(bs_direct.weak_count > 0, "weak baseline must miss something");
}
