//! Subcommand implementations. Every command checks its input paths up
//! front, sends diagnostics to standard error, and writes results either to
//! standard output or, with --output, atomically to a file.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use edgekit_core::blindspot::{BlindspotConfig, map_wo_tp};
use edgekit_core::curation::{
    build_pairs, edgeness_stats, load_captions, load_loss_entries, score_variants, LossSource,
    PreferencePair,
};
use edgekit_core::datamodel::{
    Dataset, Prediction, TimeOfDay, load_dataset, load_predictions, load_split, save_dataset,
    save_predictions, split_by_camera,
};
use edgekit_core::dpo::{dpo_loss, load_logprobs, train_toy, DpoConfig, TokenizedPair, TrainTrace};
use edgekit_core::metrics::{coco_iou_thresholds, evaluate, ApMode, EvalReport};
use edgekit_core::simharness::{
    generate_scenes, run_loop_demo, simulate_detector, DetectorProfile, SceneGenConfig,
    RNG_ALGORITHM,
};
use edgekit_core::{io, Error, Result};
use serde::Serialize;

use crate::args::*;
use crate::table;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Eval(args) => eval(args),
        Command::Blindspot(args) => blindspot(args),
        Command::Edgeness(args) => edgeness(args),
        Command::Prefpairs(args) => prefpairs(args),
        Command::Dpo(args) => dpo(args),
        Command::Split(args) => split(args),
        Command::Simulate(args) => simulate(args),
        Command::LoopDemo(args) => loop_demo(args),
        Command::Report(args) => report(args),
    }
}

fn require_files(paths: &[&Path]) -> Result<()> {
    for path in paths {
        if !path.is_file() {
            return Err(Error::Domain(format!(
                "input file not found: {}",
                path.display()
            )));
        }
    }
    Ok(())
}

/// Predictions naming images the dataset does not contain are almost always
/// a mixed-up file pair; refuse them before any arithmetic happens.
fn check_refs(preds: &[Prediction], d: &Dataset, path: &Path) -> Result<()> {
    let ids = d.scene_ids();
    for p in preds {
        if !ids.contains(&p.image_id) {
            return Err(Error::Integrity(format!(
                "{} references image {} absent from the dataset",
                path.display(),
                p.image_id
            )));
        }
    }
    Ok(())
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(path) => io::write_atomic(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pretty<T: Serialize>(doc: &T) -> String {
    let mut text = serde_json::to_string_pretty(doc).expect("report docs serialize");
    text.push('\n');
    text
}

fn file_stem(path: &Path) -> &str {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("baseline")
}

fn load_json_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = io::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn load_scene_config(path: Option<&Path>) -> Result<SceneGenConfig> {
    match path {
        Some(p) => {
            require_files(&[p])?;
            load_json_config(p)
        }
        None => Ok(SceneGenConfig::default()),
    }
}

fn load_profile(path: Option<&Path>) -> Result<DetectorProfile> {
    match path {
        Some(p) => {
            require_files(&[p])?;
            load_json_config(p)
        }
        None => Ok(DetectorProfile::default()),
    }
}

#[derive(Serialize)]
struct ClassEntry<'a> {
    class: u64,
    name: &'a str,
    annotations: u64,
    ap: f64,
}

#[derive(Serialize)]
struct EvalDoc<'a> {
    dataset: &'a str,
    scenes: u64,
    predictions: u64,
    mode: String,
    iou_thresholds: &'a [f64],
    map: f64,
    classes: Vec<ClassEntry<'a>>,
    map_by_tag: &'a BTreeMap<TimeOfDay, f64>,
}

fn class_entries<'a>(d: &'a Dataset, report: &EvalReport) -> Vec<ClassEntry<'a>> {
    report
        .ap_by_class
        .iter()
        .map(|(id, ap)| ClassEntry {
            class: *id,
            name: d.category(*id).map_or("?", |c| c.name.as_str()),
            annotations: report.counts_by_class.get(id).copied().unwrap_or(0),
            ap: *ap,
        })
        .collect()
}

fn eval(args: EvalArgs) -> Result<()> {
    require_files(&[&args.annotations, &args.predictions])?;
    let d = load_dataset(&args.annotations)?;
    let preds = load_predictions(&args.predictions)?;
    check_refs(&preds, &d, &args.predictions)?;
    let mode: ApMode = args.mode.into();
    let report = evaluate(&preds, &d, &coco_iou_thresholds(), mode);
    let doc = EvalDoc {
        dataset: &d.name,
        scenes: d.scenes.len() as u64,
        predictions: preds.len() as u64,
        mode: mode.to_string(),
        iou_thresholds: &report.iou_thresholds,
        map: report.map_value,
        classes: class_entries(&d, &report),
        map_by_tag: &report.map_by_tag,
    };
    emit(args.output.as_deref(), &pretty(&doc))?;
    eprintln!(
        "evaluated {} predictions on {} scenes ({mode})",
        preds.len(),
        d.scenes.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct BlindspotDoc {
    map_wo_tp: Option<f64>,
    weak_count: u64,
    non_weak_count: u64,
    kept_predictions: u64,
    dropped_predictions: u64,
}

fn blindspot(args: BlindspotArgs) -> Result<()> {
    require_files(&[&args.annotations, &args.preds_a, &args.preds_b])?;
    let d = load_dataset(&args.annotations)?;
    let preds_a = load_predictions(&args.preds_a)?;
    let preds_b = load_predictions(&args.preds_b)?;
    check_refs(&preds_a, &d, &args.preds_a)?;
    check_refs(&preds_b, &d, &args.preds_b)?;
    let cfg = BlindspotConfig {
        tp_iou: args.tp_iou,
        keep_iou: args.keep_iou,
        score_threshold: args.score_threshold,
    };
    let report = map_wo_tp(
        &preds_a,
        &preds_b,
        &d,
        file_stem(&args.preds_a),
        &cfg,
        &coco_iou_thresholds(),
        args.mode.into(),
    )?;
    let doc = BlindspotDoc {
        map_wo_tp: report.eval.map_value.is_finite().then_some(report.eval.map_value),
        weak_count: report.weak_count,
        non_weak_count: report.non_weak_count,
        kept_predictions: report.kept_predictions,
        dropped_predictions: report.dropped_predictions,
    };
    emit(args.output.as_deref(), &pretty(&doc))?;
    if report.weak_count == 0 {
        eprintln!("baseline detected every annotation; mAP w/o TP is undefined");
    } else {
        eprintln!(
            "scored {} kept predictions on {} weak annotations",
            report.kept_predictions, report.weak_count
        );
    }
    Ok(())
}

fn edgeness(args: EdgenessArgs) -> Result<()> {
    require_files(&[&args.captions, &args.losses])?;
    let records = load_captions(&args.captions)?;
    let losses = load_loss_entries(&args.losses)?;
    let scored = score_variants(&records, &LossSource::External(&losses))?;
    emit(args.output.as_deref(), &io::to_jsonl(&scored))?;
    eprintln!("scored {} variants across {} images", scored.len(), records.len());
    Ok(())
}

fn prefpairs(args: PrefpairsArgs) -> Result<()> {
    require_files(&[&args.captions, &args.scores])?;
    let records = load_captions(&args.captions)?;
    let scores = load_loss_entries(&args.scores)?;
    let build = build_pairs(&records, &scores)?;
    emit(args.output.as_deref(), &io::to_jsonl(&build.pairs))?;
    eprintln!(
        "built {} pairs, skipped {} images without contrast",
        build.pairs.len(),
        build.skipped
    );
    Ok(())
}

#[derive(Serialize)]
struct DpoLossDoc {
    beta: f64,
    pairs: u64,
    mean_loss: f64,
    margins: Vec<f64>,
}

#[derive(Serialize)]
struct DpoTrainDoc {
    beta: f64,
    learning_rate: f64,
    epochs: u64,
    seed: u64,
    trace: TrainTrace,
}

/// Whitespace tokenization with a corpus-wide vocabulary: distinct words in
/// lexicographic order get ids 0, 1, 2, ...
fn tokenize_pairs(pairs: &[PreferencePair]) -> Vec<TokenizedPair> {
    let mut vocab: BTreeSet<&str> = BTreeSet::new();
    for p in pairs {
        vocab.extend(p.chosen.split_whitespace());
        vocab.extend(p.rejected.split_whitespace());
    }
    let index: BTreeMap<&str, u64> = vocab
        .iter()
        .enumerate()
        .map(|(i, w)| (*w, i as u64))
        .collect();
    pairs
        .iter()
        .map(|p| TokenizedPair {
            chosen: p.chosen.split_whitespace().map(|w| index[w]).collect(),
            rejected: p.rejected.split_whitespace().map(|w| index[w]).collect(),
        })
        .collect()
}

fn dpo(args: DpoArgs) -> Result<()> {
    match args.mode {
        DpoModeArg::Loss => {
            let path = args.logprobs.as_deref().expect("clap enforces --logprobs");
            require_files(&[path])?;
            let quads = load_logprobs(path)?;
            let (mean_loss, margins) = dpo_loss(&quads, args.beta)?;
            let doc = DpoLossDoc {
                beta: args.beta,
                pairs: quads.len() as u64,
                mean_loss,
                margins,
            };
            emit(args.output.as_deref(), &pretty(&doc))?;
            eprintln!("mean loss over {} pairs: {mean_loss:.6}", quads.len());
        }
        DpoModeArg::TrainToy => {
            let path = args.pairs.as_deref().expect("clap enforces --pairs");
            require_files(&[path])?;
            let pairs: Vec<PreferencePair> = io::read_jsonl(path)?;
            if pairs.is_empty() {
                return Err(Error::Domain(format!(
                    "no preference pairs in {}",
                    path.display()
                )));
            }
            let tokenized = tokenize_pairs(&pairs);
            let config = DpoConfig {
                beta: args.beta,
                learning_rate: args.learning_rate,
                epochs: args.epochs,
                seed: args.seed,
            };
            let trace = train_toy(&tokenized, &config)?;
            eprintln!(
                "trained {} epochs on {} pairs: loss {:.6} -> {:.6}",
                config.epochs,
                tokenized.len(),
                trace.losses.first().copied().unwrap_or(f64::NAN),
                trace.losses.last().copied().unwrap_or(f64::NAN)
            );
            let doc = DpoTrainDoc {
                beta: config.beta,
                learning_rate: config.learning_rate,
                epochs: config.epochs,
                seed: config.seed,
                trace,
            };
            emit(args.output.as_deref(), &pretty(&doc))?;
        }
    }
    Ok(())
}

fn create_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Write {
        path: dir.to_path_buf(),
        source,
    })
}

fn split(args: SplitArgs) -> Result<()> {
    require_files(&[&args.annotations, &args.split])?;
    let d = load_dataset(&args.annotations)?;
    let spec = load_split(&args.split)?;
    for name in spec.splits.keys() {
        if name.contains(['/', '\\']) || name == ".." {
            return Err(Error::Domain(format!(
                "split name {name:?} cannot be used as a file name"
            )));
        }
    }
    let parts = split_by_camera(&d, &spec)?;
    create_out_dir(&args.out_dir)?;
    for (name, part) in &parts {
        save_dataset(part, &args.out_dir.join(format!("{name}.json")))?;
        eprintln!(
            "{name}: {} scenes, {} annotations",
            part.scenes.len(),
            part.annotations.len()
        );
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = load_scene_config(args.scene_config.as_deref())?;
    if let Some(n) = args.n_images {
        cfg.n_images = n;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let profile = load_profile(args.profile.as_deref())?;
    let d = generate_scenes(&cfg)?;
    let preds = simulate_detector(&d, &profile, args.detector_seed)?;
    create_out_dir(&args.out_dir)?;
    save_dataset(&d, &args.out_dir.join("annotations.json"))?;
    save_predictions(&preds, &args.out_dir.join("predictions.json"))?;
    eprintln!(
        "rng {RNG_ALGORITHM}, scene seed {}, detector seed {}",
        cfg.seed, args.detector_seed
    );
    eprintln!(
        "wrote {} scenes with {} annotations and {} predictions to {}",
        d.scenes.len(),
        d.annotations.len(),
        preds.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn loop_demo(args: LoopDemoArgs) -> Result<()> {
    let cfg = load_scene_config(args.scene_config.as_deref())?;
    let profile = load_profile(args.profile.as_deref())?;
    let summary = run_loop_demo(&cfg, &profile, &args.selection, args.k, args.seed)?;
    eprintln!(
        "selected {} of {} variants; mean loss {:.4} vs pool {:.4}",
        summary.k, summary.pool_size, summary.mean_selected_loss, summary.mean_pool_loss
    );
    emit(args.output.as_deref(), &pretty(&summary))?;
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let need = |opt: &Option<std::path::PathBuf>, flag: &str, layout: &str| {
        opt.clone().ok_or_else(|| {
            Error::Domain(format!("the {layout} layout requires {flag}"))
        })
    };
    let text = match args.layout {
        LayoutArg::Overall => {
            let annotations = need(&args.annotations, "--annotations", "overall")?;
            let predictions = need(&args.predictions, "--predictions", "overall")?;
            let baseline = need(&args.baseline, "--baseline", "overall")?;
            require_files(&[&annotations, &predictions, &baseline])?;
            let d = load_dataset(&annotations)?;
            let preds = load_predictions(&predictions)?;
            let preds_a = load_predictions(&baseline)?;
            check_refs(&preds, &d, &predictions)?;
            check_refs(&preds_a, &d, &baseline)?;
            let mode: ApMode = args.mode.into();
            let thresholds = coco_iou_thresholds();
            let eval = evaluate(&preds, &d, &thresholds, mode);
            let cfg = BlindspotConfig {
                tp_iou: args.tp_iou,
                keep_iou: args.keep_iou,
                score_threshold: args.score_threshold,
            };
            let bs = map_wo_tp(
                &preds_a,
                &preds,
                &d,
                file_stem(&baseline),
                &cfg,
                &thresholds,
                mode,
            )?;
            table::overall(
                &d.name,
                d.scenes.len() as u64,
                eval.map_value,
                bs.eval.map_value,
                args.format,
            )
        }
        LayoutArg::PerClass | LayoutArg::PerTag => {
            let layout_name = match args.layout {
                LayoutArg::PerClass => "per_class",
                _ => "per_tag",
            };
            let annotations = need(&args.annotations, "--annotations", layout_name)?;
            let predictions = need(&args.predictions, "--predictions", layout_name)?;
            require_files(&[&annotations, &predictions])?;
            let d = load_dataset(&annotations)?;
            let preds = load_predictions(&predictions)?;
            check_refs(&preds, &d, &predictions)?;
            let eval = evaluate(&preds, &d, &coco_iou_thresholds(), args.mode.into());
            match args.layout {
                LayoutArg::PerClass => table::per_class(&d, &eval, args.format)?,
                _ => table::per_tag(&d.name, &eval, args.format),
            }
        }
        LayoutArg::EdgenessStats => {
            let scores = need(&args.scores, "--scores", "edgeness_stats")?;
            require_files(&[&scores])?;
            let entries = load_loss_entries(&scores)?;
            let stats = edgeness_stats(&entries)?;
            table::edgeness(&stats, args.format)
        }
    };
    emit(args.output.as_deref(), &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_assigns_sorted_ids_and_reuses_them() {
        let pairs = vec![PreferencePair {
            prompt: "p".into(),
            chosen: "b a b".into(),
            rejected: "c a".into(),
            score_chosen: 1.0,
            score_rejected: 0.0,
        }];
        let toks = tokenize_pairs(&pairs);
        assert_eq!(toks[0].chosen, vec![1, 0, 1]);
        assert_eq!(toks[0].rejected, vec![2, 0]);
    }

    #[test]
    fn missing_input_is_a_domain_error_naming_the_path() {
        let err = require_files(&[Path::new("/nonexistent/x.json")]).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.json"));
    }
}
