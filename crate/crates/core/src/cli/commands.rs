use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::RunConfig;
use super::{persist, CommandError, CommandResult};
use crate::dataset::{scan_directory, select_pair, BatchSource, DatasetIndex, FolderSource, NUM_STAGES};
use crate::ensemble::{stage_name, Ensemble, Manifest, Scheme};
use crate::error::{Error, Result};
use crate::metrics::{confusion_matrix, MetricsReport};
use crate::preprocess::{preprocess_fundus, resize_bilinear, RasterImage};
use crate::training::fit;

/// Name of the preprocessing sidecar listing rejected images.
pub const SKIPPED_FILE: &str = "skipped.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Skipped {
    pub path: PathBuf,
    pub reason: String,
}

/// Full pipeline for one file: decode, preprocess, square resize.
pub fn prepare_image(path: &Path, cfg: &RunConfig) -> Result<RasterImage> {
    let img = RasterImage::open(path)?;
    let pre = preprocess_fundus(&img, &cfg.preprocess)?;
    Ok(resize_bilinear(&pre, cfg.output_size, cfg.output_size))
}

enum Outcome {
    Written,
    Skipped(Skipped),
}

pub fn cmd_preprocess(cfg: &RunConfig) -> CommandResult {
    let input = cfg.require(&cfg.input, "input")?;
    let index = scan_directory(input)?;
    for c in 0..NUM_STAGES {
        let dir = cfg.out.join(c.to_string());
        std::fs::create_dir_all(&dir).map_err(|e| persist(Error::io(&dir, e)))?;
    }
    let outcomes = index
        .entries
        .par_iter()
        .map(|entry| -> CommandResult<Outcome> {
            let img = match prepare_image(&entry.path, cfg) {
                Ok(img) => img,
                Err(e) if e.is_preprocess_rejection() => {
                    return Ok(Outcome::Skipped(Skipped {
                        path: entry.path.clone(),
                        reason: e.to_string(),
                    }))
                }
                Err(e) => return Err(e.into()),
            };
            let stem = entry.path.file_stem().unwrap_or_default();
            let dest = cfg
                .out
                .join(entry.label.to_string())
                .join(stem)
                .with_extension("png");
            img.save_png(&dest).map_err(persist)?;
            Ok(Outcome::Written)
        })
        .collect::<CommandResult<Vec<_>>>()?;

    let mut written = [0usize; NUM_STAGES];
    let mut skipped = Vec::new();
    for (entry, outcome) in index.entries.iter().zip(outcomes) {
        match outcome {
            Outcome::Written => written[entry.label] += 1,
            Outcome::Skipped(s) => {
                eprintln!("warning: skipping {}: {}", s.path.display(), s.reason);
                skipped.push(s);
            }
        }
    }
    let sidecar = cfg.out.join(SKIPPED_FILE);
    let text = serde_json::to_string_pretty(&skipped).expect("skip list serializes");
    std::fs::write(&sidecar, text + "\n").map_err(|e| persist(Error::io(&sidecar, e)))?;
    for (c, n) in written.iter().enumerate() {
        println!("class {c}: {n} images");
    }
    println!("skipped: {}", skipped.len());
    Ok(())
}

fn model_file(scheme: Scheme, (a, b): (usize, usize)) -> String {
    format!("{}_{a}v{b}.drsm", scheme.as_str())
}

pub fn cmd_train(cfg: &RunConfig) -> CommandResult {
    let input = cfg.require(&cfg.input, "input")?;
    let index = scan_directory(input)?;
    let val_index = match &cfg.val_input {
        Some(p) => scan_directory(p)?,
        None => index.clone(),
    };
    std::fs::create_dir_all(&cfg.out).map_err(|e| persist(Error::io(&cfg.out, e)))?;
    let hw = cfg.architecture.input_hw();
    let source = |idx: &DatasetIndex, a, b| -> Result<FolderSource> {
        Ok(FolderSource {
            index: select_pair(idx, a, b)?,
            target_hw: hw,
            rescale: cfg.rescale,
        })
    };

    let mut files = Vec::new();
    for (i, &pair) in cfg.mode.pairs().iter().enumerate() {
        let train = source(&index, pair.0, pair.1)?;
        let val = source(&val_index, pair.0, pair.1)?;
        if train.is_empty() || val.is_empty() {
            return Err(Error::EmptyDataset.into());
        }
        let mut model = cfg.architecture.build()?;
        let seed = cfg.seed.wrapping_add(i as u64);
        model.init_weights(seed);
        let tcfg = crate::training::TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let name = model_file(cfg.mode, pair);
        let path = cfg.out.join(&name);
        let history = fit(&mut model, &train, &val, &tcfg, Some(&path)).map_err(|e| match e {
            Error::Io { path: ref p, .. } if *p == path => persist(e),
            e => e.into(),
        })?;
        let log = cfg.out.join(format!("{name}.history.jsonl"));
        let file = File::create(&log).map_err(|e| persist(Error::io(&log, e)))?;
        history
            .write_json_lines(BufWriter::new(file))
            .map_err(|e| persist(Error::io(&log, e)))?;
        eprintln!(
            "{name}: {} epochs, best val acc {:.4} at epoch {}, stop {:?}",
            history.records.len(),
            history.best_val_acc,
            history.best_epoch,
            history.stop_reason
        );
        files.push(PathBuf::from(name));
    }
    let manifest = Manifest::new(cfg.mode, files, cfg.rescale)?;
    manifest.save(&cfg.out.join(MANIFEST_FILE)).map_err(persist)?;
    println!("wrote {} models and {}", manifest.models.len(), MANIFEST_FILE);
    Ok(())
}

/// Report over five-stage truth and predictions; cascades also get the
/// healthy-versus-diseased rates.
pub fn eval_report(scheme: Scheme, truth: &[usize], pred: &[usize]) -> Result<MetricsReport> {
    let cm = confusion_matrix(truth, pred, NUM_STAGES)?;
    MetricsReport::new(scheme.as_str(), cm, scheme == Scheme::Cascade)
}

const EVAL_BATCH: usize = 16;

pub fn cmd_eval(cfg: &RunConfig) -> CommandResult {
    let manifest = cfg.require(&cfg.manifest, "manifest")?;
    let input = cfg.require(&cfg.input, "input")?;
    let ensemble = Ensemble::load(manifest)?;
    let index = scan_directory(input)?;
    if index.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    let source = FolderSource {
        index,
        target_hw: ensemble.input_hw(),
        rescale: ensemble.rescale,
    };
    let all: Vec<usize> = (0..source.len()).collect();
    let mut truth = Vec::with_capacity(all.len());
    let mut pred = Vec::with_capacity(all.len());
    for chunk in all.chunks(EVAL_BATCH) {
        let (images, labels) = source.fetch(chunk)?;
        pred.extend(ensemble.decide_batch(&images)?.into_iter().map(|d| d.label));
        truth.extend(labels);
    }
    let report = eval_report(ensemble.scheme, &truth, &pred)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| persist(Error::io(&cfg.out, e)))?;
    for (name, text) in [(REPORT_JSON, report.to_json() + "\n"), (REPORT_TEXT, report.to_text())] {
        let path = cfg.out.join(name);
        std::fs::write(&path, text).map_err(|e| persist(Error::io(&path, e)))?;
    }
    print!("{}", report.to_text());
    Ok(())
}

pub fn cmd_classify(cfg: &RunConfig) -> CommandResult {
    let manifest = cfg.require(&cfg.manifest, "manifest")?;
    let image = cfg.require(&cfg.image, "image")?;
    let ensemble = Ensemble::load(manifest)?;
    let img = prepare_image(image, cfg).map_err(|e| {
        if e.is_preprocess_rejection() {
            CommandError::domain(e)
        } else {
            e.into()
        }
    })?;
    let decision = ensemble.decide_image(&img)?;
    println!("{} ({})", stage_name(decision.label), decision.label);
    for (s, score) in decision.scores.iter().enumerate() {
        println!("  {:<14} {:.6}", stage_name(s), score);
    }
    Ok(())
}
