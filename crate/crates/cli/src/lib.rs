//! Subcommands of the `cardet` executable.
//!
//! Each command returns an [`Outcome`] holding the lines it wants printed and
//! the per-file errors it accumulated; the process exits non-zero iff that
//! error list is non-empty.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use cardet::dataset::{
    self, load_dataset, write_annotation, write_index, Annotation, DatasetEntry,
};
use cardet::fakegen::{self, Manifest};
use cardet::imaging::{draw_rect, enumerate_augmentations, ImageBuffer};
use cardet::metrics::{self, ScoreReport};
use cardet::postprocess::{filter_by_confidence, nms, Detection};
use cardet::weights::{self, ConversionReport};
use rayon::prelude::*;

pub use config::RunConfig;

pub const STROKE: u32 = 2;
pub const RUN_CONFIG_FILE: &str = "run_config.txt";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TABLE: &str = "report.txt";

#[derive(Debug, Default)]
pub struct Outcome {
    pub stdout: Vec<String>,
    pub errors: Vec<String>,
}

impl Outcome {
    pub fn success(&self) -> bool {
        self.errors.is_empty()
    }

    fn say(&mut self, line: impl Into<String>) {
        self.stdout.push(line.into());
    }
}

/// Where a command's inputs come from: an index file listing images, or a
/// single image/annotation given directly.
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Index(PathBuf),
    Single(PathBuf),
}

impl Input {
    /// Treats `index.txt`-style files (not annotations) as indices.
    pub fn detect(path: &Path) -> Input {
        let is_index = fs::read_to_string(path)
            .map(|t| !t.trim_start().starts_with("# image"))
            .unwrap_or(false)
            && path.extension().is_some_and(|e| e == "txt");
        if is_index {
            Input::Index(path.to_path_buf())
        } else {
            Input::Single(path.to_path_buf())
        }
    }

    fn load(&self) -> Result<(Vec<DatasetEntry>, Vec<String>)> {
        match self {
            Input::Index(p) => {
                let ds = load_dataset(p)?;
                let errors = ds
                    .errors
                    .iter()
                    .map(|(p, e)| format!("{}: {e}", p.display()))
                    .collect();
                Ok((ds.entries, errors))
            }
            Input::Single(p) => match dataset::read_annotation(&dataset::annotation_path(p)) {
                Ok(parsed) => Ok((
                    vec![DatasetEntry {
                        image_path: p.clone(),
                        annotation: parsed.annotation,
                        warnings: parsed.warnings,
                    }],
                    Vec::new(),
                )),
                Err(e) => Ok((Vec::new(), vec![format!("{}: {e}", p.display())])),
            },
        }
    }
}

fn prepare_out(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let path = cfg.out.join(RUN_CONFIG_FILE);
    fs::write(&path, cfg.render()).with_context(|| format!("writing {}", path.display()))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned())
}

/// Writes every photometric variant of every input image with a copy of its
/// annotation, plus an `index.txt` of the outputs.
pub fn cmd_augment(cfg: &RunConfig, input: &Input) -> Result<Outcome> {
    cfg.validate()?;
    prepare_out(cfg)?;
    let (entries, mut errors) = input.load()?;
    let per_image = cfg.grid.len();

    let results: Vec<std::result::Result<Vec<PathBuf>, String>> = entries
        .par_iter()
        .map(|e| augment_one(cfg, e).map_err(|err| format!("{}: {err:#}", e.image_path.display())))
        .collect();
    let mut outputs = Vec::new();
    for r in results {
        match r {
            Ok(mut paths) => outputs.append(&mut paths),
            Err(e) => errors.push(e),
        }
    }
    write_index(&cfg.out.join(fakegen::INDEX_FILE), &outputs)?;

    let mut out = Outcome {
        errors,
        ..Outcome::default()
    };
    out.say(format!("inputs: {}", entries.len()));
    out.say(format!("variants per input: {per_image}"));
    out.say(format!("outputs: {}", outputs.len()));
    Ok(out)
}

fn augment_one(cfg: &RunConfig, entry: &DatasetEntry) -> Result<Vec<PathBuf>> {
    let img = ImageBuffer::load(&entry.image_path)?;
    let name = stem(&entry.image_path);
    let mut written = Vec::with_capacity(cfg.grid.len());
    for v in enumerate_augmentations(&img, &entry.annotation, &cfg.grid)? {
        let file = cfg.out.join(v.id.file_name(&name));
        v.image.save_png(&file)?;
        let annotation = Annotation {
            image_id: format!("{name}_{}", v.id),
            ..v.annotation
        };
        write_annotation(&file.with_extension("txt"), &annotation)?;
        written.push(file);
    }
    Ok(written)
}

/// Renders `count` synthetic cards into the output directory.
pub fn cmd_generate(cfg: &RunConfig, count: usize) -> Result<(Outcome, Manifest)> {
    cfg.validate()?;
    prepare_out(cfg)?;
    let manifest = fakegen::generate_batch(&cfg.card_spec(), count, &cfg.out)?;
    let mut out = Outcome::default();
    out.say(format!("cards: {}", manifest.count));
    for (class, n) in &manifest.class_counts {
        out.say(format!("{class} boxes: {n}"));
    }
    out.say(format!("dropped items: {}", manifest.dropped));
    out.say(format!(
        "manifest: {}",
        cfg.out.join(fakegen::MANIFEST_FILE).display()
    ));
    Ok((out, manifest))
}

/// Scores a prediction index against a ground-truth index, printing the
/// score table and writing it plus a JSON report to the output directory.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    pred_index: &Path,
    gt_index: &Path,
) -> Result<(Outcome, ScoreReport)> {
    cfg.validate()?;
    prepare_out(cfg)?;
    let preds = load_dataset(pred_index)?;
    let gts = load_dataset(gt_index)?;
    let mut errors: Vec<String> = preds
        .errors
        .iter()
        .chain(&gts.errors)
        .map(|(p, e)| format!("{}: {e}", p.display()))
        .collect();
    let pa: Vec<Annotation> = preds.entries.into_iter().map(|e| e.annotation).collect();
    let ga: Vec<Annotation> = gts.entries.into_iter().map(|e| e.annotation).collect();
    let report = metrics::evaluate_dataset(&pa, &ga, &cfg.eval());
    if report.n_images == 0 && !report.warnings.is_empty() {
        errors.push("no prediction file pairs with a ground-truth file".into());
    }

    let table = report.table();
    let json = serde_json::json!({
        "report": &report,
        "run_config": cfg.render(),
    });
    let json_path = cfg.out.join(REPORT_JSON);
    fs::write(&json_path, serde_json::to_string_pretty(&json)?)
        .with_context(|| format!("writing {}", json_path.display()))?;
    let table_path = cfg.out.join(REPORT_TABLE);
    fs::write(&table_path, &table).with_context(|| format!("writing {}", table_path.display()))?;

    let mut out = Outcome {
        errors,
        ..Outcome::default()
    };
    out.stdout.extend(table.lines().map(str::to_string));
    for w in &report.warnings {
        out.say(format!("warning: {w}"));
    }
    Ok((out, report))
}

/// Confidence filter followed by NMS over each prediction file; results go
/// to the output directory under the same file names.
pub fn cmd_nms(cfg: &RunConfig, input: &Input) -> Result<Outcome> {
    cfg.validate()?;
    prepare_out(cfg)?;
    let (entries, errors) = input.load()?;
    let mut out = Outcome {
        errors,
        ..Outcome::default()
    };
    let mut written = Vec::new();
    for e in &entries {
        let a = &e.annotation;
        if a.boxes.iter().any(|b| b.confidence.is_none()) {
            out.errors.push(format!(
                "{}: not a prediction file (no confidence column)",
                e.image_path.display()
            ));
            continue;
        }
        let dets: Vec<Detection> = metrics::detections(a);
        let kept = nms(
            &filter_by_confidence(&dets, cfg.confidence),
            cfg.nms_iou,
            cfg.class_aware_nms,
        );
        let result = Annotation {
            boxes: kept.iter().map(|d| (*d).into()).collect(),
            ..a.clone()
        };
        let path = cfg.out.join(format!("{}.txt", stem(&e.image_path)));
        write_annotation(&path, &result)?;
        out.say(format!(
            "{}: {} -> {} detections",
            a.image_id,
            a.boxes.len(),
            kept.len()
        ));
        written.push(path);
    }
    write_index(&cfg.out.join(fakegen::INDEX_FILE), &written)?;
    Ok(out)
}

/// Converts a tensor file to half precision.
pub fn cmd_quantize(
    cfg: &RunConfig,
    input: &Path,
    output: Option<&Path>,
) -> Result<(Outcome, ConversionReport)> {
    let output = match output {
        Some(p) => p.to_path_buf(),
        None => {
            prepare_out(cfg)?;
            cfg.out.join(format!("{}.f16.cktf", stem(input)))
        }
    };
    let report = weights::quantize_file(input, &output)?;
    let mut out = Outcome::default();
    for t in &report.tensors {
        out.say(format!(
            "{}: {} elements, max abs error {:e}, max rel error {:e}, saturated {}{}",
            t.name,
            t.elements,
            t.max_abs_error,
            t.max_rel_error,
            t.saturated,
            if t.skipped { " (already f16)" } else { "" }
        ));
    }
    for w in &report.warnings {
        out.say(format!("warning: {w}"));
    }
    out.say(format!(
        "payload bytes: {} -> {}",
        report.bytes_before, report.bytes_after
    ));
    out.say(format!("written: {}", output.display()));
    Ok((out, report))
}

/// Draws class-coloured rectangles over each image.
pub fn cmd_visualize(cfg: &RunConfig, input: &Input) -> Result<Outcome> {
    prepare_out(cfg)?;
    let (entries, errors) = input.load()?;
    let results: Vec<std::result::Result<PathBuf, String>> = entries
        .par_iter()
        .map(|e| {
            let path = cfg.out.join(format!("{}_vis.png", stem(&e.image_path)));
            visualize_one(e, &path)
                .map(|_| path)
                .map_err(|err| format!("{}: {err:#}", e.image_path.display()))
        })
        .collect();
    let mut out = Outcome {
        errors,
        ..Outcome::default()
    };
    for r in results {
        match r {
            Ok(p) => out.say(format!("written: {}", p.display())),
            Err(e) => out.errors.push(e),
        }
    }
    Ok(out)
}

pub fn render_boxes(img: &mut ImageBuffer, annotation: &Annotation) {
    for b in &annotation.boxes {
        draw_rect(img, &b.bbox, b.class.color(), STROKE);
    }
}

fn visualize_one(entry: &DatasetEntry, path: &Path) -> Result<()> {
    let mut img = ImageBuffer::load(&entry.image_path)?;
    render_boxes(&mut img, &entry.annotation);
    img.save_png(path)?;
    Ok(())
}

/// Builds a global rayon pool; zero keeps rayon's default.
pub fn init_threads(threads: usize) -> Result<()> {
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| anyhow!("thread pool: {e}"))?;
    }
    Ok(())
}
