//! Dataset scoring: average IoU of correct boxes, per-class AP / mAP and F1.
//!
//! A prediction is correct when it is matched to an unclaimed ground-truth
//! box of the same class with IoU strictly above the correctness threshold.
//! Matching is greedy in descending confidence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{load_dataset, Annotation, ClassId};
use crate::error::{Error, Result};
use crate::geometry::iou_unchecked;
use crate::postprocess::Detection;
use crate::targets::GroundTruth;

pub const DEFAULT_CORRECT_IOU: f64 = 0.8;
/// The usual PASCAL-style correctness threshold, available as a preset.
pub const PRESET_IOU_050: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Interpolation {
    /// Area under the monotone precision envelope at every recall step.
    #[default]
    AllPoints,
    /// Mean of the envelope sampled at recall 0, 0.1, ..., 1.
    ElevenPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ApMode {
    /// One ranking over the whole dataset.
    #[default]
    Dataset,
    /// AP per image, averaged over images containing the class.
    PerImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub interpolation: Interpolation,
    pub ap_mode: ApMode,
    /// Also report F1 with the product denominator `2a / (r * g)`.
    pub literal_f1_diagnostics: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: DEFAULT_CORRECT_IOU,
            interpolation: Interpolation::AllPoints,
            ap_mode: ApMode::Dataset,
            literal_f1_diagnostics: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredMatch {
    pub matched_gt_index: Option<usize>,
    pub iou: Option<f64>,
}

impl PredMatch {
    pub fn matched(&self) -> bool {
        self.matched_gt_index.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub preds: Vec<PredMatch>,
    pub gt_covered: Vec<bool>,
}

impl MatchResult {
    pub fn n_matched(&self) -> usize {
        self.preds.iter().filter(|p| p.matched()).count()
    }
}

/// Prediction indices in descending confidence, earlier index first on ties.
pub fn confidence_order(preds: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .confidence
            .total_cmp(&preds[a].confidence)
            .then(a.cmp(&b))
    });
    order
}

/// Same-class matching of one image's predictions, in confidence order.
///
/// Each prediction takes the highest-IoU uncovered gt above the threshold.
/// When none is left it may still be matched by moving earlier predictions
/// to other gts they also clear the threshold with (an augmenting path), so
/// every confidence prefix gets as many matches as any one-to-one matching
/// could give it. Earlier predictions never lose their match.
pub fn match_detections(
    preds: &[Detection],
    gts: &[GroundTruth],
    iou_threshold: f64,
) -> MatchResult {
    // Candidate gts per prediction, best IoU first.
    let candidates: Vec<Vec<(usize, f64)>> = preds
        .iter()
        .map(|p| {
            let mut c: Vec<(usize, f64)> = gts
                .iter()
                .enumerate()
                .filter(|(_, g)| g.class == p.class)
                .map(|(j, g)| (j, iou_unchecked(&p.bbox, &g.bbox)))
                .filter(|&(_, v)| v > iou_threshold)
                .collect();
            c.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            c
        })
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; gts.len()];
    for i in confidence_order(preds) {
        if let Some(&(j, _)) = candidates[i].iter().find(|(j, _)| owner[*j].is_none()) {
            owner[j] = Some(i);
        } else {
            let mut visited = vec![false; gts.len()];
            augment(i, &candidates, &mut owner, &mut visited);
        }
    }

    let mut result = MatchResult {
        preds: vec![
            PredMatch {
                matched_gt_index: None,
                iou: None,
            };
            preds.len()
        ],
        gt_covered: owner.iter().map(Option::is_some).collect(),
    };
    for (j, o) in owner.iter().enumerate() {
        if let Some(i) = *o {
            let v = candidates[i].iter().find(|c| c.0 == j).map(|c| c.1);
            result.preds[i] = PredMatch {
                matched_gt_index: Some(j),
                iou: v,
            };
        }
    }
    result
}

fn augment(
    i: usize,
    candidates: &[Vec<(usize, f64)>],
    owner: &mut [Option<usize>],
    visited: &mut [bool],
) -> bool {
    for &(j, _) in &candidates[i] {
        if visited[j] {
            continue;
        }
        visited[j] = true;
        if owner[j].is_none_or(|k| augment(k, candidates, owner, visited)) {
            owner[j] = Some(i);
            return true;
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageIou {
    pub value: f64,
    /// No prediction was matched; `value` is 0 by definition.
    pub empty: bool,
}

pub fn average_iou(m: &MatchResult) -> AverageIou {
    mean_iou(m.preds.iter().filter_map(|p| p.iou))
}

fn mean_iou(values: impl Iterator<Item = f64>) -> AverageIou {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        AverageIou {
            value: 0.0,
            empty: true,
        }
    } else {
        AverageIou {
            value: sum / n as f64,
            empty: false,
        }
    }
}

/// `2 a / (r + g)`; zero when both counts are zero.
pub fn f1(n_accurate: usize, n_report: usize, n_gt: usize) -> Result<f64> {
    check_counts(n_accurate, n_report, n_gt)?;
    let denom = n_report + n_gt;
    Ok(if denom == 0 {
        0.0
    } else {
        2.0 * n_accurate as f64 / denom as f64
    })
}

/// Product-denominator variant `2 a / (r * g)`, kept for diagnostics only:
/// it is not a mean of precision and recall and is not 1 for perfect output.
pub fn f1_literal(n_accurate: usize, n_report: usize, n_gt: usize) -> Result<f64> {
    check_counts(n_accurate, n_report, n_gt)?;
    let denom = n_report * n_gt;
    Ok(if denom == 0 {
        0.0
    } else {
        2.0 * n_accurate as f64 / denom as f64
    })
}

fn check_counts(a: usize, r: usize, g: usize) -> Result<()> {
    if a > r || a > g {
        return Err(Error::Contract(format!(
            "{a} accurate boxes exceed {r} reported or {g} ground-truth boxes"
        )));
    }
    Ok(())
}

/// Predictions and ground truth of one image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageEval {
    pub image_id: String,
    pub preds: Vec<Detection>,
    pub gts: Vec<GroundTruth>,
}

impl ImageEval {
    pub fn from_annotations(pred: &Annotation, gt: &Annotation) -> Self {
        ImageEval {
            image_id: gt.image_id.clone(),
            preds: detections(pred),
            gts: ground_truths(gt),
        }
    }
}

/// Boxes of an annotation as detections; a missing confidence counts as 1.
pub fn detections(a: &Annotation) -> Vec<Detection> {
    a.boxes
        .iter()
        .map(|b| Detection {
            bbox: b.bbox,
            class: b.class,
            confidence: b.confidence.unwrap_or(1.0),
        })
        .collect()
}

pub fn ground_truths(a: &Annotation) -> Vec<GroundTruth> {
    a.boxes
        .iter()
        .map(|b| GroundTruth {
            bbox: b.bbox,
            class: b.class,
        })
        .collect()
}

/// Area under the precision/recall curve of `ranked` correctness flags
/// against `n_gt` positives.
pub fn ap_from_ranking(ranked: &[bool], n_gt: usize, interpolation: Interpolation) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(ranked.len());
    let mut precision = Vec::with_capacity(ranked.len());
    let mut tp = 0usize;
    for (k, &hit) in ranked.iter().enumerate() {
        tp += usize::from(hit);
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    // Precision envelope: best precision at this or any higher recall.
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    match interpolation {
        Interpolation::AllPoints => {
            let mut ap = 0.0;
            let mut prev = 0.0;
            for (r, p) in recall.iter().zip(&precision) {
                if *r > prev {
                    ap += (r - prev) * p;
                    prev = *r;
                }
            }
            ap
        }
        Interpolation::ElevenPoint => {
            let mut sum = 0.0;
            for t in 0..=10 {
                let level = f64::from(t) / 10.0;
                let p = recall
                    .iter()
                    .zip(&precision)
                    .find(|(r, _)| **r >= level - 1e-12)
                    .map_or(0.0, |(_, p)| *p);
                sum += p;
            }
            sum / 11.0
        }
    }
}

/// Average precision of `class`, or `None` when the class has no
/// ground-truth boxes in `images`.
pub fn average_precision(images: &[ImageEval], class: ClassId, cfg: &EvalConfig) -> Option<f64> {
    let matches: Vec<MatchResult> = images
        .iter()
        .map(|im| match_detections(&im.preds, &im.gts, cfg.iou_threshold))
        .collect();
    ap_for_class(images, &matches, class, cfg)
}

fn ap_for_class(
    images: &[ImageEval],
    matches: &[MatchResult],
    class: ClassId,
    cfg: &EvalConfig,
) -> Option<f64> {
    let gt_count = |im: &ImageEval| im.gts.iter().filter(|g| g.class == class).count();
    let n_gt: usize = images.iter().map(gt_count).sum();
    if n_gt == 0 {
        return None;
    }
    let ranked = |im: usize| -> Vec<(f64, usize, usize, bool)> {
        images[im]
            .preds
            .iter()
            .enumerate()
            .filter(|(_, p)| p.class == class)
            .map(|(i, p)| (p.confidence, im, i, matches[im].preds[i].matched()))
            .collect()
    };
    let sort = |v: &mut Vec<(f64, usize, usize, bool)>| {
        v.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    };
    match cfg.ap_mode {
        ApMode::Dataset => {
            let mut all: Vec<_> = (0..images.len()).flat_map(ranked).collect();
            sort(&mut all);
            let flags: Vec<bool> = all.iter().map(|e| e.3).collect();
            Some(ap_from_ranking(&flags, n_gt, cfg.interpolation))
        }
        ApMode::PerImage => {
            let mut sum = 0.0;
            let mut n = 0usize;
            for (im, image) in images.iter().enumerate() {
                let g = gt_count(image);
                if g == 0 {
                    continue;
                }
                let mut r = ranked(im);
                sort(&mut r);
                let flags: Vec<bool> = r.iter().map(|e| e.3).collect();
                sum += ap_from_ranking(&flags, g, cfg.interpolation);
                n += 1;
            }
            Some(sum / n as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: ClassId,
    pub avg_iou: AverageIou,
    /// `None` when the class has no ground truth; such classes stay out of mAP.
    pub ap: Option<f64>,
    pub f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1_literal: Option<f64>,
    pub n_report: usize,
    pub n_gt: usize,
    pub n_accurate: usize,
}

impl ClassScore {
    /// A class that neither occurs in the ground truth nor is predicted has
    /// no defined scores; the table shows it as 100.00%.
    pub fn is_applicable(&self) -> bool {
        self.n_gt > 0 || self.n_report > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalScore {
    /// Pooled over matched boxes of every class.
    pub avg_iou: AverageIou,
    pub map: Option<f64>,
    /// F1 of the counts pooled over classes.
    pub f1: f64,
    /// Mean of the per-class F1 over applicable classes.
    pub mean_f1: f64,
    pub n_report: usize,
    pub n_gt: usize,
    pub n_accurate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub classes: Vec<ClassScore>,
    pub total: TotalScore,
    pub n_images: usize,
    pub config: EvalConfig,
    pub warnings: Vec<String>,
}

/// Scores already-paired images. Images are ranked in `image_id` order so
/// the result does not depend on the order they were gathered in.
pub fn score_images(images: &[ImageEval], cfg: &EvalConfig) -> ScoreReport {
    let mut sorted: Vec<&ImageEval> = images.iter().collect();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let images: Vec<ImageEval> = sorted.into_iter().cloned().collect();
    let matches: Vec<MatchResult> = images
        .iter()
        .map(|im| match_detections(&im.preds, &im.gts, cfg.iou_threshold))
        .collect();

    let mut classes = Vec::new();
    for class in ClassId::ALL {
        let mut n_report = 0;
        let mut n_gt = 0;
        let mut ious = Vec::new();
        for (im, m) in images.iter().zip(&matches) {
            n_gt += im.gts.iter().filter(|g| g.class == class).count();
            for (p, pm) in im.preds.iter().zip(&m.preds) {
                if p.class == class {
                    n_report += 1;
                    ious.extend(pm.iou);
                }
            }
        }
        let n_accurate = ious.len();
        classes.push(ClassScore {
            class,
            avg_iou: mean_iou(ious.into_iter()),
            ap: ap_for_class(&images, &matches, class, cfg),
            f1: f1(n_accurate, n_report, n_gt).expect("matches never exceed either count"),
            f1_literal: cfg.literal_f1_diagnostics.then(|| {
                f1_literal(n_accurate, n_report, n_gt).expect("matches never exceed either count")
            }),
            n_report,
            n_gt,
            n_accurate,
        });
    }

    let aps: Vec<f64> = classes.iter().filter_map(|c| c.ap).collect();
    let applicable: Vec<f64> = classes
        .iter()
        .filter(|c| c.is_applicable())
        .map(|c| c.f1)
        .collect();
    let (n_report, n_gt, n_accurate) = classes.iter().fold((0, 0, 0), |(r, g, a), c| {
        (r + c.n_report, g + c.n_gt, a + c.n_accurate)
    });
    let total = TotalScore {
        avg_iou: mean_iou(
            matches
                .iter()
                .flat_map(|m| m.preds.iter().filter_map(|p| p.iou)),
        ),
        map: (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64),
        f1: f1(n_accurate, n_report, n_gt).expect("pooled counts are consistent"),
        mean_f1: if applicable.is_empty() {
            0.0
        } else {
            applicable.iter().sum::<f64>() / applicable.len() as f64
        },
        n_report,
        n_gt,
        n_accurate,
    };
    ScoreReport {
        classes,
        total,
        n_images: images.len(),
        config: *cfg,
        warnings: Vec::new(),
    }
}

/// Pairs prediction and ground-truth annotations by image id and scores the
/// pairs. Ids present on only one side are skipped with a warning.
pub fn evaluate_dataset(preds: &[Annotation], gts: &[Annotation], cfg: &EvalConfig) -> ScoreReport {
    let pred_by_id: BTreeMap<&str, &Annotation> =
        preds.iter().map(|a| (a.image_id.as_str(), a)).collect();
    let gt_by_id: BTreeMap<&str, &Annotation> =
        gts.iter().map(|a| (a.image_id.as_str(), a)).collect();
    let mut warnings = Vec::new();
    let mut images = Vec::new();
    for (id, gt) in &gt_by_id {
        match pred_by_id.get(id) {
            Some(p) => images.push(ImageEval::from_annotations(p, gt)),
            None => warnings.push(format!(
                "image {id}: ground truth has no prediction file, skipped"
            )),
        }
    }
    for id in pred_by_id.keys().filter(|id| !gt_by_id.contains_key(*id)) {
        warnings.push(format!(
            "image {id}: prediction has no ground truth, skipped"
        ));
    }
    let mut report = score_images(&images, cfg);
    report.warnings = warnings;
    report
}

/// Loads both index files and evaluates them. Entries that fail to load are
/// reported as warnings.
pub fn evaluate_index_files(
    pred_index: &Path,
    gt_index: &Path,
    cfg: &EvalConfig,
) -> Result<ScoreReport> {
    let preds = load_dataset(pred_index)?;
    let gts = load_dataset(gt_index)?;
    let mut load_warnings = Vec::new();
    for (path, err) in preds.errors.iter().chain(&gts.errors) {
        load_warnings.push(format!("{}: {err}", path.display()));
    }
    let pa: Vec<Annotation> = preds.entries.into_iter().map(|e| e.annotation).collect();
    let ga: Vec<Annotation> = gts.entries.into_iter().map(|e| e.annotation).collect();
    let mut report = evaluate_dataset(&pa, &ga, cfg);
    load_warnings.append(&mut report.warnings);
    report.warnings = load_warnings;
    Ok(report)
}

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

const NA: &str = "n/a";

impl ScoreReport {
    /// Score rows (IoU, mAP, F-1) by class columns plus a Total column.
    pub fn table(&self) -> String {
        let header = ["", "Chinese", "English", "Number", "Total"];
        let mut rows: Vec<[String; 5]> = Vec::new();
        let mut row = |name: &str, cell: &dyn Fn(&ClassScore) -> String, total: String| {
            let mut r: [String; 5] = Default::default();
            r[0] = name.to_string();
            for (k, c) in self.classes.iter().enumerate() {
                r[k + 1] = if c.is_applicable() { cell(c) } else { pct(1.0) };
            }
            r[4] = total;
            rows.push(r);
        };
        // Nothing to find and nothing reported: vacuously perfect.
        let any = self.total.n_gt > 0 || self.total.n_report > 0;
        let or_full = |s: String| if any { s } else { pct(1.0) };
        row(
            "IoU",
            &|c| pct(c.avg_iou.value),
            or_full(pct(self.total.avg_iou.value)),
        );
        row(
            "mAP",
            &|c| c.ap.map_or(NA.to_string(), pct),
            self.total
                .map
                .map_or_else(|| if any { NA.to_string() } else { pct(1.0) }, pct),
        );
        row("F-1", &|c| pct(c.f1), or_full(pct(self.total.f1)));

        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<6}{:>10}{:>10}{:>10}{:>10}",
            header[0], header[1], header[2], header[3], header[4]
        );
        for r in &rows {
            let _ = writeln!(
                out,
                "{:<6}{:>10}{:>10}{:>10}{:>10}",
                r[0], r[1], r[2], r[3], r[4]
            );
        }
        let empty: Vec<&str> = self
            .classes
            .iter()
            .filter(|c| c.is_applicable() && c.avg_iou.empty)
            .map(|c| c.class.name())
            .collect();
        if !empty.is_empty() {
            let _ = writeln!(out, "IoU has no matched boxes for: {}", empty.join(", "));
        }
        out
    }
}
