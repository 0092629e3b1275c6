//! Anchor (or proposal) to ground-truth assignment and the detection losses.
//!
//! The multi-task loss is
//!
//! ```text
//! L = 1/N_cls * Σ_i L_cls(p_i)  +  λ/N_reg * Σ_{i positive} Σ_coord L_reg(t_i - t_i*)
//! ```
//!
//! with `L_cls(p) = -ln p` on the probability of the true class and `L_reg`
//! one of two smooth-L1 variants (see [`SmoothL1`]). By default `N_cls` is
//! the number of ground-truth boxes and `N_reg` the number of anchors.

use serde::{Deserialize, Serialize};

use crate::dataset::ClassId;
use crate::error::{Error, Result};
use crate::geometry::{encode, iou_unchecked, AnchorSet, BBox, BoxDelta};

/// Probabilities are clamped to this floor before taking the logarithm.
pub const PROB_EPSILON: f64 = 1e-12;

pub const DEFAULT_LAMBDA: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignmentConfig {
    pub pos_iou_threshold: f64,
    pub neg_iou_threshold: f64,
    /// Label anchors that leave the image as ignore and keep them out of the
    /// per-gt argmax rule.
    pub ignore_cross_boundary: bool,
}

impl Default for AssignmentConfig {
    fn default() -> Self {
        AssignmentConfig {
            pos_iou_threshold: 0.8,
            neg_iou_threshold: 0.3,
            ignore_cross_boundary: false,
        }
    }
}

impl AssignmentConfig {
    pub fn validate(&self) -> Result<()> {
        let (n, p) = (self.neg_iou_threshold, self.pos_iou_threshold);
        if !(0.0 <= n && n <= p && p <= 1.0) {
            return Err(Error::Config(format!(
                "need 0 <= neg_iou_threshold ({n}) <= pos_iou_threshold ({p}) <= 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Positive,
    Negative,
    Ignore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorLabel {
    pub label: Label,
    pub matched_gt_index: Option<usize>,
    pub target_delta: Option<BoxDelta>,
}

impl AnchorLabel {
    pub const NEGATIVE: AnchorLabel = AnchorLabel {
        label: Label::Negative,
        matched_gt_index: None,
        target_delta: None,
    };

    pub const IGNORE: AnchorLabel = AnchorLabel {
        label: Label::Ignore,
        matched_gt_index: None,
        target_delta: None,
    };

    pub fn positive(gt: usize, delta: BoxDelta) -> Self {
        AnchorLabel {
            label: Label::Positive,
            matched_gt_index: Some(gt),
            target_delta: Some(delta),
        }
    }

    pub fn is_positive(&self) -> bool {
        self.label == Label::Positive
    }
}

/// A ground-truth box with its class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bbox: BBox,
    pub class: ClassId,
}

/// Labels an anchor grid, honouring its cross-boundary flags.
pub fn assign(
    anchors: &AnchorSet,
    gts: &[GroundTruth],
    cfg: &AssignmentConfig,
) -> Result<Vec<AnchorLabel>> {
    assign_boxes(&anchors.anchors, Some(&anchors.cross_boundary), gts, cfg)
}

/// Labels arbitrary reference boxes (anchors or proposals).
///
/// A box is positive when its best IoU with any gt exceeds the positive
/// threshold, or when it attains the (non-zero) maximum IoU some gt has over
/// all boxes; ties for that maximum are all positive. Remaining boxes whose
/// best IoU is below the negative threshold are negative, the rest ignored.
/// Positives regress towards their own best gt (lowest index on ties).
pub fn assign_boxes(
    boxes: &[BBox],
    outside: Option<&[bool]>,
    gts: &[GroundTruth],
    cfg: &AssignmentConfig,
) -> Result<Vec<AnchorLabel>> {
    cfg.validate()?;
    if boxes.is_empty() {
        return Err(Error::Contract("cannot assign an empty anchor set".into()));
    }
    if let Some(flags) = outside {
        if flags.len() != boxes.len() {
            return Err(Error::Contract(format!(
                "{} cross-boundary flags for {} anchors",
                flags.len(),
                boxes.len()
            )));
        }
    }
    for b in boxes {
        b.validate()?;
    }
    for g in gts {
        g.bbox.validate()?;
    }
    let skipped = |i: usize| cfg.ignore_cross_boundary && outside.is_some_and(|f| f[i]);

    // Best gt per anchor, best anchor IoU per gt.
    let mut best = vec![(0.0f64, None::<usize>); boxes.len()];
    let mut gt_max = vec![0.0f64; gts.len()];
    let overlaps: Vec<Vec<f64>> = boxes
        .iter()
        .map(|a| gts.iter().map(|g| iou_unchecked(a, &g.bbox)).collect())
        .collect();
    for (i, row) in overlaps.iter().enumerate() {
        if skipped(i) {
            continue;
        }
        for (j, &v) in row.iter().enumerate() {
            if best[i].1.is_none() || v > best[i].0 {
                best[i] = (v, Some(j));
            }
            gt_max[j] = gt_max[j].max(v);
        }
    }

    let mut labels = Vec::with_capacity(boxes.len());
    for (i, anchor) in boxes.iter().enumerate() {
        if skipped(i) {
            labels.push(AnchorLabel::IGNORE);
            continue;
        }
        let (max_iou, arg) = best[i];
        let is_argmax = overlaps[i]
            .iter()
            .zip(&gt_max)
            .any(|(&v, &m)| m > 0.0 && v == m);
        let label = match arg {
            Some(j) if max_iou > cfg.pos_iou_threshold || is_argmax => {
                AnchorLabel::positive(j, encode(&gts[j].bbox, anchor)?)
            }
            _ if max_iou < cfg.neg_iou_threshold => AnchorLabel::NEGATIVE,
            _ => AnchorLabel::IGNORE,
        };
        labels.push(label);
    }
    Ok(labels)
}

/// Classification loss on the probability of the true class: `-ln p`.
pub fn cls_loss(p_correct: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_correct) {
        return Err(Error::Domain(format!(
            "probability {p_correct} outside [0, 1]"
        )));
    }
    Ok(-p_correct.max(PROB_EPSILON).ln())
}

/// Derivative of [`cls_loss`] with respect to `p`, for `p` above the clamp.
pub fn cls_loss_grad(p_correct: f64) -> f64 {
    -1.0 / p_correct.max(PROB_EPSILON)
}

/// Which regression loss to apply to each delta coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SmoothL1 {
    /// `|d|` for `|d| <= 1`, `d²` outside.
    #[default]
    Literal,
    /// `0.5 d²` for `|d| < 1`, `|d| - 0.5` outside.
    Standard,
}

pub fn smooth_l1(d: f64) -> f64 {
    smooth_l1_with(d, SmoothL1::Literal)
}

pub fn smooth_l1_with(d: f64, variant: SmoothL1) -> f64 {
    let a = d.abs();
    match variant {
        SmoothL1::Literal if a <= 1.0 => a,
        SmoothL1::Literal => d * d,
        SmoothL1::Standard if a < 1.0 => 0.5 * d * d,
        SmoothL1::Standard => a - 0.5,
    }
}

/// Derivative of the smooth-L1 variant; undefined (and returned as the
/// one-sided value from inside) at the kinks.
pub fn smooth_l1_grad(d: f64, variant: SmoothL1) -> f64 {
    let a = d.abs();
    match variant {
        SmoothL1::Literal if d == 0.0 => 0.0,
        SmoothL1::Literal if a <= 1.0 => d.signum(),
        SmoothL1::Literal => 2.0 * d,
        SmoothL1::Standard if a < 1.0 => d,
        SmoothL1::Standard => d.signum(),
    }
}

/// Network output for one anchor: object probability and predicted delta.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Probability that the anchor covers an object. Positive anchors score
    /// `p`, negative anchors `1 - p`.
    pub objectness: f64,
    pub delta: BoxDelta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub n_cls: usize,
    pub n_reg: usize,
    pub smooth_l1: SmoothL1,
}

impl LossConfig {
    /// Normalizers as the loss defines them: `N_cls` = number of
    /// ground-truth boxes, `N_reg` = number of anchors.
    pub fn for_counts(n_gts: usize, n_anchors: usize) -> Self {
        LossConfig {
            lambda: DEFAULT_LAMBDA,
            n_cls: n_gts,
            n_reg: n_anchors,
            smooth_l1: SmoothL1::Literal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls_term: f64,
    pub reg_term: f64,
    pub total: f64,
    pub n_cls: usize,
    pub n_reg: usize,
    pub lambda: f64,
}

pub fn rpn_loss(
    labels: &[AnchorLabel],
    predictions: &[Prediction],
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let targets: Vec<Option<BoxDelta>> = labels.iter().map(|l| l.target_delta).collect();
    for (i, l) in labels.iter().enumerate() {
        if l.is_positive() != (l.matched_gt_index.is_some() && l.target_delta.is_some()) {
            return Err(Error::Contract(format!(
                "label {i} is inconsistent with its match"
            )));
        }
    }
    reduce_loss(labels, &targets, predictions, cfg)
}

/// Second-stage loss: identical to [`rpn_loss`] except that regression
/// targets are re-encoded against `proposals` from each label's matched gt.
pub fn fast_rcnn_loss(
    proposals: &[BBox],
    gts: &[GroundTruth],
    labels: &[AnchorLabel],
    predictions: &[Prediction],
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    if proposals.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} proposals for {} labels",
            proposals.len(),
            labels.len()
        )));
    }
    let mut targets = Vec::with_capacity(labels.len());
    for (i, (l, p)) in labels.iter().zip(proposals).enumerate() {
        let t = match (l.label, l.matched_gt_index) {
            (Label::Positive, Some(j)) => {
                let gt = gts.get(j).ok_or_else(|| {
                    Error::Contract(format!("label {i} refers to missing gt {j}"))
                })?;
                Some(encode(&gt.bbox, p)?)
            }
            (Label::Positive, None) => {
                return Err(Error::Contract(format!(
                    "positive label {i} has no matched gt"
                )));
            }
            _ => None,
        };
        targets.push(t);
    }
    reduce_loss(labels, &targets, predictions, cfg)
}

fn reduce_loss(
    labels: &[AnchorLabel],
    targets: &[Option<BoxDelta>],
    predictions: &[Prediction],
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    if labels.len() != predictions.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if cfg.n_cls == 0 || cfg.n_reg == 0 {
        return Err(Error::Contract("N_cls and N_reg must be positive".into()));
    }
    if !(cfg.lambda >= 0.0 && cfg.lambda.is_finite()) {
        return Err(Error::Config(format!(
            "lambda {} must be non-negative",
            cfg.lambda
        )));
    }

    // Plain left-to-right sums keep results reproducible.
    let mut cls_sum = 0.0;
    let mut reg_sum = 0.0;
    for ((label, target), pred) in labels.iter().zip(targets).zip(predictions) {
        let p_correct = match label.label {
            Label::Positive => pred.objectness,
            Label::Negative => 1.0 - pred.objectness,
            Label::Ignore => continue,
        };
        if !(0.0..=1.0).contains(&pred.objectness) {
            return Err(Error::Domain(format!(
                "objectness {} outside [0, 1]",
                pred.objectness
            )));
        }
        cls_sum += cls_loss(p_correct)?;
        if let (Label::Positive, Some(t)) = (label.label, target) {
            for (u, v) in pred.delta.as_array().into_iter().zip(t.as_array()) {
                reg_sum += smooth_l1_with(u - v, cfg.smooth_l1);
            }
        }
    }
    let cls_term = cls_sum / cfg.n_cls as f64;
    let reg_term = cfg.lambda * reg_sum / cfg.n_reg as f64;
    Ok(LossBreakdown {
        cls_term,
        reg_term,
        total: cls_term + reg_term,
        n_cls: cfg.n_cls,
        n_reg: cfg.n_reg,
        lambda: cfg.lambda,
    })
}
