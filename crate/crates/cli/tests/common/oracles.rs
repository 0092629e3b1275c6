//! Brute-force references used by the acceptance suite. They share no code
//! with the implementations they check beyond the plain data types.

#![allow(dead_code)]

use cardet::dataset::ClassId;
use cardet::postprocess::{Detection, FeatureMap};

/// Integer box `(x, y, w, h)`.
pub type IBox = (i64, i64, i64, i64);

/// IoU by counting covered unit cells.
pub fn raster_iou(a: IBox, b: IBox) -> f64 {
    let covers =
        |r: IBox, px: i64, py: i64| px >= r.0 && px < r.0 + r.2 && py >= r.1 && py < r.1 + r.3;
    let (x0, y0) = (a.0.min(b.0), a.1.min(b.1));
    let (x1, y1) = ((a.0 + a.2).max(b.0 + b.2), (a.1 + a.3).max(b.1 + b.3));
    let (mut inter, mut union) = (0i64, 0i64);
    for py in y0..y1 {
        for px in x0..x1 {
            let (ia, ib) = (covers(a, px, py), covers(b, px, py));
            inter += i64::from(ia && ib);
            union += i64::from(ia || ib);
        }
    }
    inter as f64 / union as f64
}

/// Exact overlap as the rational `inter / union` of integer areas.
pub fn iou_ratio(a: IBox, b: IBox) -> (i64, i64) {
    let iw = ((a.0 + a.2).min(b.0 + b.2) - a.0.max(b.0)).max(0);
    let ih = ((a.1 + a.3).min(b.1 + b.3) - a.1.max(b.1)).max(0);
    let inter = iw * ih;
    (inter, a.2 * a.3 + b.2 * b.3 - inter)
}

/// `p/q > r/s` for non-negative rationals with positive denominators.
pub fn ratio_gt(p: (i64, i64), r: (i64, i64)) -> bool {
    p.0 * r.1 > r.0 * p.1
}

pub fn ratio_eq(p: (i64, i64), r: (i64, i64)) -> bool {
    p.0 * r.1 == r.0 * p.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefLabel {
    Positive(usize),
    Negative,
    Ignore,
}

/// Anchor labelling straight from the rule, on the full IoU table with exact
/// rational comparisons. Thresholds are given as rationals.
pub fn reference_assign(
    anchors: &[IBox],
    gts: &[IBox],
    pos: (i64, i64),
    neg: (i64, i64),
) -> Vec<RefLabel> {
    let table: Vec<Vec<(i64, i64)>> = anchors
        .iter()
        .map(|a| gts.iter().map(|g| iou_ratio(*a, *g)).collect())
        .collect();
    // Column maxima.
    let mut col_max = vec![(0i64, 1i64); gts.len()];
    for row in &table {
        for (j, v) in row.iter().enumerate() {
            if ratio_gt(*v, col_max[j]) {
                col_max[j] = *v;
            }
        }
    }
    table
        .iter()
        .map(|row| {
            if row.is_empty() {
                return if ratio_gt(neg, (0, 1)) {
                    RefLabel::Negative
                } else {
                    RefLabel::Ignore
                };
            }
            let mut best = 0;
            for j in 1..row.len() {
                if ratio_gt(row[j], row[best]) {
                    best = j;
                }
            }
            let attains = (0..row.len()).any(|j| col_max[j].0 > 0 && ratio_eq(row[j], col_max[j]));
            if ratio_gt(row[best], pos) || attains {
                RefLabel::Positive(best)
            } else if ratio_gt(neg, row[best]) {
                RefLabel::Negative
            } else {
                RefLabel::Ignore
            }
        })
        .collect()
}

fn float_iou(a: &Detection, b: &Detection) -> f64 {
    let (ax2, ay2) = (a.bbox.x + a.bbox.w, a.bbox.y + a.bbox.h);
    let (bx2, by2) = (b.bbox.x + b.bbox.w, b.bbox.y + b.bbox.h);
    let iw = ax2.min(bx2) - a.bbox.x.max(b.bbox.x);
    let ih = ay2.min(by2) - a.bbox.y.max(b.bbox.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    inter / ((ax2 - a.bbox.x) * (ay2 - a.bbox.y) + (bx2 - b.bbox.x) * (by2 - b.bbox.y) - inter)
}

/// Quadratic NMS: repeatedly take the best remaining candidate and strike
/// every candidate that overlaps it too much.
pub fn reference_nms(dets: &[Detection], thr: f64, class_aware: bool) -> Vec<Detection> {
    let mut alive: Vec<usize> = (0..dets.len()).collect();
    let mut kept = Vec::new();
    while !alive.is_empty() {
        let mut top = alive[0];
        for &i in &alive {
            let (c, t) = (dets[i].confidence, dets[top].confidence);
            if c > t || (c == t && i < top) {
                top = i;
            }
        }
        kept.push(dets[top]);
        alive.retain(|&i| {
            i != top
                && !((!class_aware || dets[i].class == dets[top].class)
                    && float_iou(&dets[i], &dets[top]) > thr)
        });
    }
    kept
}

/// RoI max pooling computed cell by cell from the definition.
pub fn reference_roi_pool(fm: &FeatureMap, roi: (f64, f64, f64, f64), out: usize) -> Vec<f32> {
    let (x, y, w, h) = roi;
    let r0 = y.floor().max(0.0) as usize;
    let c0 = x.floor().max(0.0) as usize;
    let r1 = ((y + h).ceil().min(fm.height as f64) as usize).max(r0 + 1);
    let c1 = ((x + w).ceil().min(fm.width as f64) as usize).max(c0 + 1);
    let (mh, mw) = ((r1 - r0) as f64, (c1 - c0) as f64);
    let mut result = Vec::new();
    for i in 0..out {
        for j in 0..out {
            let ra = (i as f64 * mh / out as f64).floor() as usize;
            let rb = ((i + 1) as f64 * mh / out as f64).ceil() as usize;
            let ca = (j as f64 * mw / out as f64).floor() as usize;
            let cb = ((j + 1) as f64 * mw / out as f64).ceil() as usize;
            for k in 0..fm.channels {
                let mut m = f32::NEG_INFINITY;
                for r in r0 + ra..r0 + rb {
                    for c in c0 + ca..c0 + cb {
                        m = m.max(fm.data[(r * fm.width + c) * fm.channels + k]);
                    }
                }
                result.push(m);
            }
        }
    }
    result
}

/// Ground truth of the matching oracle.
#[derive(Debug, Clone, Copy)]
pub struct Gt {
    pub bbox: IBox,
    pub class: ClassId,
}

/// Prediction of the matching oracle.
#[derive(Debug, Clone, Copy)]
pub struct Pred {
    pub bbox: IBox,
    pub class: ClassId,
    pub confidence: f64,
}

/// Largest number of predictions among `preds` that can be matched
/// one-to-one to same-class gts with IoU above `thr` (given as a rational),
/// by trying every injective assignment.
pub fn max_matching(preds: &[Pred], gts: &[Gt], thr: (i64, i64)) -> usize {
    fn go(k: usize, preds: &[Pred], gts: &[Gt], used: &mut Vec<bool>, thr: (i64, i64)) -> usize {
        if k == preds.len() {
            return 0;
        }
        let mut best = go(k + 1, preds, gts, used, thr);
        for j in 0..gts.len() {
            if used[j] || gts[j].class != preds[k].class {
                continue;
            }
            if ratio_gt(iou_ratio(preds[k].bbox, gts[j].bbox), thr) {
                used[j] = true;
                best = best.max(1 + go(k + 1, preds, gts, used, thr));
                used[j] = false;
            }
        }
        best
    }
    go(0, preds, gts, &mut vec![false; gts.len()], thr)
}

/// AP of one class from the best achievable true-positive count at every
/// rank prefix, all-points interpolated.
pub fn exhaustive_ap(preds: &[Pred], gts: &[Gt], class: ClassId, thr: (i64, i64)) -> Option<f64> {
    let gts: Vec<Gt> = gts.iter().copied().filter(|g| g.class == class).collect();
    if gts.is_empty() {
        return None;
    }
    let mut ranked: Vec<(usize, Pred)> = preds
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, p)| p.class == class)
        .collect();
    ranked.sort_by(|a, b| {
        b.1.confidence
            .partial_cmp(&a.1.confidence)
            .unwrap()
            .then(a.0.cmp(&b.0))
    });
    let ranked: Vec<Pred> = ranked.into_iter().map(|(_, p)| p).collect();
    let mut points = Vec::new();
    for k in 1..=ranked.len() {
        let tp = max_matching(&ranked[..k], &gts, thr);
        points.push((tp as f64 / gts.len() as f64, tp as f64 / k as f64));
    }
    // Area under the upper envelope, step by step.
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for k in 0..points.len() {
        let r = points[k].0;
        if r > prev_recall {
            let p = points[k..].iter().map(|q| q.1).fold(0.0, f64::max);
            ap += (r - prev_recall) * p;
            prev_recall = r;
        }
    }
    Some(ap)
}

/// Nearest binary16 value to `x` by scanning every finite pattern, ties to
/// the even pattern; the result is the decoded value.
pub fn nearest_half(x: f32) -> f32 {
    let mut best = (f64::INFINITY, 0u16);
    for bits in 0u16..=0xFFFF {
        let v = half::f16::from_bits(bits);
        if !v.is_finite() {
            continue;
        }
        let d = (f64::from(v.to_f32()) - f64::from(x)).abs();
        if d < best.0 || (d == best.0 && bits & 1 == 0 && best.1 & 1 == 1) {
            best = (d, bits);
        }
    }
    half::f16::from_bits(best.1).to_f32()
}
