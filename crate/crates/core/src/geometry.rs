//! Axis-aligned boxes, IoU, the anchor grid and the box-delta transforms.
//!
//! Boxes are stored corner form: top-left `(x, y)` plus `(w, h)`. Deltas
//! follow the usual two-stage parameterization
//!
//! ```text
//! tx = (x - xa) / wa      ty = (y - ya) / ha
//! tw = ln(w / wa)         th = ln(h / ha)
//! ```
//!
//! where `a` is the reference box (an anchor for the RPN stage, a proposal
//! for the second stage).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest side length [`decode`] will emit before saturating.
pub const DEFAULT_MAX_BOX_SIDE: f64 = 1.0e7;

/// Axis-aligned rectangle in corner form. Width and height are positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = BBox { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    /// Builds a box from corner coordinates `(x1, y1)`-`(x2, y2)`.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        Self::new(x1, y1, x2 - x1, y2 - y1)
    }

    pub fn validate(&self) -> Result<()> {
        let finite =
            self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite();
        if !finite || self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "({}, {}, {}, {}) needs finite coordinates and positive width/height",
                self.x, self.y, self.w, self.h
            )));
        }
        Ok(())
    }

    pub fn x2(&self) -> f64 {
        self.x + self.w
    }

    pub fn y2(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    /// Area of the overlap with `other`, zero when the boxes are disjoint or
    /// only touch.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.x2().min(other.x2()) - self.x.max(other.x);
        let ih = self.y2().min(other.y2()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// True when the box lies inside `[0, width] x [0, height]`.
    pub fn is_within(&self, width: f64, height: f64) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.x2() <= width && self.y2() <= height
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }
}

/// Regression target of a box relative to a reference box.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoxDelta {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

impl BoxDelta {
    pub const ZERO: BoxDelta = BoxDelta {
        tx: 0.0,
        ty: 0.0,
        tw: 0.0,
        th: 0.0,
    };

    pub fn new(tx: f64, ty: f64, tw: f64, th: f64) -> Self {
        BoxDelta { tx, ty, tw, th }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(iou_unchecked(a, b))
}

/// IoU for boxes already known to be valid.
pub(crate) fn iou_unchecked(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    // Areas from the same corner arithmetic as the overlap, so iou(a, a) is
    // exactly 1.
    let corner_area = |r: &BBox| (r.x2() - r.x) * (r.y2() - r.y);
    let union = corner_area(a) + corner_area(b) - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Delta that maps `reference` onto `target`.
pub fn encode(target: &BBox, reference: &BBox) -> Result<BoxDelta> {
    reference.validate()?;
    target.validate()?;
    Ok(BoxDelta {
        tx: (target.x - reference.x) / reference.w,
        ty: (target.y - reference.y) / reference.h,
        tw: (target.w / reference.w).ln(),
        th: (target.h / reference.h).ln(),
    })
}

/// Outcome of [`decode_with_limit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decoded {
    pub bbox: BBox,
    /// Set when a side overflowed (or underflowed to zero) and was clamped.
    pub saturated: bool,
}

/// Applies `delta` to `reference`, saturating sides at
/// [`DEFAULT_MAX_BOX_SIDE`].
pub fn decode(delta: &BoxDelta, reference: &BBox) -> Result<BBox> {
    decode_with_limit(delta, reference, DEFAULT_MAX_BOX_SIDE).map(|d| d.bbox)
}

pub fn decode_with_limit(delta: &BoxDelta, reference: &BBox, max_side: f64) -> Result<Decoded> {
    reference.validate()?;
    if max_side.is_nan() || max_side <= 0.0 {
        return Err(Error::Config(format!(
            "max box side must be positive, got {max_side}"
        )));
    }
    let mut saturated = false;
    let mut side = |base: f64, t: f64| {
        let s = base * t.exp();
        if s.is_nan() || s > max_side {
            saturated = true;
            max_side
        } else if s <= 0.0 {
            saturated = true;
            f64::MIN_POSITIVE
        } else {
            s
        }
    };
    let w = side(reference.w, delta.tw);
    let h = side(reference.h, delta.th);
    let bbox = BBox {
        x: delta.tx * reference.w + reference.x,
        y: delta.ty * reference.h + reference.y,
        w,
        h,
    };
    bbox.validate()?;
    Ok(Decoded { bbox, saturated })
}

/// Scales, aspect ratios and stride of the anchor grid.
///
/// Each (scale, ratio) pair yields one anchor of area `scale²` with
/// `h / w = ratio`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSpec {
    pub scales: Vec<f64>,
    pub aspect_ratios: Vec<f64>,
    pub stride: f64,
}

impl Default for AnchorSpec {
    fn default() -> Self {
        AnchorSpec {
            scales: vec![128.0, 256.0, 512.0],
            aspect_ratios: vec![0.5, 1.0, 2.0],
            stride: 16.0,
        }
    }
}

impl AnchorSpec {
    /// Anchors per feature-map cell.
    pub fn k(&self) -> usize {
        self.scales.len() * self.aspect_ratios.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || self.aspect_ratios.is_empty() {
            return Err(Error::Config(
                "anchor scales and aspect ratios must be non-empty".into(),
            ));
        }
        if let Some(s) = self.scales.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!("anchor scale {s} is not positive")));
        }
        if let Some(r) = self
            .aspect_ratios
            .iter()
            .find(|r| !(**r > 0.0 && r.is_finite()))
        {
            return Err(Error::Config(format!("aspect ratio {r} is not positive")));
        }
        if !(self.stride > 0.0 && self.stride.is_finite()) {
            return Err(Error::Config(format!(
                "stride {} is not positive",
                self.stride
            )));
        }
        Ok(())
    }

    /// The `k` anchor shapes `(w, h)` in scale-major order.
    pub fn shapes(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.k());
        for &s in &self.scales {
            for &r in &self.aspect_ratios {
                let root = r.sqrt();
                out.push((s / root, s * root));
            }
        }
        out
    }
}

/// The `k * m * n` anchors of a feature map, ordered by (row, col, anchor).
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub anchors: Vec<BBox>,
    pub feature_height: usize,
    pub feature_width: usize,
    pub spec: AnchorSpec,
    /// One flag per anchor, set when it extends past the image bounds.
    pub cross_boundary: Vec<bool>,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Index of anchor `a` at cell `(row, col)`.
    pub fn index(&self, row: usize, col: usize, a: usize) -> usize {
        (row * self.feature_width + col) * self.spec.k() + a
    }

    /// Recomputes the cross-boundary flags against an explicit image size.
    /// By default the image is taken to be `n * stride` by `m * stride`.
    pub fn flag_outside(&mut self, image_width: f64, image_height: f64) {
        self.cross_boundary = self
            .anchors
            .iter()
            .map(|b| !b.is_within(image_width, image_height))
            .collect();
    }
}

/// Lays `k` anchors on every cell of an `m x n` feature map, centred at
/// `((col + 0.5) * stride, (row + 0.5) * stride)`.
pub fn generate_anchors(m: usize, n: usize, spec: &AnchorSpec) -> Result<AnchorSet> {
    spec.validate()?;
    if m == 0 || n == 0 {
        return Err(Error::Config(format!(
            "feature map must be at least 1x1, got {m}x{n}"
        )));
    }
    let shapes = spec.shapes();
    let mut anchors = Vec::with_capacity(shapes.len() * m * n);
    for row in 0..m {
        let cy = (row as f64 + 0.5) * spec.stride;
        for col in 0..n {
            let cx = (col as f64 + 0.5) * spec.stride;
            for &(w, h) in &shapes {
                anchors.push(BBox {
                    x: cx - 0.5 * w,
                    y: cy - 0.5 * h,
                    w,
                    h,
                });
            }
        }
    }
    let mut set = AnchorSet {
        anchors,
        feature_height: m,
        feature_width: n,
        spec: spec.clone(),
        cross_boundary: Vec::new(),
    };
    set.flag_outside(n as f64 * spec.stride, m as f64 * spec.stride);
    Ok(set)
}
