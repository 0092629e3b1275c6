//! Confidence filtering, greedy NMS and RoI max pooling.

use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotatedBox, ClassId};
use crate::error::{Error, Result};
use crate::geometry::{iou_unchecked, BBox};

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.8;
pub const DEFAULT_NMS_IOU: f64 = 0.3;
pub const DEFAULT_POOL_SIZE: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class: ClassId,
    pub confidence: f64,
}

impl Detection {
    pub fn new(bbox: BBox, class: ClassId, confidence: f64) -> Result<Self> {
        bbox.validate()?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::Domain(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Detection {
            bbox,
            class,
            confidence,
        })
    }
}

impl From<Detection> for AnnotatedBox {
    fn from(d: Detection) -> Self {
        AnnotatedBox {
            bbox: d.bbox,
            class: d.class,
            confidence: Some(d.confidence),
        }
    }
}

/// Keeps detections scoring strictly above `threshold`, in input order.
pub fn filter_by_confidence(dets: &[Detection], threshold: f64) -> Vec<Detection> {
    dets.iter()
        .filter(|d| d.confidence > threshold)
        .copied()
        .collect()
}

/// Greedy non-maximum suppression.
///
/// Detections are visited by descending confidence (earlier input first on
/// ties); each kept detection suppresses later ones whose IoU with it
/// exceeds `iou_threshold`, restricted to the same class when `class_aware`.
/// The result is in visiting order.
pub fn nms(dets: &[Detection], iou_threshold: f64, class_aware: bool) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .total_cmp(&dets[a].confidence)
            .then(a.cmp(&b))
    });

    let mut suppressed = vec![false; dets.len()];
    let mut kept = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        kept.push(dets[i]);
        for &j in &order[pos + 1..] {
            if suppressed[j] || (class_aware && dets[j].class != dets[i].class) {
                continue;
            }
            if iou_unchecked(&dets[i].bbox, &dets[j].bbox) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    kept
}

/// Dense `height x width x channels` tensor, row-major `(row, col, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Contract(format!(
                "feature map {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(FeatureMap {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for k in 0..channels {
                    data.push(f(r, c, k));
                }
            }
        }
        FeatureMap {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + channel]
    }
}

/// Scales an image-space box into feature-map cells.
pub fn map_box_to_feature(img_box: &BBox, stride: f64) -> Result<BBox> {
    if !(stride > 0.0 && stride.is_finite()) {
        return Err(Error::Config(format!("stride {stride} must be positive")));
    }
    BBox::new(
        img_box.x / stride,
        img_box.y / stride,
        img_box.w / stride,
        img_box.h / stride,
    )
}

/// Integer cell window a roi covers: rows `[row0, row1)`, cols `[col0, col1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoiWindow {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
    /// Set when the roi had to be cut back to the feature map.
    pub clipped: bool,
}

/// Snaps a roi to whole cells (floor for the origin, ceil for the far edge),
/// clips it to the map and widens it to at least one cell.
pub fn roi_window(fm: &FeatureMap, roi: &BBox) -> Result<RoiWindow> {
    roi.validate()?;
    let (h, w) = (fm.height as f64, fm.width as f64);
    let (r0, r1) = (roi.y.floor(), roi.y2().ceil());
    let (c0, c1) = (roi.x.floor(), roi.x2().ceil());
    if r1 <= 0.0 || c1 <= 0.0 || r0 >= h || c0 >= w {
        return Err(Error::InvalidRoi(format!(
            "({}, {}, {}, {}) lies outside the {}x{} feature map",
            roi.x, roi.y, roi.w, roi.h, fm.height, fm.width
        )));
    }
    let clipped = r0 < 0.0 || c0 < 0.0 || r1 > h || c1 > w;
    let row0 = r0.max(0.0) as usize;
    let col0 = c0.max(0.0) as usize;
    let row1 = (r1.min(h) as usize).max(row0 + 1);
    let col1 = (c1.min(w) as usize).max(col0 + 1);
    Ok(RoiWindow {
        row0,
        row1,
        col0,
        col1,
        clipped,
    })
}

/// Half-open cell range of bin `i` when `extent` cells are split `bins` ways.
/// Never empty for `extent >= 1`.
pub fn bin_range(i: usize, extent: usize, bins: usize) -> (usize, usize) {
    (i * extent / bins, ((i + 1) * extent).div_ceil(bins))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub map: FeatureMap,
    pub clipped: bool,
}

/// Max-pools the roi into an `out_size x out_size x channels` map.
pub fn roi_pool(fm: &FeatureMap, roi: &BBox, out_size: usize) -> Result<Pooled> {
    if fm.channels == 0 {
        return Err(Error::Contract("feature map has no channels".into()));
    }
    if out_size == 0 {
        return Err(Error::Config(
            "pooled output size must be at least 1".into(),
        ));
    }
    let win = roi_window(fm, roi)?;
    let (mh, mw) = (win.row1 - win.row0, win.col1 - win.col0);
    let c = fm.channels;
    let mut data = vec![f32::NEG_INFINITY; out_size * out_size * c];
    for i in 0..out_size {
        let (ra, rb) = bin_range(i, mh, out_size);
        for j in 0..out_size {
            let (ca, cb) = bin_range(j, mw, out_size);
            let out = &mut data[(i * out_size + j) * c..][..c];
            for r in win.row0 + ra..win.row0 + rb {
                for col in win.col0 + ca..win.col0 + cb {
                    let cell = &fm.data[(r * fm.width + col) * c..][..c];
                    for (o, &v) in out.iter_mut().zip(cell) {
                        *o = o.max(v);
                    }
                }
            }
        }
    }
    Ok(Pooled {
        map: FeatureMap {
            height: out_size,
            width: out_size,
            channels: c,
            data,
        },
        clipped: win.clipped,
    })
}
