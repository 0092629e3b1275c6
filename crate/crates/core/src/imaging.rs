//! 8-bit RGB buffers and the photometric enhancers.
//!
//! Each enhancer blends the image with a degenerate version of itself:
//!
//! | enhancer   | degenerate image                          |
//! |------------|-------------------------------------------|
//! | brightness | black                                     |
//! | color      | per-pixel luma                            |
//! | contrast   | constant at the rounded mean luma         |
//! | sharpness  | 3x3 smoothed image (borders copied)       |
//!
//! `out = clamp(round(d + factor * (v - d)))` with rounding half away from
//! zero, so a factor of 1 is an exact identity. Every stage re-quantizes to
//! 8 bits before the next one runs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Annotation;
use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ImageBuffer {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB triples.
    pub pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        let expected = 3 * width as usize * height as usize;
        if pixels.len() != expected {
            return Err(Error::Contract(format!(
                "{width}x{height} RGB image needs {expected} bytes, got {}",
                pixels.len()
            )));
        }
        Ok(ImageBuffer {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        ImageBuffer {
            width,
            height,
            pixels: rgb.iter().copied().cycle().take(3 * n).collect(),
        }
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        3 * (y as usize * self.width as usize + x as usize)
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }

    fn map_pixels(&self, f: impl Fn(usize, u8) -> u8) -> ImageBuffer {
        ImageBuffer {
            width: self.width,
            height: self.height,
            pixels: self
                .pixels
                .iter()
                .enumerate()
                .map(|(i, &v)| f(i, v))
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let rgb = img.into_rgb8();
        let (width, height) = rgb.dimensions();
        Ok(ImageBuffer {
            width,
            height,
            pixels: rgb.into_raw(),
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer_with_format(
            path,
            &self.pixels,
            self.width,
            self.height,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Rounds half away from zero and saturates to a byte.
pub fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn blend(degenerate: f64, v: u8, factor: f64) -> u8 {
    quantize(degenerate + factor * (f64::from(v) - degenerate))
}

/// ITU-R 601 luma (0.299, 0.587, 0.114) in 16-bit fixed point, rounded.
pub fn luma(rgb: [u8; 3]) -> u8 {
    let [r, g, b] = rgb.map(u32::from);
    ((r * 19595 + g * 38470 + b * 7471 + 0x8000) >> 16) as u8
}

fn check_factor(factor: f64) -> Result<()> {
    if !(factor >= 0.0 && factor.is_finite()) {
        return Err(Error::Domain(format!(
            "enhancement factor {factor} must be finite and >= 0"
        )));
    }
    Ok(())
}

pub fn enhance_brightness(img: &ImageBuffer, factor: f64) -> Result<ImageBuffer> {
    check_factor(factor)?;
    Ok(img.map_pixels(|_, v| quantize(f64::from(v) * factor)))
}

pub fn enhance_color(img: &ImageBuffer, factor: f64) -> Result<ImageBuffer> {
    check_factor(factor)?;
    let mut out = img.clone();
    for px in out.pixels.chunks_exact_mut(3) {
        let gray = f64::from(luma([px[0], px[1], px[2]]));
        for v in px {
            *v = blend(gray, *v, factor);
        }
    }
    Ok(out)
}

/// Rounded mean luma of the whole image (0 for an empty image).
pub fn mean_luma(img: &ImageBuffer) -> u8 {
    let n = img.pixels.len() / 3;
    if n == 0 {
        return 0;
    }
    let sum: u64 = img
        .pixels
        .chunks_exact(3)
        .map(|p| u64::from(luma([p[0], p[1], p[2]])))
        .sum();
    quantize(sum as f64 / n as f64)
}

pub fn enhance_contrast(img: &ImageBuffer, factor: f64) -> Result<ImageBuffer> {
    check_factor(factor)?;
    let mu = f64::from(mean_luma(img));
    Ok(img.map_pixels(|_, v| blend(mu, v, factor)))
}

/// 3x3 smoothing with weights 1 around a centre weight of 5, divided by 13
/// and rounded. Pixels on the outer border are copied.
pub fn smooth(img: &ImageBuffer) -> ImageBuffer {
    let (w, h) = (img.width as usize, img.height as usize);
    let mut out = img.clone();
    if w < 3 || h < 3 {
        return out;
    }
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            for c in 0..3 {
                let mut acc = 0u32;
                for dy in 0..3 {
                    for dx in 0..3 {
                        let v = u32::from(img.pixels[3 * ((y + dy - 1) * w + (x + dx - 1)) + c]);
                        acc += if dx == 1 && dy == 1 { 5 * v } else { v };
                    }
                }
                out.pixels[3 * (y * w + x) + c] = quantize(f64::from(acc) / 13.0);
            }
        }
    }
    out
}

pub fn enhance_sharpness(img: &ImageBuffer, factor: f64) -> Result<ImageBuffer> {
    check_factor(factor)?;
    let smoothed = smooth(img);
    Ok(img.map_pixels(|i, v| blend(f64::from(smoothed.pixels[i]), v, factor)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationGrid {
    pub brightness: Vec<f64>,
    pub color: Vec<f64>,
    pub contrast: Vec<f64>,
    pub sharpness: Vec<f64>,
}

impl Default for AugmentationGrid {
    fn default() -> Self {
        AugmentationGrid {
            brightness: vec![0.5, 0.8, 1.2, 1.5],
            color: vec![0.5, 0.8, 1.2, 1.5],
            contrast: vec![0.5, 0.8, 1.2, 1.5],
            sharpness: vec![0.2, 0.5, 2.0, 3.0],
        }
    }
}

impl AugmentationGrid {
    /// A grid with one factor of 1.0 per enhancer.
    pub fn identity() -> Self {
        AugmentationGrid {
            brightness: vec![1.0],
            color: vec![1.0],
            contrast: vec![1.0],
            sharpness: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.brightness.len() * self.color.len() * self.contrast.len() * self.sharpness.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        for f in self
            .brightness
            .iter()
            .chain(&self.color)
            .chain(&self.contrast)
            .chain(&self.sharpness)
        {
            check_factor(*f)?;
        }
        Ok(())
    }
}

/// Factor indices of one variant (brightness, color, contrast, sharpness).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VariantId {
    pub brightness: usize,
    pub color: usize,
    pub contrast: usize,
    pub sharpness: usize,
}

impl std::fmt::Display for VariantId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "b{}c{}k{}s{}",
            self.brightness, self.color, self.contrast, self.sharpness
        )
    }
}

impl VariantId {
    /// `<stem>_b<i>c<j>k<l>s<m>.png`
    pub fn file_name(&self, stem: &str) -> String {
        format!("{stem}_{self}.png")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub id: VariantId,
    pub image: ImageBuffer,
    pub annotation: Annotation,
}

/// Lazily walks every factor combination, applying brightness, color,
/// contrast and sharpness in that order. Intermediate stages are cached so
/// each prefix is computed once.
pub struct Augmentations<'a> {
    source: &'a ImageBuffer,
    annotation: &'a Annotation,
    grid: &'a AugmentationGrid,
    next: Option<[usize; 4]>,
    stages: [Option<ImageBuffer>; 3],
}

pub fn enumerate_augmentations<'a>(
    img: &'a ImageBuffer,
    annotation: &'a Annotation,
    grid: &'a AugmentationGrid,
) -> Result<Augmentations<'a>> {
    grid.validate()?;
    Ok(Augmentations {
        source: img,
        annotation,
        grid,
        next: (!grid.is_empty()).then_some([0; 4]),
        stages: [None, None, None],
    })
}

impl Augmentations<'_> {
    fn advance(&mut self, idx: [usize; 4]) {
        let lens = [
            self.grid.brightness.len(),
            self.grid.color.len(),
            self.grid.contrast.len(),
            self.grid.sharpness.len(),
        ];
        let mut n = idx;
        for d in (0..4).rev() {
            n[d] += 1;
            if n[d] < lens[d] {
                // Stages at depth >= d are stale now.
                for s in d..3 {
                    self.stages[s] = None;
                }
                self.next = Some(n);
                return;
            }
            n[d] = 0;
        }
        self.next = None;
    }
}

impl Iterator for Augmentations<'_> {
    type Item = Variant;

    fn next(&mut self) -> Option<Variant> {
        let idx = self.next?;
        let g = self.grid;
        // Factors are validated up front, so the enhancers cannot fail here.
        if self.stages[0].is_none() {
            self.stages[0] =
                Some(enhance_brightness(self.source, g.brightness[idx[0]]).expect("validated"));
        }
        if self.stages[1].is_none() {
            let prev = self.stages[0].as_ref().expect("stage 0");
            self.stages[1] = Some(enhance_color(prev, g.color[idx[1]]).expect("validated"));
        }
        if self.stages[2].is_none() {
            let prev = self.stages[1].as_ref().expect("stage 1");
            self.stages[2] = Some(enhance_contrast(prev, g.contrast[idx[2]]).expect("validated"));
        }
        let image = enhance_sharpness(
            self.stages[2].as_ref().expect("stage 2"),
            g.sharpness[idx[3]],
        )
        .expect("validated");
        self.advance(idx);
        Some(Variant {
            id: VariantId {
                brightness: idx[0],
                color: idx[1],
                contrast: idx[2],
                sharpness: idx[3],
            },
            image,
            annotation: self.annotation.clone(),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let remaining = match self.next {
            None => 0,
            Some(i) => {
                let g = self.grid;
                let strides = [
                    g.color.len() * g.contrast.len() * g.sharpness.len(),
                    g.contrast.len() * g.sharpness.len(),
                    g.sharpness.len(),
                    1,
                ];
                g.len() - i.iter().zip(strides).map(|(a, b)| a * b).sum::<usize>()
            }
        };
        (remaining, Some(remaining))
    }
}

impl ExactSizeIterator for Augmentations<'_> {}

/// Draws a rectangle outline `stroke` pixels thick just inside `bbox`,
/// clipped to the image.
pub fn draw_rect(img: &mut ImageBuffer, bbox: &BBox, color: [u8; 3], stroke: u32) {
    let clip = |v: f64, hi: u32| v.clamp(0.0, f64::from(hi)) as u32;
    let (x0, x1) = (
        clip(bbox.x.floor(), img.width),
        clip(bbox.x2().ceil(), img.width),
    );
    let (y0, y1) = (
        clip(bbox.y.floor(), img.height),
        clip(bbox.y2().ceil(), img.height),
    );
    for y in y0..y1 {
        for x in x0..x1 {
            let edge = x < x0 + stroke || x + stroke >= x1 || y < y0 + stroke || y + stroke >= y1;
            if edge {
                img.put(x, y, color);
            }
        }
    }
}
