//! Synthetic "fake namecard" generator: random letter and digit strings in a
//! built-in 5x7 bitmap font, placed without overlap on a light card, with
//! tight labelled boxes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_annotation, write_index, AnnotatedBox, Annotation, ClassId};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::imaging::ImageBuffer;
use crate::rng::SplitMix64;

pub const GLYPH_WIDTH: u32 = 5;
pub const GLYPH_HEIGHT: u32 = 7;
/// Horizontal advance per character, in font cells (glyph plus one blank).
pub const GLYPH_ADVANCE: u32 = 6;
pub const MAX_STRING_LEN: u32 = 12;

const LETTERS: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz";
const DIGITS: &[u8] = b"0123456789";

/// Row bitmaps, top to bottom; bit 4 is the leftmost column.
pub fn glyph(c: char) -> Option<[u8; 7]> {
    Some(match c {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        'A' => [0x0E, 0x11, 0x11, 0x11, 0x1F, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        'a' => [0x00, 0x00, 0x0E, 0x01, 0x0F, 0x11, 0x0F],
        'b' => [0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x1E],
        'c' => [0x00, 0x00, 0x0E, 0x10, 0x10, 0x11, 0x0E],
        'd' => [0x01, 0x01, 0x0D, 0x13, 0x11, 0x11, 0x0F],
        'e' => [0x00, 0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E],
        'f' => [0x06, 0x09, 0x08, 0x1C, 0x08, 0x08, 0x08],
        'g' => [0x00, 0x0F, 0x11, 0x11, 0x0F, 0x01, 0x0E],
        'h' => [0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x11],
        'i' => [0x04, 0x00, 0x0C, 0x04, 0x04, 0x04, 0x0E],
        'j' => [0x02, 0x00, 0x06, 0x02, 0x02, 0x12, 0x0C],
        'k' => [0x10, 0x10, 0x12, 0x14, 0x18, 0x14, 0x12],
        'l' => [0x0C, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'm' => [0x00, 0x00, 0x1A, 0x15, 0x15, 0x11, 0x11],
        'n' => [0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11],
        'o' => [0x00, 0x00, 0x0E, 0x11, 0x11, 0x11, 0x0E],
        'p' => [0x00, 0x00, 0x1E, 0x11, 0x1E, 0x10, 0x10],
        'q' => [0x00, 0x00, 0x0D, 0x13, 0x0F, 0x01, 0x01],
        'r' => [0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10],
        's' => [0x00, 0x00, 0x0E, 0x10, 0x0E, 0x01, 0x1E],
        't' => [0x08, 0x08, 0x1C, 0x08, 0x08, 0x09, 0x06],
        'u' => [0x00, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0D],
        'v' => [0x00, 0x00, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'w' => [0x00, 0x00, 0x11, 0x11, 0x15, 0x15, 0x0A],
        'x' => [0x00, 0x00, 0x11, 0x0A, 0x04, 0x0A, 0x11],
        'y' => [0x00, 0x00, 0x11, 0x11, 0x0F, 0x01, 0x0E],
        'z' => [0x00, 0x00, 0x1F, 0x02, 0x04, 0x08, 0x1F],
        _ => return None,
    })
}

fn alphabet(class: ClassId) -> &'static [u8] {
    match class {
        ClassId::Number => DIGITS,
        _ => LETTERS,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FakeCardSpec {
    pub width: u32,
    pub height: u32,
    pub n_items: usize,
    pub seed: u64,
    pub classes: Vec<ClassId>,
    /// Inclusive range of integer pixel multipliers for the 5x7 font.
    pub font_scale_range: (u32, u32),
    /// Lowest value of each background channel; channels are drawn from
    /// `[background_min, 255]`.
    pub background_min: u8,
    pub max_placement_attempts: usize,
}

impl Default for FakeCardSpec {
    fn default() -> Self {
        FakeCardSpec {
            width: 320,
            height: 192,
            n_items: 8,
            seed: 0,
            classes: vec![ClassId::English, ClassId::Number],
            font_scale_range: (1, 3),
            background_min: 200,
            max_placement_attempts: 100,
        }
    }
}

/// Text is drawn with channels in `[0, INK_MAX]`, well below any background.
const INK_MAX: u32 = 80;

impl FakeCardSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.font_scale_range;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!(
                "font scale range ({lo}, {hi}) must satisfy 1 <= min <= max"
            )));
        }
        if self.classes.is_empty() {
            return Err(Error::Config("at least one class is required".into()));
        }
        if let Some(c) = self.classes.iter().find(|c| **c == ClassId::Chinese) {
            return Err(Error::Config(format!("{c} text cannot be generated")));
        }
        if self.width < GLYPH_WIDTH * lo || self.height < GLYPH_HEIGHT * lo {
            return Err(Error::Config(format!(
                "{}x{} card cannot hold one glyph at scale {lo}",
                self.width, self.height
            )));
        }
        if u32::from(self.background_min) <= INK_MAX {
            return Err(Error::Config(format!(
                "background_min must exceed {INK_MAX}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FakeCard {
    pub image: ImageBuffer,
    pub annotation: Annotation,
    /// Rendered strings, parallel to the annotation boxes.
    pub texts: Vec<String>,
    pub ink: [u8; 3],
    /// Items that found no free spot within the attempt budget.
    pub dropped: usize,
}

/// Renders one card.
///
/// Random draws happen in this order: background RGB, ink RGB, then per
/// item its class, length and characters, followed by up to
/// `max_placement_attempts` (scale, x, y) triples.
pub fn generate_card(spec: &FakeCardSpec, image_id: &str) -> Result<FakeCard> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let bg_lo = u32::from(spec.background_min);
    let background = [0; 3].map(|_: u8| rng.range_inclusive(bg_lo, 255) as u8);
    let ink = [0; 3].map(|_: u8| rng.range_inclusive(0, INK_MAX) as u8);

    let mut image = ImageBuffer::filled(spec.width, spec.height, background);
    let mut annotation = Annotation::new(image_id, spec.width, spec.height);
    let mut texts = Vec::new();
    let mut placed: Vec<BBox> = Vec::new();
    let mut dropped = 0;

    for _ in 0..spec.n_items {
        let class = *rng.pick(&spec.classes);
        let len = rng.range_inclusive(1, MAX_STRING_LEN);
        let chars: String = (0..len)
            .map(|_| char::from(*rng.pick(alphabet(class))))
            .collect();

        let mut spot = None;
        for _ in 0..spec.max_placement_attempts {
            let scale = rng.range_inclusive(spec.font_scale_range.0, spec.font_scale_range.1);
            let w = (GLYPH_ADVANCE * len - 1) * scale;
            let h = GLYPH_HEIGHT * scale;
            if w > spec.width || h > spec.height {
                continue;
            }
            let x = rng.range_inclusive(0, spec.width - w);
            let y = rng.range_inclusive(0, spec.height - h);
            let cell = BBox {
                x: f64::from(x),
                y: f64::from(y),
                w: f64::from(w),
                h: f64::from(h),
            };
            if placed.iter().all(|p| p.intersection_area(&cell) == 0.0) {
                spot = Some((x, y, scale, cell));
                break;
            }
        }
        let Some((x, y, scale, cell)) = spot else {
            dropped += 1;
            continue;
        };
        placed.push(cell);
        let tight = render_text(&mut image, &chars, x, y, scale, ink);
        annotation.boxes.push(AnnotatedBox {
            bbox: tight,
            class,
            confidence: None,
        });
        texts.push(chars);
    }
    Ok(FakeCard {
        image,
        annotation,
        texts,
        ink,
        dropped,
    })
}

/// Draws `text` with its top-left font cell at `(x, y)` and returns the
/// tight bound of the pixels set.
fn render_text(
    img: &mut ImageBuffer,
    text: &str,
    x: u32,
    y: u32,
    scale: u32,
    ink: [u8; 3],
) -> BBox {
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for (k, c) in text.chars().enumerate() {
        let rows = glyph(c).expect("alphabet characters all have glyphs");
        let gx = x + k as u32 * GLYPH_ADVANCE * scale;
        for (r, bits) in rows.iter().enumerate() {
            for col in 0..GLYPH_WIDTH {
                if bits & (0x10 >> col) == 0 {
                    continue;
                }
                let px = gx + col * scale;
                let py = y + r as u32 * scale;
                for dy in 0..scale {
                    for dx in 0..scale {
                        img.put(px + dx, py + dy, ink);
                    }
                }
                x0 = x0.min(px);
                y0 = y0.min(py);
                x1 = x1.max(px + scale);
                y1 = y1.max(py + scale);
            }
        }
    }
    BBox {
        x: f64::from(x0),
        y: f64::from(y0),
        w: f64::from(x1 - x0),
        h: f64::from(y1 - y0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCard {
    pub image: String,
    pub annotation: String,
    pub seed: u64,
    pub boxes: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub count: usize,
    pub spec: FakeCardSpec,
    pub cards: Vec<ManifestCard>,
    pub class_counts: BTreeMap<ClassId, usize>,
    pub dropped: usize,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const INDEX_FILE: &str = "index.txt";

pub fn card_id(i: usize) -> String {
    format!("card_{i:06}")
}

/// Generates `count` cards with seeds `spec.seed, spec.seed + 1, ...` into
/// `out_dir`: a PNG and an annotation per card, an index file and a JSON
/// manifest. Cards are rendered in parallel; output does not depend on it.
pub fn generate_batch(spec: &FakeCardSpec, count: usize, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let cards: Vec<(ManifestCard, Annotation)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let card_spec = FakeCardSpec {
                seed: spec.seed.wrapping_add(i as u64),
                ..spec.clone()
            };
            let id = card_id(i);
            let card = generate_card(&card_spec, &id)?;
            let image = format!("{id}.png");
            let annotation = format!("{id}.txt");
            card.image.save_png(&out_dir.join(&image))?;
            write_annotation(&out_dir.join(&annotation), &card.annotation)?;
            Ok((
                ManifestCard {
                    image,
                    annotation,
                    seed: card_spec.seed,
                    boxes: card.annotation.boxes.len(),
                    dropped: card.dropped,
                },
                card.annotation,
            ))
        })
        .collect::<Result<_>>()?;

    let mut class_counts: BTreeMap<ClassId, usize> = ClassId::ALL.iter().map(|c| (*c, 0)).collect();
    for (_, a) in &cards {
        for b in &a.boxes {
            *class_counts.entry(b.class).or_default() += 1;
        }
    }
    let images: Vec<PathBuf> = cards.iter().map(|(m, _)| out_dir.join(&m.image)).collect();
    write_index(&out_dir.join(INDEX_FILE), &images)?;

    let manifest = Manifest {
        count,
        spec: spec.clone(),
        dropped: cards.iter().map(|(m, _)| m.dropped).sum(),
        cards: cards.into_iter().map(|(m, _)| m).collect(),
        class_counts,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
