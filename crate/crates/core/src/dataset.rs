//! Annotation text format, the class registry and index-file loading.
//!
//! An annotation file is a header line followed by one box per line:
//!
//! ```text
//! # image card_000001 320 192
//! English 12 20 35 7
//! Number 80 20 23 7 0.97
//! ```
//!
//! The optional trailing column is a confidence; files carrying it are
//! prediction files, and every box in such a file must have one.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassId {
    Chinese = 0,
    English = 1,
    Number = 2,
}

impl ClassId {
    pub const ALL: [ClassId; 3] = [ClassId::Chinese, ClassId::English, ClassId::Number];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<ClassId> {
        ClassId::ALL.get(usize::from(code)).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassId::Chinese => "Chinese",
            ClassId::English => "English",
            ClassId::Number => "Number",
        }
    }

    /// Rectangle colour used when drawing detections.
    pub fn color(self) -> [u8; 3] {
        match self {
            ClassId::Chinese => [255, 0, 0],
            ClassId::English => [0, 0, 255],
            ClassId::Number => [0, 0, 0],
        }
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        ClassId::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown class name {s:?}"))
    }
}

/// One labelled box; `confidence` is set for predictions only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedBox {
    pub bbox: BBox,
    pub class: ClassId,
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub image_id: String,
    pub image_width: u32,
    pub image_height: u32,
    pub boxes: Vec<AnnotatedBox>,
}

impl Annotation {
    pub fn new(image_id: impl Into<String>, image_width: u32, image_height: u32) -> Self {
        Annotation {
            image_id: image_id.into(),
            image_width,
            image_height,
            boxes: Vec::new(),
        }
    }

    pub fn is_prediction(&self) -> bool {
        self.boxes.iter().any(|b| b.confidence.is_some())
    }

    pub fn count(&self, class: ClassId) -> usize {
        self.boxes.iter().filter(|b| b.class == class).count()
    }
}

/// A parsed annotation plus the boxes that had to be clamped or dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub annotation: Annotation,
    pub warnings: Vec<String>,
}

const HEADER_TAG: &str = "image";

pub fn parse_annotation(text: &str) -> Result<Parsed> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing header line".into(),
    })?;
    let mut annotation = parse_header(hline, header)?;
    let (width, height) = (
        f64::from(annotation.image_width),
        f64::from(annotation.image_height),
    );

    let mut warnings = Vec::new();
    let mut with_confidence = None;
    for (line, l) in lines {
        let perr = |message: String| Error::Parse { line, message };
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() != 5 && fields.len() != 6 {
            return Err(perr(format!(
                "expected 5 or 6 fields, found {}",
                fields.len()
            )));
        }
        let class: ClassId = fields[0].parse().map_err(perr)?;
        let mut nums = [0.0f64; 5];
        for (slot, f) in nums.iter_mut().zip(&fields[1..]) {
            *slot = f
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| perr(format!("{f:?} is not a finite number")))?;
        }
        let confidence = (fields.len() == 6).then_some(nums[4]);
        if let Some(c) = confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(perr(format!("confidence {c} outside [0, 1]")));
            }
        }
        match with_confidence {
            None => with_confidence = Some(confidence.is_some()),
            Some(expected) if expected != confidence.is_some() => {
                return Err(perr(
                    "confidence column present on some boxes but not others".into(),
                ));
            }
            _ => {}
        }
        let [x, y, w, h, _] = nums;
        if w <= 0.0 || h <= 0.0 {
            return Err(perr(format!("box has non-positive size {w}x{h}")));
        }

        let (x1, y1) = (x.max(0.0), y.max(0.0));
        let (x2, y2) = ((x + w).min(width), (y + h).min(height));
        if x2 <= x1 || y2 <= y1 {
            warnings.push(format!(
                "line {line}: box lies outside the {width}x{height} image, dropped"
            ));
            continue;
        }
        if (x1, y1, x2, y2) != (x, y, x + w, y + h) {
            warnings.push(format!("line {line}: box clamped to the image bounds"));
        }
        let bbox = if (x1, y1, x2, y2) == (x, y, x + w, y + h) {
            BBox { x, y, w, h }
        } else {
            BBox::from_corners(x1, y1, x2, y2)?
        };
        annotation.boxes.push(AnnotatedBox {
            bbox,
            class,
            confidence,
        });
    }
    Ok(Parsed {
        annotation,
        warnings,
    })
}

fn parse_header(line: usize, header: &str) -> Result<Annotation> {
    let perr = |message: String| Error::Parse { line, message };
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != "#" || fields[1] != HEADER_TAG {
        return Err(perr(format!(
            "expected `# image <id> <width> <height>`, found {header:?}"
        )));
    }
    let dim = |s: &str| {
        s.parse::<u32>()
            .ok()
            .filter(|v| *v > 0)
            .ok_or_else(|| perr(format!("{s:?} is not a positive image dimension")))
    };
    Ok(Annotation::new(fields[2], dim(fields[3])?, dim(fields[4])?))
}

/// Canonical text form: header, then boxes sorted by `(y, x, class)`.
pub fn serialize_annotation(a: &Annotation) -> String {
    let mut boxes: Vec<&AnnotatedBox> = a.boxes.iter().collect();
    boxes.sort_by(|p, q| {
        p.bbox
            .y
            .total_cmp(&q.bbox.y)
            .then(p.bbox.x.total_cmp(&q.bbox.x))
            .then(p.class.cmp(&q.class))
            .then(p.bbox.w.total_cmp(&q.bbox.w))
            .then(p.bbox.h.total_cmp(&q.bbox.h))
            .then(
                p.confidence
                    .unwrap_or(0.0)
                    .total_cmp(&q.confidence.unwrap_or(0.0)),
            )
    });
    let mut out = format!(
        "# {HEADER_TAG} {} {} {}\n",
        a.image_id, a.image_width, a.image_height
    );
    for b in boxes {
        let BBox { x, y, w, h } = b.bbox;
        out.push_str(&format!("{} {x} {y} {w} {h}", b.class));
        if let Some(c) = b.confidence {
            out.push_str(&format!(" {c}"));
        }
        out.push('\n');
    }
    out
}

pub fn read_annotation(path: &Path) -> Result<Parsed> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotation(&text)
}

pub fn write_annotation(path: &Path, a: &Annotation) -> Result<()> {
    fs::write(path, serialize_annotation(a)).map_err(|e| Error::io(path, e))
}

/// Annotation file belonging to an index entry: the entry itself when it is
/// a `.txt` file, otherwise the sibling with the extension swapped.
pub fn annotation_path(entry: &Path) -> PathBuf {
    if entry.extension().is_some_and(|e| e == "txt") {
        entry.to_path_buf()
    } else {
        entry.with_extension("txt")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub image_path: PathBuf,
    pub annotation: Annotation,
    pub warnings: Vec<String>,
}

#[derive(Debug, Default)]
pub struct Dataset {
    pub entries: Vec<DatasetEntry>,
    /// Index entries that could not be loaded, with the reason.
    pub errors: Vec<(PathBuf, Error)>,
}

/// Loads every entry of an index file (one image path per line, relative
/// paths resolved against the index file's directory). Failures are
/// collected per entry; only an unreadable index is fatal.
pub fn load_dataset(index_file: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(index_file).map_err(|e| Error::io(index_file, e))?;
    let base = index_file.parent().unwrap_or(Path::new(""));
    let mut dataset = Dataset::default();
    for raw in text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
    {
        let image_path = base.join(raw);
        match read_annotation(&annotation_path(&image_path)) {
            Ok(parsed) => dataset.entries.push(DatasetEntry {
                image_path,
                annotation: parsed.annotation,
                warnings: parsed.warnings,
            }),
            Err(e) => dataset.errors.push((image_path, e)),
        }
    }
    Ok(dataset)
}

/// Writes an index file listing `entries` relative to the index directory
/// when possible.
pub fn write_index(index_file: &Path, entries: &[PathBuf]) -> Result<()> {
    let base = index_file.parent().unwrap_or(Path::new(""));
    let mut text = String::new();
    for e in entries {
        let rel = e.strip_prefix(base).unwrap_or(e);
        text.push_str(&rel.to_string_lossy());
        text.push('\n');
    }
    fs::write(index_file, text).map_err(|e| Error::io(index_file, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_box_line() {
        let p = parse_annotation("# image a 200 100\nChinese 10 20 100 30\n").unwrap();
        assert_eq!(p.annotation.image_id, "a");
        assert_eq!(p.annotation.boxes.len(), 1);
        let b = p.annotation.boxes[0];
        assert_eq!(b.bbox, BBox::new(10.0, 20.0, 100.0, 30.0).unwrap());
        assert_eq!(b.class, ClassId::Chinese);
        assert_eq!(b.confidence, None);
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn empty_box_list() {
        let p = parse_annotation("# image empty 10 10\n").unwrap();
        assert!(p.annotation.boxes.is_empty());
        assert_eq!(serialize_annotation(&p.annotation), "# image empty 10 10\n");
    }

    #[test]
    fn serialization_sorts_boxes() {
        let text = "# image s 100 100\nNumber 50 10 5 5\nEnglish 1 40 5 5\nChinese 10 10 5 5 \n";
        let a = parse_annotation(text).unwrap().annotation;
        assert_eq!(
            serialize_annotation(&a),
            "# image s 100 100\nChinese 10 10 5 5\nNumber 50 10 5 5\nEnglish 1 40 5 5\n"
        );
    }

    #[test]
    fn minimal_digits() {
        let a = parse_annotation("# image m 100 100\nEnglish 1.50 2.0 3.25 4 0.900\n")
            .unwrap()
            .annotation;
        assert_eq!(
            serialize_annotation(&a),
            "# image m 100 100\nEnglish 1.5 2 3.25 4 0.9\n"
        );
    }

    #[test]
    fn clamps_and_warns() {
        let p =
            parse_annotation("# image c 50 40\nNumber -5 30 20 20\nEnglish 60 0 5 5\n").unwrap();
        assert_eq!(p.annotation.boxes.len(), 1);
        assert_eq!(
            p.annotation.boxes[0].bbox,
            BBox::new(0.0, 30.0, 15.0, 10.0).unwrap()
        );
        assert_eq!(p.warnings.len(), 2);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err =
            parse_annotation("# image x 10 10\nEnglish 1 1 2 2\nKlingon 1 1 2 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse_annotation("# image x 10 10\n\nNumber 1 1 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(parse_annotation("").is_err());
        assert!(parse_annotation("# img x 10 10\n").is_err());
        assert!(parse_annotation("# image x 10 10\nNumber 1 1 2 2 0.5\nNumber 3 3 2 2\n").is_err());
        assert!(parse_annotation("# image x 10 10\nNumber 1 1 2 2 1.5\n").is_err());
    }

    #[test]
    fn class_codes_are_a_bijection() {
        for c in ClassId::ALL {
            assert_eq!(ClassId::from_code(c.code()), Some(c));
            assert_eq!(c.name().parse::<ClassId>().unwrap(), c);
        }
        assert_eq!(ClassId::from_code(3), None);
    }

    #[test]
    fn loads_index_and_records_missing_annotations() {
        let dir = tempfile::tempdir().unwrap();
        for id in ["a", "c"] {
            let a = Annotation::new(id, 10, 10);
            write_annotation(&dir.path().join(format!("{id}.txt")), &a).unwrap();
        }
        let index = dir.path().join("index.txt");
        fs::write(&index, "a.png\nb.png\nc.png\n").unwrap();
        let ds = load_dataset(&index).unwrap();
        let ids: Vec<_> = ds
            .entries
            .iter()
            .map(|e| e.annotation.image_id.as_str())
            .collect();
        assert_eq!(ids, ["a", "c"]);
        assert_eq!(ds.errors.len(), 1);
        assert!(ds.errors[0].0.ends_with("b.png"));

        fs::write(&index, "").unwrap();
        assert!(load_dataset(&index).unwrap().entries.is_empty());
        assert!(load_dataset(&dir.path().join("missing.txt")).is_err());
    }

    fn arb_annotation() -> impl Strategy<Value = Annotation> {
        let boxes =
            prop::collection::vec((0u32..3, 0u32..400, 0u32..400, 1u32..100, 1u32..100), 0..12);
        (boxes, any::<bool>(), prop::collection::vec(0u32..=1000, 12)).prop_map(
            |(boxes, pred, confs)| {
                let mut a = Annotation::new("rnd", 500, 500);
                for (i, (c, x, y, w, h)) in boxes.into_iter().enumerate() {
                    a.boxes.push(AnnotatedBox {
                        bbox: BBox::new(
                            f64::from(x) * 0.5,
                            f64::from(y) * 0.25,
                            f64::from(w),
                            f64::from(h),
                        )
                        .unwrap(),
                        class: ClassId::from_code(c as u8).unwrap(),
                        confidence: pred.then(|| f64::from(confs[i]) / 1000.0),
                    });
                }
                a
            },
        )
    }

    proptest! {
        #[test]
        fn parse_serialize_inverse(a in arb_annotation()) {
            let text = serialize_annotation(&a);
            let back = parse_annotation(&text).unwrap();
            prop_assert!(back.warnings.is_empty());
            prop_assert_eq!(serialize_annotation(&back.annotation), text);
            prop_assert_eq!(back.annotation.boxes.len(), a.boxes.len());
        }
    }
}
