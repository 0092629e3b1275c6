//! Run configuration: built-in defaults, overridden by a flat `key = value`
//! file, overridden by command-line flags.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use cardet::dataset::ClassId;
use cardet::fakegen::FakeCardSpec;
use cardet::geometry::AnchorSpec;
use cardet::imaging::AugmentationGrid;
use cardet::metrics::{ApMode, EvalConfig, Interpolation};
use cardet::postprocess::{DEFAULT_CONFIDENCE_THRESHOLD, DEFAULT_NMS_IOU};
use cardet::targets::{AssignmentConfig, DEFAULT_LAMBDA};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub confidence: f64,
    pub correct_iou: f64,
    pub nms_iou: f64,
    pub class_aware_nms: bool,
    pub pos_iou: f64,
    pub neg_iou: f64,
    pub lambda: f64,
    pub anchors: AnchorSpec,
    pub grid: AugmentationGrid,
    pub interpolation: Interpolation,
    pub ap_mode: ApMode,
    pub literal_f1: bool,
    pub card: FakeCardSpec,
    pub out: PathBuf,
    pub seed: u64,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let assign = AssignmentConfig::default();
        RunConfig {
            confidence: DEFAULT_CONFIDENCE_THRESHOLD,
            correct_iou: cardet::metrics::DEFAULT_CORRECT_IOU,
            nms_iou: DEFAULT_NMS_IOU,
            class_aware_nms: true,
            pos_iou: assign.pos_iou_threshold,
            neg_iou: assign.neg_iou_threshold,
            lambda: DEFAULT_LAMBDA,
            anchors: AnchorSpec::default(),
            grid: AugmentationGrid::default(),
            interpolation: Interpolation::AllPoints,
            ap_mode: ApMode::Dataset,
            literal_f1: false,
            card: FakeCardSpec::default(),
            out: PathBuf::from("out"),
            seed: 0,
            threads: 0,
        }
    }
}

fn parse_list(value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| anyhow!("{s:?}: {e}")))
        .collect()
}

fn parse_bool(value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bail!("{value:?} is not a boolean"),
    }
}

fn list(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = || {
            value
                .parse::<f64>()
                .map_err(|e| anyhow!("{key}: {value:?}: {e}"))
        };
        let int = || {
            value
                .parse::<u64>()
                .map_err(|e| anyhow!("{key}: {value:?}: {e}"))
        };
        match key {
            "confidence" => self.confidence = num()?,
            "correct_iou" => self.correct_iou = num()?,
            "nms_iou" => self.nms_iou = num()?,
            "class_aware_nms" => self.class_aware_nms = parse_bool(value)?,
            "pos_iou" => self.pos_iou = num()?,
            "neg_iou" => self.neg_iou = num()?,
            "lambda" => self.lambda = num()?,
            "anchor_scales" => self.anchors.scales = parse_list(value)?,
            "anchor_ratios" => self.anchors.aspect_ratios = parse_list(value)?,
            "anchor_stride" => self.anchors.stride = num()?,
            "brightness" => self.grid.brightness = parse_list(value)?,
            "color" => self.grid.color = parse_list(value)?,
            "contrast" => self.grid.contrast = parse_list(value)?,
            "sharpness" => self.grid.sharpness = parse_list(value)?,
            "interpolation" => {
                self.interpolation = match value {
                    "all" => Interpolation::AllPoints,
                    "11" => Interpolation::ElevenPoint,
                    _ => bail!("interpolation must be `all` or `11`, got {value:?}"),
                }
            }
            "ap_mode" => {
                self.ap_mode = match value {
                    "dataset" => ApMode::Dataset,
                    "image" => ApMode::PerImage,
                    _ => bail!("ap_mode must be `dataset` or `image`, got {value:?}"),
                }
            }
            "literal_f1" => self.literal_f1 = parse_bool(value)?,
            "card_width" => self.card.width = int()?.try_into()?,
            "card_height" => self.card.height = int()?.try_into()?,
            "card_items" => self.card.n_items = int()?.try_into()?,
            "card_scale_min" => self.card.font_scale_range.0 = int()?.try_into()?,
            "card_scale_max" => self.card.font_scale_range.1 = int()?.try_into()?,
            "card_attempts" => self.card.max_placement_attempts = int()?.try_into()?,
            "card_classes" => {
                self.card.classes = value
                    .split(',')
                    .map(|s| s.trim().parse::<ClassId>().map_err(|e| anyhow!(e)))
                    .collect::<Result<_>>()?
            }
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = int()?,
            "threads" => self.threads = int()?.try_into()?,
            _ => bail!("unknown configuration key {key:?}"),
        }
        Ok(())
    }

    /// Reads a `key = value` file; `#` starts a comment line.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{}: expected `key = value`", path.display(), n + 1))?;
            self.set(k.trim(), v.trim())
                .with_context(|| format!("{}:{}", path.display(), n + 1))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("confidence", self.confidence),
            ("correct_iou", self.correct_iou),
            ("nms_iou", self.nms_iou),
            ("pos_iou", self.pos_iou),
            ("neg_iou", self.neg_iou),
        ] {
            if !(0.0..=1.0).contains(&v) {
                bail!("{name} = {v} is outside [0, 1]");
            }
        }
        self.assignment().validate()?;
        self.anchors.validate()?;
        self.grid.validate()?;
        Ok(())
    }

    pub fn assignment(&self) -> AssignmentConfig {
        AssignmentConfig {
            pos_iou_threshold: self.pos_iou,
            neg_iou_threshold: self.neg_iou,
            ignore_cross_boundary: false,
        }
    }

    pub fn eval(&self) -> EvalConfig {
        EvalConfig {
            iou_threshold: self.correct_iou,
            interpolation: self.interpolation,
            ap_mode: self.ap_mode,
            literal_f1_diagnostics: self.literal_f1,
        }
    }

    pub fn card_spec(&self) -> FakeCardSpec {
        FakeCardSpec {
            seed: self.seed,
            ..self.card.clone()
        }
    }

    /// The effective configuration in the same `key = value` form the
    /// config file uses.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("confidence", self.confidence.to_string());
        kv("correct_iou", self.correct_iou.to_string());
        kv("nms_iou", self.nms_iou.to_string());
        kv("class_aware_nms", self.class_aware_nms.to_string());
        kv("pos_iou", self.pos_iou.to_string());
        kv("neg_iou", self.neg_iou.to_string());
        kv("lambda", self.lambda.to_string());
        kv("anchor_scales", list(&self.anchors.scales));
        kv("anchor_ratios", list(&self.anchors.aspect_ratios));
        kv("anchor_stride", self.anchors.stride.to_string());
        kv("brightness", list(&self.grid.brightness));
        kv("color", list(&self.grid.color));
        kv("contrast", list(&self.grid.contrast));
        kv("sharpness", list(&self.grid.sharpness));
        kv(
            "interpolation",
            match self.interpolation {
                Interpolation::AllPoints => "all".into(),
                Interpolation::ElevenPoint => "11".into(),
            },
        );
        kv(
            "ap_mode",
            match self.ap_mode {
                ApMode::Dataset => "dataset".into(),
                ApMode::PerImage => "image".into(),
            },
        );
        kv("literal_f1", self.literal_f1.to_string());
        kv("card_width", self.card.width.to_string());
        kv("card_height", self.card.height.to_string());
        kv("card_items", self.card.n_items.to_string());
        kv("card_scale_min", self.card.font_scale_range.0.to_string());
        kv("card_scale_max", self.card.font_scale_range.1.to_string());
        kv(
            "card_attempts",
            self.card.max_placement_attempts.to_string(),
        );
        kv(
            "card_classes",
            self.card
                .classes
                .iter()
                .map(|c| c.name())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("out", self.out.display().to_string());
        kv("seed", self.seed.to_string());
        kv("threads", self.threads.to_string());
        s
    }
}
