//! Acceptance suite. Each criterion runs against an independent oracle under
//! a wall-clock budget and prints one PASS/FAIL line.

mod common;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use cardet::dataset::{AnnotatedBox, Annotation, ClassId};
use cardet::fakegen::{self, FakeCardSpec};
use cardet::geometry::{self, generate_anchors, AnchorSpec, BBox, BoxDelta};
use cardet::imaging::{self, enumerate_augmentations, AugmentationGrid, ImageBuffer};
use cardet::metrics::{self, EvalConfig, ImageEval, Interpolation};
use cardet::postprocess::{nms, roi_pool, Detection, FeatureMap};
use cardet::targets::{
    self, AnchorLabel, AssignmentConfig, GroundTruth, Label, LossConfig, Prediction, SmoothL1,
};
use cardet::weights::{self, Half, Tensor, TensorFile};
use cardet_cli::RunConfig;
use common::oracles::{self, IBox, RefLabel};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

type Check = Result<(), String>;
type Enhancer = fn(&ImageBuffer, f64) -> cardet::Result<ImageBuffer>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

const CLASSES: [ClassId; 3] = [ClassId::Chinese, ClassId::English, ClassId::Number];

fn bbox(b: IBox) -> BBox {
    BBox::new(b.0 as f64, b.1 as f64, b.2 as f64, b.3 as f64).unwrap()
}

fn rand_box(rng: &mut StdRng, span: i64, side: (i64, i64)) -> IBox {
    (
        rng.gen_range(0..span),
        rng.gen_range(0..span),
        rng.gen_range(side.0..=side.1),
        rng.gen_range(side.0..=side.1),
    )
}

fn c1_iou() -> Check {
    let mut rng = StdRng::seed_from_u64(1);
    for _ in 0..1000 {
        let a = rand_box(&mut rng, 40, (1, 30));
        let b = rand_box(&mut rng, 40, (1, 30));
        let got = geometry::iou(&bbox(a), &bbox(b)).map_err(|e| e.to_string())?;
        let want = oracles::raster_iou(a, b);
        ensure!(
            (got - want).abs() <= 1e-9,
            "{a:?} {b:?}: {got} vs raster {want}"
        );
    }
    Ok(())
}

fn c2_round_trip() -> Check {
    let mut rng = StdRng::seed_from_u64(2);
    for _ in 0..1000 {
        let draw = |rng: &mut StdRng| {
            BBox::new(
                rng.gen_range(-500.0..500.0),
                rng.gen_range(-500.0..500.0),
                rng.gen_range(1.0..400.0),
                rng.gen_range(1.0..400.0),
            )
            .unwrap()
        };
        let gt = draw(&mut rng);
        let anchor = draw(&mut rng);
        let d = geometry::encode(&gt, &anchor).map_err(|e| e.to_string())?;
        let back = geometry::decode(&d, &anchor).map_err(|e| e.to_string())?;
        for (name, a, b) in [
            ("x", gt.x, back.x),
            ("y", gt.y, back.y),
            ("w", gt.w, back.w),
            ("h", gt.h, back.h),
        ] {
            let rel = (a - b).abs() / a.abs().max(f64::MIN_POSITIVE);
            ensure!(rel <= 1e-9, "{name}: {a} -> {b} (relative {rel:e})");
        }
    }
    Ok(())
}

fn c3_loss() -> Check {
    let cfg = LossConfig {
        lambda: 1.0,
        n_cls: 1,
        n_reg: 1,
        smooth_l1: SmoothL1::Literal,
    };
    let labels = [AnchorLabel::positive(0, BoxDelta::ZERO)];
    let preds = [Prediction {
        objectness: 0.5,
        delta: BoxDelta::new(0.5, 0.0, 0.0, 0.0),
    }];
    let total = targets::rpn_loss(&labels, &preds, &cfg)
        .map_err(|e| e.to_string())?
        .total;
    ensure!(
        (total - 1.193147).abs() <= 1e-6,
        "single-anchor loss {total}"
    );

    let t = BoxDelta::new(0.3, -0.2, 0.1, 0.05);
    let labels = [
        AnchorLabel::positive(0, t),
        AnchorLabel::NEGATIVE,
        AnchorLabel::IGNORE,
    ];
    let preds = [
        Prediction {
            objectness: 1.0,
            delta: t,
        },
        Prediction {
            objectness: 0.0,
            delta: BoxDelta::new(5.0, 5.0, 5.0, 5.0),
        },
        Prediction {
            objectness: 0.3,
            delta: BoxDelta::new(9.0, 0.0, 0.0, 0.0),
        },
    ];
    let perfect = targets::rpn_loss(&labels, &preds, &LossConfig::for_counts(1, 3))
        .map_err(|e| e.to_string())?;
    ensure!(
        perfect.total == 0.0,
        "perfect predictions cost {}",
        perfect.total
    );

    let h = 1e-6;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
    let mut rng = StdRng::seed_from_u64(3);
    for variant in [SmoothL1::Literal, SmoothL1::Standard] {
        for _ in 0..500 {
            let d: f64 = rng.gen_range(-4.0..4.0);
            if (d.abs() - 1.0).abs() < 1e-3 || d.abs() < 1e-3 {
                continue;
            }
            let fd = (targets::smooth_l1_with(d + h, variant)
                - targets::smooth_l1_with(d - h, variant))
                / (2.0 * h);
            let an = targets::smooth_l1_grad(d, variant);
            ensure!(
                rel(fd, an) <= 1e-5,
                "{variant:?} smooth_l1'({d}) = {an}, finite difference {fd}"
            );
        }
    }
    for _ in 0..500 {
        let p: f64 = rng.gen_range(0.01..0.99);
        let f = |p: f64| targets::cls_loss(p).unwrap();
        let fd = (f(p + h) - f(p - h)) / (2.0 * h);
        let an = targets::cls_loss_grad(p);
        ensure!(
            rel(fd, an) <= 1e-5,
            "cls_loss'({p}) = {an}, finite difference {fd}"
        );
    }
    Ok(())
}

fn compare_labels(got: &[AnchorLabel], want: &[RefLabel], ctx: &str) -> Check {
    ensure!(
        got.len() == want.len(),
        "{ctx}: {} labels, expected {}",
        got.len(),
        want.len()
    );
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        let same = match *w {
            RefLabel::Positive(j) => g.label == Label::Positive && g.matched_gt_index == Some(j),
            RefLabel::Negative => g.label == Label::Negative,
            RefLabel::Ignore => g.label == Label::Ignore,
        };
        ensure!(same, "{ctx}: anchor {i} labelled {g:?}, reference {w:?}");
    }
    Ok(())
}

fn c4_assignment() -> Check {
    let mut rng = StdRng::seed_from_u64(4);
    let cfg = AssignmentConfig::default();
    let (pos, neg) = ((4, 5), (3, 10));
    for inst in 0..200 {
        // Half the instances use a real anchor grid, half free boxes.
        let anchors: Vec<IBox> = if inst % 2 == 0 {
            let spec = AnchorSpec {
                scales: vec![4.0, 8.0, 12.0],
                aspect_ratios: vec![1.0],
                stride: 4.0,
            };
            let (m, n) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
            generate_anchors(m, n, &spec)
                .map_err(|e| e.to_string())?
                .anchors
                .iter()
                .map(|b| (b.x as i64, b.y as i64, b.w as i64, b.h as i64))
                .collect()
        } else {
            let n = rng.gen_range(1..=50);
            (0..n).map(|_| rand_box(&mut rng, 24, (2, 14))).collect()
        };
        ensure!(
            anchors.len() <= 50,
            "instance {inst} has {} anchors",
            anchors.len()
        );
        let n_gts = rng.gen_range(1..=5);
        let mut gts = Vec::new();
        while gts.len() < n_gts {
            let g = rand_box(&mut rng, 20, (2, 12));
            if anchors.iter().any(|a| oracles::iou_ratio(*a, g).0 > 0) {
                gts.push(g);
            }
        }
        let gt_structs: Vec<GroundTruth> = gts
            .iter()
            .map(|g| GroundTruth {
                bbox: bbox(*g),
                class: ClassId::English,
            })
            .collect();
        let boxes: Vec<BBox> = anchors.iter().map(|a| bbox(*a)).collect();
        let got =
            targets::assign_boxes(&boxes, None, &gt_structs, &cfg).map_err(|e| e.to_string())?;
        let want = oracles::reference_assign(&anchors, &gts, pos, neg);
        compare_labels(&got, &want, &format!("instance {inst}"))?;
        // The anchors attaining each gt's best overlap are positive.
        for (j, g) in gts.iter().enumerate() {
            let ratios: Vec<(i64, i64)> =
                anchors.iter().map(|a| oracles::iou_ratio(*a, *g)).collect();
            let best = ratios
                .iter()
                .fold((0, 1), |m, v| if oracles::ratio_gt(*v, m) { *v } else { m });
            let covered = ratios
                .iter()
                .zip(&got)
                .any(|(r, l)| l.label == Label::Positive && oracles::ratio_eq(*r, best));
            ensure!(covered, "instance {inst}: gt {j} has no positive anchor");
        }
    }
    Ok(())
}

fn c5_nms() -> Check {
    let mut rng = StdRng::seed_from_u64(5);
    for inst in 0..500 {
        let n = rng.gen_range(0..=30);
        let dets: Vec<Detection> = (0..n)
            .map(|_| Detection {
                bbox: bbox(rand_box(&mut rng, 40, (4, 24))),
                class: CLASSES[rng.gen_range(0..3)],
                confidence: f64::from(rng.gen_range(1..=10)) / 10.0,
            })
            .collect();
        let class_aware = inst % 2 == 0;
        let thr = [0.3, 0.5, 0.0][inst % 3];
        let got = nms(&dets, thr, class_aware);
        let want = oracles::reference_nms(&dets, thr, class_aware);
        ensure!(
            got == want,
            "instance {inst}: {} kept, reference {}",
            got.len(),
            want.len()
        );
        for (a, x) in got.iter().enumerate() {
            for y in &got[a + 1..] {
                if x.class == y.class {
                    let v = geometry::iou(&x.bbox, &y.bbox).unwrap();
                    ensure!(v <= thr, "instance {inst}: kept pair overlaps {v}");
                }
            }
        }
    }
    Ok(())
}

fn c6_roi_pool() -> Check {
    let mut rng = StdRng::seed_from_u64(6);
    let fm = FeatureMap::from_fn(7, 7, 3, |r, c, k| (r * 100 + c * 10 + k) as f32);
    let pooled =
        roi_pool(&fm, &BBox::new(0.0, 0.0, 7.0, 7.0).unwrap(), 7).map_err(|e| e.to_string())?;
    ensure!(
        pooled.map == fm && !pooled.clipped,
        "7x7 roi over a 7x7 map is not the identity"
    );

    for t in 0..100 {
        let (h, w, c) = (
            rng.gen_range(1..=32),
            rng.gen_range(1..=32),
            rng.gen_range(1..=4),
        );
        let data: Vec<f32> = (0..h * w * c).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let fm = FeatureMap::new(h, w, c, data).map_err(|e| e.to_string())?;
        for _ in 0..5 {
            let x = rng.gen_range(-4.0..w as f64 - 0.1);
            let y = rng.gen_range(-4.0..h as f64 - 0.1);
            let rw = rng.gen_range((0.2f64).max(0.1 - x)..40.0);
            let rh = rng.gen_range((0.2f64).max(0.1 - y)..40.0);
            let roi = BBox::new(x, y, rw, rh).unwrap();
            let got = roi_pool(&fm, &roi, 7).map_err(|e| format!("tensor {t}: {e}"))?;
            let want = oracles::reference_roi_pool(&fm, (x, y, rw, rh), 7);
            ensure!(
                got.map.data == want,
                "tensor {t}: roi {roi:?} differs from brute force"
            );

            // Raising one input cell never lowers any output.
            let mut bumped = fm.clone();
            let cell = rng.gen_range(0..bumped.data.len());
            bumped.data[cell] += rng.gen_range(0.0..5.0);
            let after = roi_pool(&bumped, &roi, 7).unwrap();
            ensure!(
                after
                    .map
                    .data
                    .iter()
                    .zip(&got.map.data)
                    .all(|(a, b)| a >= b),
                "tensor {t}: raising a cell lowered an output"
            );
        }
    }
    Ok(())
}

fn random_annotation(rng: &mut StdRng, id: &str) -> Annotation {
    let mut a = Annotation::new(id, 200, 200);
    for _ in 0..rng.gen_range(0..12) {
        a.boxes.push(AnnotatedBox {
            bbox: bbox(rand_box(rng, 150, (3, 40))),
            class: CLASSES[rng.gen_range(0..3)],
            confidence: None,
        });
    }
    a
}

fn c7_metrics() -> Check {
    let mut rng = StdRng::seed_from_u64(7);
    let cfg = EvalConfig::default();

    for t in 0..50 {
        let gts: Vec<Annotation> = (0..rng.gen_range(1..5))
            .map(|i| random_annotation(&mut rng, &format!("im{i}")))
            .collect();
        let r = metrics::evaluate_dataset(&gts, &gts, &cfg);
        for c in r.classes.iter().filter(|c| c.n_gt > 0) {
            ensure!(
                c.avg_iou.value == 1.0 && c.ap == Some(1.0) && c.f1 == 1.0,
                "trial {t}: self-evaluation of {} gives {c:?}",
                c.class
            );
        }
        if r.total.n_gt > 0 {
            ensure!(
                r.total.avg_iou.value == 1.0 && r.total.map == Some(1.0) && r.total.f1 == 1.0,
                "trial {t}: self-evaluation total {:?}",
                r.total
            );
        }
    }

    let ap = metrics::ap_from_ranking(&[true, false, true], 2, Interpolation::AllPoints);
    ensure!(
        (ap - 0.8333).abs() <= 1e-4 && (ap - 5.0 / 6.0).abs() <= 1e-6,
        "worked AP example gives {ap}"
    );

    for t in 0..50 {
        let gts: Vec<Annotation> = (0..3)
            .map(|i| random_annotation(&mut rng, &format!("im{i}")))
            .collect();
        let preds: Vec<Annotation> = gts
            .iter()
            .map(|g| {
                let mut p = random_annotation(&mut rng, &g.image_id);
                for b in &g.boxes {
                    if rng.gen_bool(0.7) {
                        p.boxes.push(AnnotatedBox {
                            bbox: b
                                .bbox
                                .translate(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
                            ..*b
                        });
                    }
                }
                for b in &mut p.boxes {
                    b.confidence = Some(f64::from(rng.gen_range(1..=20)) / 20.0);
                }
                p
            })
            .collect();
        // Strictly increasing remap of the distinct confidences.
        let mut levels: Vec<f64> = preds
            .iter()
            .flat_map(|p| p.boxes.iter().map(|b| b.confidence.unwrap()))
            .collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        let mut targets_: Vec<f64> = (0..levels.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        targets_.sort_by(f64::total_cmp);
        targets_.dedup();
        if targets_.len() != levels.len() {
            continue;
        }
        let remapped: Vec<Annotation> = preds
            .iter()
            .map(|p| {
                let mut p = p.clone();
                for b in &mut p.boxes {
                    let k = levels
                        .iter()
                        .position(|l| *l == b.confidence.unwrap())
                        .unwrap();
                    b.confidence = Some(targets_[k]);
                }
                p
            })
            .collect();
        let before = metrics::evaluate_dataset(&preds, &gts, &cfg);
        let after = metrics::evaluate_dataset(&remapped, &gts, &cfg);
        for (a, b) in before.classes.iter().zip(&after.classes) {
            ensure!(
                a.ap == b.ap,
                "map {t}: {} AP {:?} became {:?}",
                a.class,
                a.ap,
                b.ap
            );
        }
        ensure!(before.total.map == after.total.map, "map {t}: mAP changed");
    }

    let mut instances = 0;
    while instances < 2000 {
        let n_gts = rng.gen_range(0..=4);
        let n_preds = rng.gen_range(0..=6 - n_gts);
        let gts: Vec<oracles::Gt> = (0..n_gts)
            .map(|_| oracles::Gt {
                bbox: rand_box(&mut rng, 12, (8, 16)),
                class: CLASSES[rng.gen_range(0..2)],
            })
            .collect();
        let preds: Vec<oracles::Pred> = (0..n_preds)
            .map(|_| {
                let bbox = if !gts.is_empty() && rng.gen_bool(0.8) {
                    let g = gts[rng.gen_range(0..gts.len())].bbox;
                    (
                        g.0 + rng.gen_range(-2..=2),
                        g.1 + rng.gen_range(-2..=2),
                        (g.2 + rng.gen_range(-2..=2)).max(1),
                        (g.3 + rng.gen_range(-2..=2)).max(1),
                    )
                } else {
                    rand_box(&mut rng, 12, (8, 16))
                };
                oracles::Pred {
                    bbox,
                    class: CLASSES[rng.gen_range(0..2)],
                    confidence: f64::from(rng.gen_range(1..=4)) / 4.0,
                }
            })
            .collect();
        let image = ImageEval {
            image_id: "x".into(),
            preds: preds
                .iter()
                .map(|p| Detection {
                    bbox: bbox(p.bbox),
                    class: p.class,
                    confidence: p.confidence,
                })
                .collect(),
            gts: gts
                .iter()
                .map(|g| GroundTruth {
                    bbox: bbox(g.bbox),
                    class: g.class,
                })
                .collect(),
        };
        let m = metrics::match_detections(&image.preds, &image.gts, cfg.iou_threshold);
        let best = oracles::max_matching(&preds, &gts, (4, 5));
        ensure!(
            m.n_matched() == best,
            "instance {instances}: {} matches, exhaustive {best}",
            m.n_matched()
        );
        for class in [ClassId::English, ClassId::Number] {
            let got = metrics::average_precision(std::slice::from_ref(&image), class, &cfg);
            let want = oracles::exhaustive_ap(&preds, &gts, class, (4, 5));
            let same = match (got, want) {
                (Some(a), Some(b)) => (a - b).abs() <= 1e-12,
                (None, None) => true,
                _ => false,
            };
            ensure!(
                same,
                "instance {instances}: {class} AP {got:?}, exhaustive {want:?}"
            );
        }
        instances += 1;
    }
    Ok(())
}

fn c8_augmentation() -> Check {
    let mut rng = StdRng::seed_from_u64(8);
    let (w, h) = (512u32, 512u32);
    let pixels: Vec<u8> = (0..w * h * 3).map(|_| rng.gen()).collect();
    let img = ImageBuffer::new(w, h, pixels).map_err(|e| e.to_string())?;
    let mut ann = Annotation::new("photo", w, h);
    ann.boxes.push(AnnotatedBox {
        bbox: BBox::new(10.0, 20.0, 100.0, 30.0).unwrap(),
        class: ClassId::Number,
        confidence: None,
    });

    let grid = AugmentationGrid::default();
    let mut count = 0;
    for v in enumerate_augmentations(&img, &ann, &grid).map_err(|e| e.to_string())? {
        ensure!(
            v.annotation == ann,
            "variant {} changed the annotation",
            v.id
        );
        ensure!(
            (v.image.width, v.image.height) == (w, h),
            "variant {} changed the size",
            v.id
        );
        count += 1;
    }
    ensure!(count == 256, "default grid gave {count} variants");

    let enhancers: [(&str, Enhancer); 4] = [
        ("brightness", imaging::enhance_brightness),
        ("color", imaging::enhance_color),
        ("contrast", imaging::enhance_contrast),
        ("sharpness", imaging::enhance_sharpness),
    ];
    for (name, f) in enhancers {
        let out = f(&img, 1.0).map_err(|e| e.to_string())?;
        ensure!(out.pixels == img.pixels, "{name} at 1.0 changed pixels");
    }
    let gray = imaging::enhance_color(&img, 0.0).map_err(|e| e.to_string())?;
    ensure!(
        gray.pixels.chunks(3).all(|p| p[0] == p[1] && p[1] == p[2]),
        "color 0.0 left a coloured pixel"
    );
    Ok(())
}

fn tight_and_disjoint(card: &fakegen::FakeCard) -> Check {
    let img = &card.image;
    let boxes = &card.annotation.boxes;
    for (i, b) in boxes.iter().enumerate() {
        ensure!(b.bbox.area() > 0.0, "box {i} is empty");
        ensure!(
            b.bbox
                .is_within(f64::from(img.width), f64::from(img.height)),
            "box {i} leaves the card"
        );
        let (x0, y0) = (b.bbox.x as u32, b.bbox.y as u32);
        let (x1, y1) = (b.bbox.x2() as u32 - 1, b.bbox.y2() as u32 - 1);
        let ink = |x: u32, y: u32| img.get(x, y) == card.ink;
        ensure!(
            (x0..=x1).any(|x| ink(x, y0)),
            "box {i}: no glyph pixel on the top row"
        );
        ensure!(
            (x0..=x1).any(|x| ink(x, y1)),
            "box {i}: no glyph pixel on the bottom row"
        );
        ensure!(
            (y0..=y1).any(|y| ink(x0, y)),
            "box {i}: no glyph pixel in the left column"
        );
        ensure!(
            (y0..=y1).any(|y| ink(x1, y)),
            "box {i}: no glyph pixel in the right column"
        );
        for c in &boxes[i + 1..] {
            let v = geometry::iou(&b.bbox, &c.bbox).unwrap();
            ensure!(v == 0.0, "boxes overlap with IoU {v}");
        }
    }
    Ok(())
}

fn table_cells(lines: &[String]) -> Result<Vec<Vec<String>>, String> {
    let header = lines.first().ok_or("no table printed")?;
    let cols: Vec<&str> = header.split_whitespace().collect();
    ensure!(
        cols == ["Chinese", "English", "Number", "Total"],
        "table header {header:?}"
    );
    let mut rows = Vec::new();
    for (line, name) in lines[1..].iter().zip(["IoU", "mAP", "F-1"]) {
        let parts: Vec<&str> = line.split_whitespace().collect();
        ensure!(parts.len() == 5 && parts[0] == name, "table row {line:?}");
        rows.push(parts[1..].iter().map(|s| s.to_string()).collect());
    }
    ensure!(rows.len() == 3, "table has {} score rows", rows.len());
    Ok(rows)
}

fn is_percent(cell: &str) -> bool {
    cell.strip_suffix('%')
        .and_then(|n| n.split_once('.'))
        .is_some_and(|(a, b)| {
            !a.is_empty()
                && a.bytes().all(|c| c.is_ascii_digit())
                && b.len() == 2
                && b.bytes().all(|c| c.is_ascii_digit())
        })
}

fn c9_fakegen() -> Check {
    let spec = FakeCardSpec {
        seed: 99,
        ..FakeCardSpec::default()
    };
    for seed in 0..20 {
        let spec = FakeCardSpec {
            seed,
            ..spec.clone()
        };
        let a = fakegen::generate_card(&spec, "a").map_err(|e| e.to_string())?;
        let b = fakegen::generate_card(&spec, "a").map_err(|e| e.to_string())?;
        ensure!(a == b, "seed {seed}: two runs differ");
        tight_and_disjoint(&a).map_err(|e| format!("seed {seed}: {e}"))?;
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (d1, d2) = (dir.path().join("one"), dir.path().join("two"));
    fakegen::generate_batch(&spec, 20, &d1).map_err(|e| e.to_string())?;
    fakegen::generate_batch(&spec, 20, &d2).map_err(|e| e.to_string())?;
    for entry in fs::read_dir(&d1).map_err(|e| e.to_string())? {
        let name = entry.map_err(|e| e.to_string())?.file_name();
        let (x, y) = (
            fs::read(d1.join(&name)).unwrap(),
            fs::read(d2.join(&name)).unwrap(),
        );
        ensure!(x == y, "{name:?} differs between runs");
    }

    let cfg = RunConfig {
        out: dir.path().join("eval"),
        ..RunConfig::default()
    };
    let index = d1.join(fakegen::INDEX_FILE);
    let (outcome, _) =
        cardet_cli::cmd_evaluate(&cfg, &index, &index).map_err(|e| format!("{e:#}"))?;
    ensure!(outcome.success(), "evaluate reported {:?}", outcome.errors);
    for row in table_cells(&outcome.stdout)? {
        for cell in row {
            ensure!(
                cell == "100.00%",
                "self-evaluation printed {cell}:\n{}",
                outcome.stdout.join("\n")
            );
        }
    }
    Ok(())
}

fn c10_half() -> Check {
    for bits in 0u16..=u16::MAX {
        let h = Half(bits);
        let back = weights::f32_to_f16(weights::f16_to_f32(h));
        if h.is_nan() {
            ensure!(back.is_nan(), "NaN pattern {bits:#06x} lost its NaN-ness");
        } else if h.to_f32().is_infinite() {
            ensure!(
                back == Half(bits & 0x8000 | 0x7BFF),
                "infinity {bits:#06x} did not saturate"
            );
        } else {
            ensure!(back == h, "pattern {bits:#06x} became {:#06x}", back.0);
        }
    }

    let tenth = weights::f16_to_f32(weights::f32_to_f16(0.1));
    ensure!(
        f64::from(tenth) == 0.099_975_585_937_5,
        "0.1 narrowed to {tenth}"
    );
    ensure!(
        oracles::nearest_half(0.1) == tenth,
        "0.1 disagrees with the nearest-value scan"
    );
    ensure!(
        half::f16::from_f32(0.1).to_f32() == tenth,
        "0.1 disagrees with the half crate"
    );
    let big = weights::narrow(1e6);
    ensure!(
        big.half.to_f32() == 65504.0 && big.saturated,
        "1e6 narrowed to {}",
        big.half.to_f32()
    );

    // Cross-check against an independent conversion over a wide sweep.
    let mut rng = StdRng::seed_from_u64(10);
    for _ in 0..200_000 {
        let x = f32::from_bits(rng.gen());
        if !x.is_finite() || x.abs() > 65504.0 {
            continue;
        }
        let ours = weights::f32_to_f16(x).0;
        let theirs = half::f16::from_f32(x).to_bits();
        ensure!(ours == theirs, "{x:e}: {ours:#06x} vs {theirs:#06x}");
    }

    let values: Vec<f32> = (0..1000)
        .map(|_| rng.sample::<f32, _>(StandardNormal))
        .collect();
    let file = TensorFile {
        tensors: vec![Tensor::from_f32("w", vec![10, 100], &values).map_err(|e| e.to_string())?],
    };
    let (half_file, report) = weights::quantize(&file);
    ensure!(
        2 * half_file.payload_bytes() == file.payload_bytes(),
        "payload did not halve"
    );
    ensure!(
        2 * report.bytes_after == report.bytes_before,
        "report sizes {report:?}"
    );
    for (x, y) in values.iter().zip(half_file.tensors[0].values()) {
        if x.abs() >= 2f32.powi(-14) {
            let rel = ((x - y) / x).abs();
            ensure!(rel <= 2f32.powi(-10), "{x} round-tripped to {y}");
        }
    }
    Ok(())
}

fn run(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cardet"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    ensure!(
        out.status.success(),
        "cardet {args:?} exited with {}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(stdout)
}

fn c11_pipeline() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    run(
        root,
        &["generate", "--count", "5", "--seed", "7", "--out", "photos"],
    )?;
    let aug = run(root, &["augment", "photos/index.txt", "--out", "augmented"])?;
    ensure!(aug.contains("outputs: 1280"), "augment summary:\n{aug}");
    run(
        root,
        &[
            "generate", "--count", "5", "--seed", "1000", "--out", "fake",
        ],
    )?;

    let mut abs: Vec<PathBuf> = Vec::new();
    for sub in ["augmented", "fake"] {
        let listing =
            fs::read_to_string(root.join(sub).join("index.txt")).map_err(|e| e.to_string())?;
        abs.extend(
            listing
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| root.join(sub).join(l.trim())),
        );
    }
    let index = root.join("all.txt");
    cardet::dataset::write_index(&index, &abs).map_err(|e| e.to_string())?;

    let stdout = run(
        root,
        &[
            "evaluate", "--pred", "all.txt", "--gt", "all.txt", "--out", "eval",
        ],
    )?;
    let lines: Vec<String> = stdout.lines().map(str::to_string).collect();
    let rows = table_cells(&lines)?;
    for row in &rows {
        ensure!(
            row.len() == 4 && row.iter().all(|c| is_percent(c)),
            "row {row:?} is not four percentages"
        );
    }
    ensure!(
        root.join("eval/report.json").is_file(),
        "no JSON report written"
    );
    Ok(())
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    check: fn() -> Check,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            id: 1,
            name: "IoU against raster counting",
            budget: Duration::from_secs(1),
            check: c1_iou,
        },
        Criterion {
            id: 2,
            name: "encode/decode round trip",
            budget: Duration::from_secs(1),
            check: c2_round_trip,
        },
        Criterion {
            id: 3,
            name: "loss micro-oracle and gradients",
            budget: Duration::from_secs(1),
            check: c3_loss,
        },
        Criterion {
            id: 4,
            name: "anchor assignment reference",
            budget: Duration::from_secs(5),
            check: c4_assignment,
        },
        Criterion {
            id: 5,
            name: "NMS reference",
            budget: Duration::from_secs(5),
            check: c5_nms,
        },
        Criterion {
            id: 6,
            name: "RoI pooling brute force",
            budget: Duration::from_secs(5),
            check: c6_roi_pool,
        },
        Criterion {
            id: 7,
            name: "metrics oracles",
            budget: Duration::from_secs(10),
            check: c7_metrics,
        },
        Criterion {
            id: 8,
            name: "augmentation grid",
            budget: Duration::from_secs(30),
            check: c8_augmentation,
        },
        Criterion {
            id: 9,
            name: "fake card generator",
            budget: Duration::from_secs(30),
            check: c9_fakegen,
        },
        Criterion {
            id: 10,
            name: "binary16 conversion",
            budget: Duration::from_secs(5),
            check: c10_half,
        },
        Criterion {
            id: 11,
            name: "CLI pipeline",
            budget: Duration::from_secs(60),
            check: c11_pipeline,
        },
    ];
    let only: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in &criteria {
        let label = format!("criterion {:>2}", c.id);
        if !only.is_empty()
            && !only
                .iter()
                .any(|o| c.name.contains(o.as_str()) || *o == c.id.to_string())
        {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let result = result.and_then(|()| {
            if elapsed <= c.budget {
                Ok(())
            } else {
                Err(format!("took {elapsed:.2?}, budget {:?}", c.budget))
            }
        });
        match result {
            Ok(()) => println!("PASS {label}: {} ({elapsed:.2?})", c.name),
            Err(e) => {
                failed += 1;
                println!("FAIL {label}: {} ({elapsed:.2?}): {e}", c.name);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
