use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use cardet_cli::{config::RunConfig, Input, Outcome};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cardet", version, about = "Namecard detection toolkit")]
struct Cli {
    /// Flat `key = value` configuration file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Extra `key=value` settings, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GridFlags {
    /// Comma-separated brightness factors.
    #[arg(long)]
    brightness: Option<String>,
    #[arg(long)]
    color: Option<String>,
    #[arg(long)]
    contrast: Option<String>,
    #[arg(long)]
    sharpness: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write every photometric variant of each image.
    Augment {
        /// Index file (one image path per line) or a single image.
        input: PathBuf,
        #[command(flatten)]
        grid: GridFlags,
    },
    /// Generate synthetic namecards.
    Generate {
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long)]
        width: Option<u32>,
        #[arg(long)]
        height: Option<u32>,
        #[arg(long)]
        items: Option<usize>,
        /// Comma-separated subset of English,Number.
        #[arg(long)]
        classes: Option<String>,
    },
    /// Score predictions against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Correctness IoU threshold.
        #[arg(long)]
        iou: Option<f64>,
    },
    /// Confidence filtering and non-maximum suppression of predictions.
    Nms {
        /// Index file or a single prediction file.
        input: PathBuf,
        #[arg(long)]
        confidence: Option<f64>,
        #[arg(long)]
        nms_iou: Option<f64>,
        /// Suppress across classes.
        #[arg(long)]
        class_agnostic: bool,
    },
    /// Convert an f32 tensor file to f16.
    Quantize {
        input: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Draw class-coloured boxes onto images.
    Visualize {
        /// Index file or a single image.
        input: PathBuf,
    },
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    let mut flag = |key: &str, value: Option<String>| value.map_or(Ok(()), |v| cfg.set(key, &v));
    match &cli.command {
        Command::Augment { grid, .. } => {
            flag("brightness", grid.brightness.clone())?;
            flag("color", grid.color.clone())?;
            flag("contrast", grid.contrast.clone())?;
            flag("sharpness", grid.sharpness.clone())?;
        }
        Command::Generate {
            width,
            height,
            items,
            classes,
            ..
        } => {
            flag("card_width", width.map(|v| v.to_string()))?;
            flag("card_height", height.map(|v| v.to_string()))?;
            flag("card_items", items.map(|v| v.to_string()))?;
            flag("card_classes", classes.clone())?;
        }
        Command::Evaluate { iou, .. } => flag("correct_iou", iou.map(|v| v.to_string()))?,
        Command::Nms {
            confidence,
            nms_iou,
            class_agnostic,
            ..
        } => {
            flag("confidence", confidence.map(|v| v.to_string()))?;
            flag("nms_iou", nms_iou.map(|v| v.to_string()))?;
            if *class_agnostic {
                flag("class_aware_nms", Some("false".into()))?;
            }
        }
        Command::Quantize { .. } | Command::Visualize { .. } => {}
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Outcome> {
    let cfg = build_config(&cli)?;
    cardet_cli::init_threads(cfg.threads)?;
    match &cli.command {
        Command::Augment { input, .. } => cardet_cli::cmd_augment(&cfg, &Input::detect(input)),
        Command::Generate { count, .. } => cardet_cli::cmd_generate(&cfg, *count).map(|(o, _)| o),
        Command::Evaluate { pred, gt, .. } => {
            cardet_cli::cmd_evaluate(&cfg, pred, gt).map(|(o, _)| o)
        }
        Command::Nms { input, .. } => cardet_cli::cmd_nms(&cfg, &Input::detect(input)),
        Command::Quantize { input, output } => {
            cardet_cli::cmd_quantize(&cfg, input, output.as_deref()).map(|(o, _)| o)
        }
        Command::Visualize { input } => cardet_cli::cmd_visualize(&cfg, &Input::detect(input)),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => {
            for line in &outcome.stdout {
                println!("{line}");
            }
            for e in &outcome.errors {
                eprintln!("error: {e}");
            }
            if outcome.success() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
