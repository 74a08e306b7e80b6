//! `mcnet` subcommands: train, eval, predict, decouple, curves, features.

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use mcnet_core::checkpoint::read_metadata;
use mcnet_core::labels::decouple_directory;
use mcnet_core::metrics::{evaluate_dataset, report_row};
use mcnet_core::pipeline::{self, TrainConfig, TrainSummary};
use mcnet_core::{McError, Result};
use mcnet_tensor::Scalar;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "mcnet", version, about = "RGB-thermal salient object detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train from a key=value config file, or resume a checkpoint.
    Train(Box<TrainArgs>),
    /// Score a directory of saliency maps and write the report CSV.
    Eval(EvalArgs),
    /// Write saliency maps for every RGB/T pair under a directory.
    Predict(PredictArgs),
    /// Split ground-truth masks into skeleton and contour maps.
    Decouple(DecoupleArgs),
    /// Write PR and F-measure curves as CSV and plots.
    Curves(CurvesArgs),
    /// Dump intermediate feature maps as image grids.
    Features(FeaturesArgs),
}

#[derive(Args, Debug, Default)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from a checkpoint; only --stop-after may be combined with it.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    lr_backbone: Option<String>,
    #[arg(long)]
    lr_other: Option<String>,
    #[arg(long)]
    momentum: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    input_size: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// swin_b, toy or tiny.
    #[arg(long)]
    backbone: Option<String>,
    /// proposed, share, cross or non_interaction.
    #[arg(long)]
    attention: Option<String>,
    #[arg(long)]
    sdc: Option<String>,
    #[arg(long)]
    augment: Option<String>,
    #[arg(long)]
    shuffle: Option<String>,
    #[arg(long)]
    grad_clip: Option<String>,
    #[arg(long)]
    stop_after: Option<String>,
    #[arg(long)]
    pretrained: Option<String>,
    /// f32 or f64.
    #[arg(long)]
    dtype: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    checkpoint_dir: Option<String>,
}

impl TrainArgs {
    fn overrides(&self) -> Vec<(&'static str, &String)> {
        [
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("lr_backbone", &self.lr_backbone),
            ("lr_other", &self.lr_other),
            ("momentum", &self.momentum),
            ("weight_decay", &self.weight_decay),
            ("input_size", &self.input_size),
            ("seed", &self.seed),
            ("backbone_preset", &self.backbone),
            ("attention", &self.attention),
            ("sdc", &self.sdc),
            ("augment", &self.augment),
            ("shuffle", &self.shuffle),
            ("grad_clip", &self.grad_clip),
            ("stop_after_steps", &self.stop_after),
            ("pretrained_path", &self.pretrained),
            ("dtype", &self.dtype),
            ("dataset_root", &self.dataset),
            ("checkpoint_dir", &self.checkpoint_dir),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k, v)))
        .collect()
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "dataset")]
    dataset: String,
    #[arg(long, default_value = "MCNet")]
    method: String,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory holding RGB/ and T/.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the RGB and thermal branch maps.
    #[arg(long)]
    branches: bool,
}

#[derive(Args, Debug)]
struct DecoupleArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CurvesArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "curves")]
    prefix: String,
}

#[derive(Args, Debug)]
struct FeaturesArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated feature names; all when omitted.
    #[arg(long, value_delimiter = ',')]
    names: Vec<String>,
    /// Number of pairs to dump.
    #[arg(long, default_value_t = 1)]
    limit: usize,
    /// Print the available feature names and exit.
    #[arg(long)]
    list: bool,
}

/// Runs `mcnet` with `argv` (program name first) and returns the exit code.
pub fn run(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Configuration problems are usage errors; everything else is a data error.
pub fn exit_code(e: &McError) -> i32 {
    match e {
        McError::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Train(a) => train(*a),
        Command::Eval(a) => {
            let r = pipeline::evaluate(&a.pred, &a.gt, &a.out, &a.dataset, &a.method)?;
            report_problems(&r);
            println!("{}", report_row(&a.dataset, &a.method, &r));
            Ok(EXIT_OK)
        }
        Command::Predict(a) => match checkpoint_dtype(&a.checkpoint)?.as_str() {
            "f64" => predict::<f64>(&a),
            _ => predict::<f32>(&a),
        },
        Command::Decouple(a) => {
            let s = decouple_directory(&a.gt, &a.out)?;
            for (p, why) in &s.skipped {
                eprintln!("skipped {}: {why}", p.display());
            }
            println!("decoupled {} masks into {} files", s.processed, s.written.len());
            Ok(if s.skipped.is_empty() { EXIT_OK } else { EXIT_DATA })
        }
        Command::Curves(a) => {
            let r = evaluate_dataset(&a.pred, &a.gt)?;
            report_problems(&r);
            let files = pipeline::write_curves(&r, &a.out, &a.prefix)?;
            for p in [files.csv, files.pr_plot, files.f_plot] {
                println!("wrote {}", p.display());
            }
            Ok(EXIT_OK)
        }
        Command::Features(a) => match checkpoint_dtype(&a.checkpoint)?.as_str() {
            "f64" => features::<f64>(&a),
            _ => features::<f32>(&a),
        },
    }
}

fn report_problems(r: &mcnet_core::MetricsReport) {
    for name in &r.missing {
        eprintln!("unmatched: {name}");
    }
    for (name, why) in &r.failed {
        eprintln!("unreadable {name}: {why}");
    }
    for name in &r.resized {
        eprintln!("resized to ground-truth size: {name}");
    }
}

fn checkpoint_dtype(path: &Path) -> Result<String> {
    Ok(read_metadata(path)?.get("dtype").cloned().unwrap_or_else(|| "f32".into()))
}

fn train(a: TrainArgs) -> Result<i32> {
    let overrides = a.overrides();
    if let Some(ckpt) = &a.resume {
        let only_stop = overrides.iter().all(|(k, _)| *k == "stop_after_steps");
        if a.config.is_some() || !only_stop {
            return Err(McError::Config("--resume takes only --stop-after".into()));
        }
        let mut cfg = TrainConfig::default();
        if let Some(v) = &a.stop_after {
            cfg.set("stop_after_steps", v)?;
        }
        let summary = match checkpoint_dtype(ckpt)?.as_str() {
            "f64" => pipeline::resume::<f64>(ckpt, cfg.stop_after_steps)?,
            _ => pipeline::resume::<f32>(ckpt, cfg.stop_after_steps)?,
        };
        print_summary(&summary);
        return Ok(EXIT_OK);
    }
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    let summary = match cfg.dtype.as_str() {
        "f64" => pipeline::train::<f64>(&cfg)?,
        _ => pipeline::train::<f32>(&cfg)?,
    };
    print_summary(&summary);
    Ok(EXIT_OK)
}

fn print_summary(s: &TrainSummary) {
    println!(
        "params backbone={} other={} total={}; tensors backbone={} other={}",
        s.param_counts.backbone,
        s.param_counts.other,
        s.param_counts.total(),
        s.group_sizes.0,
        s.group_sizes.1
    );
    if let Some(r) = &s.last {
        println!("step {} epoch {}: l_rgb={:.4} l_thermal={:.4} l_fusion={:.4} total={:.4}", r.step, r.epoch, r.l_rgb, r.l_thermal, r.l_fusion, r.total);
    }
    println!("checkpoint {}", s.checkpoint.display());
    println!("log {}", s.log_path.display());
}

fn predict<T: Scalar>(a: &PredictArgs) -> Result<i32> {
    let (state, _) = pipeline::load_checkpoint::<T>(&a.checkpoint)?;
    let s = pipeline::predict(&state.model, &a.input, &a.out, a.branches)?;
    for (name, why) in &s.failed {
        eprintln!("failed {name}: {why}");
    }
    println!("wrote {} maps to {}", s.written.len(), a.out.display());
    Ok(if s.failed.is_empty() { EXIT_OK } else { EXIT_DATA })
}

fn features<T: Scalar>(a: &FeaturesArgs) -> Result<i32> {
    let (state, _) = pipeline::load_checkpoint::<T>(&a.checkpoint)?;
    if a.list {
        for n in pipeline::tap_names(&state.model)? {
            println!("{n}");
        }
        return Ok(EXIT_OK);
    }
    let (Some(input), Some(out)) = (&a.input, &a.out) else {
        return Err(McError::Config("features needs --input and --out (or --list)".into()));
    };
    let written = pipeline::dump_features(&state.model, input, out, &a.names, a.limit)?;
    println!("wrote {} feature grids to {}", written.len(), out.display());
    Ok(EXIT_OK)
}
