//! Training, checkpointing, prediction, evaluation and feature dumps.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use mcnet_tensor::nn::apply_updates;
use mcnet_tensor::{DType, Gradients, Graph, Module, Scalar, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::checkpoint::{read_tensors, write_atomic, write_tensors, FORMAT_KEY, FORMAT_NAME};
use crate::data::{load_pair, scan_dataset, scan_inputs, worker_count, Batch, Loader};
use crate::error::{io_err, McError, Result};
use crate::imageio::{quantize, resize_bilinear, save, write_gray};
use crate::interaction::AttentionVariant;
use crate::losses::{total_loss, Predictions, Targets};
use crate::metrics::{aggregate, curves_csv, score_image, write_report, MetricsReport, Pair};
use crate::model::{is_backbone_param, McNet, ModelConfig, ParamCounts};

pub const LOG_FILE: &str = "loss_log.csv";
pub const LOG_HEADER: &str = "epoch,step,l_rgb,l_thermal,l_fusion,total";
pub const LAST_CHECKPOINT: &str = "last.safetensors";
pub const MODEL_PREFIX: &str = "model.";
pub const OPTIM_PREFIX: &str = "optim.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_backbone: f64,
    pub lr_other: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub input_size: usize,
    pub seed: u64,
    pub backbone_preset: String,
    pub attention: AttentionVariant,
    pub sdc: bool,
    pub augment: bool,
    pub shuffle: bool,
    /// Global gradient-norm limit; off when `None`.
    pub grad_clip: Option<f64>,
    /// Stop (with a checkpoint) once this many steps have run in total.
    pub stop_after_steps: Option<usize>,
    pub pretrained_path: Option<PathBuf>,
    /// `f32` or `f64`.
    pub dtype: String,
    pub dataset_root: PathBuf,
    pub checkpoint_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 48,
            batch_size: 16,
            lr_backbone: 0.005,
            lr_other: 0.05,
            momentum: 0.9,
            weight_decay: 0.0005,
            input_size: 384,
            seed: 0,
            backbone_preset: "swin_b".into(),
            attention: AttentionVariant::Proposed,
            sdc: true,
            augment: true,
            shuffle: true,
            grad_clip: None,
            stop_after_steps: None,
            pretrained_path: None,
            dtype: "f32".into(),
            dataset_root: PathBuf::from("data/train"),
            checkpoint_dir: PathBuf::from("checkpoints"),
        }
    }
}

fn parse_num<N: std::str::FromStr>(key: &str, value: &str) -> Result<N> {
    value.parse().map_err(|_| McError::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(McError::Config(format!("`{key}`: expected a boolean, got `{value}`"))),
    }
}

fn parse_optional<N: std::str::FromStr>(key: &str, value: &str) -> Result<Option<N>> {
    if value.is_empty() || value == "none" {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 19] = [
        "epochs",
        "batch_size",
        "lr_backbone",
        "lr_other",
        "momentum",
        "weight_decay",
        "input_size",
        "seed",
        "backbone_preset",
        "attention",
        "sdc",
        "augment",
        "shuffle",
        "grad_clip",
        "stop_after_steps",
        "pretrained_path",
        "dtype",
        "dataset_root",
        "checkpoint_dir",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "epochs" => self.epochs = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "lr_backbone" => self.lr_backbone = parse_num(key, v)?,
            "lr_other" => self.lr_other = parse_num(key, v)?,
            "momentum" => self.momentum = parse_num(key, v)?,
            "weight_decay" => self.weight_decay = parse_num(key, v)?,
            "input_size" => self.input_size = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "backbone_preset" => self.backbone_preset = v.to_string(),
            "attention" => self.attention = AttentionVariant::parse(v)?,
            "sdc" => self.sdc = parse_bool(key, v)?,
            "augment" => self.augment = parse_bool(key, v)?,
            "shuffle" => self.shuffle = parse_bool(key, v)?,
            "grad_clip" => self.grad_clip = parse_optional(key, v)?,
            "stop_after_steps" => self.stop_after_steps = parse_optional(key, v)?,
            "pretrained_path" => self.pretrained_path = (!v.is_empty() && v != "none").then(|| PathBuf::from(v)),
            "dtype" => self.dtype = v.to_string(),
            "dataset_root" => self.dataset_root = PathBuf::from(v),
            "checkpoint_dir" => self.checkpoint_dir = PathBuf::from(v),
            other => return Err(McError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Flat `key=value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| McError::Config(format!("line {}: expected key=value, got `{line}`", i + 1)))?;
            cfg.set(k, v).map_err(|e| McError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(McError::Config(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.lr_backbone > 0.0 && self.lr_other > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return bad("momentum must lie in [0, 1) and weight_decay must be non-negative");
        }
        if !matches!(self.dtype.as_str(), "f32" | "f64") {
            return bad("dtype must be f32 or f64");
        }
        self.model_config()?.backbone.validate()
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut backbone = BackboneConfig::preset(&self.backbone_preset)?;
        backbone.input_size = self.input_size;
        backbone.pretrained_path = self.pretrained_path.clone();
        Ok(ModelConfig { backbone, attention: self.attention, sdc: self.sdc })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// Triangular schedule: linear from 0 to `lr_max` over the first half of
/// `total` steps, back to 0 over the second half.
pub fn lr_schedule(step: usize, total: usize, lr_max: f64) -> Result<f64> {
    if total == 0 || step > total {
        return Err(McError::Config(format!("step {step} outside 0..={total}")));
    }
    let half = total as f64 / 2.0;
    let s = step as f64;
    Ok(if s <= half { lr_max * s / half } else { lr_max * (total as f64 - s) / half })
}

/// Momentum SGD with coupled weight decay:
/// `d = g + wd p; buf = m buf + d; p -= lr buf` (the first step sets
/// `buf = d`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    /// Momentum buffers by parameter name.
    pub buffers: BTreeMap<String, Tensor<T>>,
}

/// Names of trainable parameters in the encoder group and in the rest.
pub fn param_groups<T: Scalar>(model: &McNet<T>) -> (Vec<String>, Vec<String>) {
    let (mut backbone, mut other) = (Vec::new(), Vec::new());
    model.visit("", &mut |name, p| {
        if p.is_trainable() {
            if is_backbone_param(name) {
                backbone.push(name.to_string());
            } else {
                other.push(name.to_string());
            }
        }
    });
    (backbone, other)
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd { momentum, weight_decay, buffers: BTreeMap::new() }
    }

    /// One update; parameters without a gradient are left alone. Returns
    /// the global gradient norm before clipping.
    pub fn step<M: Module<T>>(
        &mut self,
        model: &mut M,
        grads: &Gradients<T>,
        lr: impl Fn(&str) -> f64,
        clip: Option<f64>,
    ) -> f64 {
        let mut sq = 0.0;
        model.visit("", &mut |_, p| {
            if let Some(g) = grads.param(p.id()) {
                sq += g.sq_norm().to_f64_lossy();
            }
        });
        let norm = sq.sqrt();
        let scale = match clip {
            Some(c) if norm > c => c / (norm + 1e-6),
            _ => 1.0,
        };
        let (m, wd) = (T::lit(self.momentum), T::lit(self.weight_decay));
        let scale = T::lit(scale);
        let buffers = &mut self.buffers;
        model.visit_mut("", &mut |name, p| {
            if !p.is_trainable() {
                return;
            }
            let Some(g) = grads.param(p.id()) else { return };
            let d = p.value().zip_map(g, |w, g| g * scale + wd * w).expect("gradient shape");
            let buf = match buffers.get_mut(name) {
                Some(b) => {
                    for (bv, dv) in b.data_mut().iter_mut().zip(d.data()) {
                        *bv = m * *bv + *dv;
                    }
                    b
                }
                None => buffers.entry(name.to_string()).or_insert(d),
            };
            let lr = T::lit(lr(name));
            for (w, b) in p.value_mut().data_mut().iter_mut().zip(buf.data()) {
                *w -= lr * *b;
            }
        });
        norm
    }
}

/// Everything needed to continue training.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub model: McNet<T>,
    pub optim: Sgd<T>,
    /// Steps completed so far.
    pub step: usize,
    pub config: TrainConfig,
}

pub fn dtype_name<T: Scalar>() -> &'static str {
    match T::DTYPE {
        DType::F32 => "f32",
        DType::F64 => "f64",
    }
}

/// Saves weights, optimizer buffers and the configuration snapshot.
pub fn save_checkpoint<T: Scalar>(path: &Path, state: &TrainState<T>, epoch: usize) -> Result<()> {
    let mut entries: Vec<(String, Tensor<T>)> =
        state.model.state().into_iter().map(|(n, t)| (format!("{MODEL_PREFIX}{n}"), t)).collect();
    entries.extend(state.optim.buffers.iter().map(|(n, t)| (format!("{OPTIM_PREFIX}{n}"), t.clone())));
    let mut meta = HashMap::new();
    meta.insert("epoch".to_string(), epoch.to_string());
    meta.insert("step".to_string(), state.step.to_string());
    meta.insert("config".to_string(), state.config.to_json());
    meta.insert("model_config".to_string(), serde_json::to_string(&state.model.config).expect("serializes"));
    meta.insert("dtype".to_string(), dtype_name::<T>().to_string());
    write_tensors(path, &entries, &meta)
}

/// Restores a [`TrainState`], converting weights to `T` if needed.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(TrainState<T>, usize)> {
    let err = |msg: String| McError::Checkpoint { path: path.to_path_buf(), msg };
    let (tensors, meta) = read_tensors::<T>(path)?;
    if meta.get(FORMAT_KEY).map(String::as_str) != Some(FORMAT_NAME) {
        return Err(err("not an mcnet checkpoint".into()));
    }
    let get = |k: &str| meta.get(k).ok_or_else(|| err(format!("missing metadata `{k}`")));
    let config: TrainConfig = serde_json::from_str(get("config")?).map_err(|e| err(e.to_string()))?;
    let mut model_config: ModelConfig = serde_json::from_str(get("model_config")?).map_err(|e| err(e.to_string()))?;
    model_config.backbone.pretrained_path = None;
    let step = get("step")?.parse().map_err(|_| err("bad step".into()))?;
    let epoch = get("epoch")?.parse().map_err(|_| err("bad epoch".into()))?;
    let mut model = McNet::new(&model_config, config.seed)?;
    let mut weights = HashMap::new();
    let mut optim = Sgd::new(config.momentum, config.weight_decay);
    for (name, t) in tensors {
        if let Some(n) = name.strip_prefix(MODEL_PREFIX) {
            weights.insert(n.to_string(), t);
        } else if let Some(n) = name.strip_prefix(OPTIM_PREFIX) {
            optim.buffers.insert(n.to_string(), t);
        } else {
            return Err(err(format!("unexpected tensor `{name}`")));
        }
    }
    model.load_state(&weights).map_err(|e| err(e.to_string()))?;
    Ok((TrainState { model, optim, step, config }, epoch))
}

/// One row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub l_rgb: f64,
    pub l_thermal: f64,
    pub l_fusion: f64,
    pub total: f64,
}

impl LogRow {
    pub fn to_csv(&self) -> String {
        format!("{},{},{},{},{},{}", self.epoch, self.step, self.l_rgb, self.l_thermal, self.l_fusion, self.total)
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || McError::Input(format!("bad log row `{line}`"));
        if f.len() != 6 {
            return Err(bad());
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
        Ok(LogRow {
            epoch: f[0].parse().map_err(|_| bad())?,
            step: f[1].parse().map_err(|_| bad())?,
            l_rgb: num(2)?,
            l_thermal: num(3)?,
            l_fusion: num(4)?,
            total: num(5)?,
        })
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines().skip(1).filter(|l| !l.trim().is_empty()).map(LogRow::parse).collect()
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps: usize,
    pub epochs_completed: usize,
    pub last: Option<LogRow>,
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub param_counts: ParamCounts,
    /// Trainable tensors in the encoder and in the other group.
    pub group_sizes: (usize, usize),
}

/// Tensors of a batch as graph constants, plus a forward pass and the loss.
fn batch_loss<T: Scalar>(
    g: &Graph<T>,
    model: &McNet<T>,
    batch: &Batch<T>,
) -> Result<crate::losses::LossBundle<T>> {
    let out = model.forward(g, &g.constant(batch.rgb.clone()), &g.constant(batch.thermal.clone()))?;
    let preds = Predictions { rgb: out.pred_rgb, thermal: out.pred_t, fusion: out.pred_fusion };
    let targets = Targets {
        gt: g.constant(batch.gt.clone()),
        skeleton: g.constant(batch.skeleton.clone()),
        contour: g.constant(batch.contour.clone()),
    };
    total_loss(g, &preds, &targets)
}

/// Trains from scratch under `cfg`.
pub fn train<T: Scalar>(cfg: &TrainConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let model = McNet::<T>::new(&cfg.model_config()?, cfg.seed)?;
    let state = TrainState { model, optim: Sgd::new(cfg.momentum, cfg.weight_decay), step: 0, config: cfg.clone() };
    fs::create_dir_all(&cfg.checkpoint_dir).map_err(io_err(&cfg.checkpoint_dir))?;
    let log = cfg.checkpoint_dir.join(LOG_FILE);
    write_atomic(&log, format!("{LOG_HEADER}\n").as_bytes())?;
    run::<T>(state)
}

/// Continues from a checkpoint. `stop_after_steps` can be replaced;
/// everything else comes from the checkpoint.
pub fn resume<T: Scalar>(checkpoint: &Path, stop_after_steps: Option<usize>) -> Result<TrainSummary> {
    let (mut state, _) = load_checkpoint::<T>(checkpoint)?;
    state.config.stop_after_steps = stop_after_steps;
    let log = state.config.checkpoint_dir.join(LOG_FILE);
    // drop rows written after the checkpoint was taken
    if log.exists() {
        let rows = read_log(&log)?;
        if rows.iter().any(|r| r.step > state.step) {
            let mut text = format!("{LOG_HEADER}\n");
            for r in rows.iter().filter(|r| r.step <= state.step) {
                text.push_str(&r.to_csv());
                text.push('\n');
            }
            write_atomic(&log, text.as_bytes())?;
        }
    } else {
        write_atomic(&log, format!("{LOG_HEADER}\n").as_bytes())?;
    }
    run::<T>(state)
}

fn run<T: Scalar>(mut state: TrainState<T>) -> Result<TrainSummary> {
    let cfg = state.config.clone();
    let manifest = scan_dataset(&cfg.dataset_root)?;
    let loader = Loader::<T>::new(manifest, cfg.input_size, cfg.batch_size, cfg.shuffle, cfg.augment, cfg.seed)?;
    let per_epoch = loader.steps_per_epoch();
    let total = per_epoch * cfg.epochs;
    let (backbone_names, other_names) = param_groups(&state.model);
    let n_trainable = state.model.named_params().iter().filter(|(_, p)| p.is_trainable()).count();
    if backbone_names.len() + other_names.len() != n_trainable || backbone_names.is_empty() || other_names.is_empty() {
        return Err(McError::Config("parameter groups do not partition the model".into()));
    }
    let log_path = cfg.checkpoint_dir.join(LOG_FILE);
    let mut log = fs::OpenOptions::new().append(true).open(&log_path).map_err(io_err(&log_path))?;
    let last_path = cfg.checkpoint_dir.join(LAST_CHECKPOINT);
    let mut last = None;
    let start_epoch = state.step / per_epoch;
    for epoch in start_epoch..cfg.epochs {
        let batches = loader.epoch_batches(epoch)?;
        for (b, indices) in batches.iter().enumerate() {
            if epoch * per_epoch + b < state.step {
                continue;
            }
            if cfg.stop_after_steps.is_some_and(|s| state.step >= s) {
                save_checkpoint(&last_path, &state, epoch)?;
                return Ok(summary(&state, epoch, last, last_path, log_path, backbone_names.len(), other_names.len()));
            }
            let batch = loader.batch(epoch, indices)?;
            let g = Graph::train();
            let losses = batch_loss(&g, &state.model, &batch)?;
            let [l_rgb, l_thermal, l_fusion, _] = losses.values();
            let total_f = l_rgb + l_thermal + l_fusion;
            if !total_f.is_finite() {
                let dump = cfg.checkpoint_dir.join(format!("nonfinite_step{}.txt", state.step));
                let _ = fs::write(&dump, batch.names.join("\n"));
                return Err(McError::NonFiniteLoss { step: state.step, names: batch.names.clone() });
            }
            let grads = g.backward(&losses.total)?;
            let updates = g.take_updates();
            let lr_b = lr_schedule(state.step, total, cfg.lr_backbone)?;
            let lr_o = lr_schedule(state.step, total, cfg.lr_other)?;
            state.optim.step(&mut state.model, &grads, |n| if is_backbone_param(n) { lr_b } else { lr_o }, cfg.grad_clip);
            apply_updates(&mut state.model, updates);
            state.step += 1;
            let row = LogRow { epoch: epoch + 1, step: state.step, l_rgb, l_thermal, l_fusion, total: total_f };
            writeln!(log, "{}", row.to_csv()).map_err(io_err(&log_path))?;
            last = Some(row);
        }
        save_checkpoint(&cfg.checkpoint_dir.join(format!("epoch_{:03}.safetensors", epoch + 1)), &state, epoch + 1)?;
        save_checkpoint(&last_path, &state, epoch + 1)?;
    }
    Ok(summary(&state, cfg.epochs, last, last_path, log_path, backbone_names.len(), other_names.len()))
}

fn summary<T: Scalar>(
    state: &TrainState<T>,
    epochs: usize,
    last: Option<LogRow>,
    checkpoint: PathBuf,
    log_path: PathBuf,
    n_backbone: usize,
    n_other: usize,
) -> TrainSummary {
    TrainSummary {
        steps: state.step,
        epochs_completed: epochs,
        last,
        checkpoint,
        log_path,
        param_counts: state.model.param_counts(),
        group_sizes: (n_backbone, n_other),
    }
}

/// Fused (and branch) probability maps `[S, S]` of a batch, in eval mode.
pub fn infer<T: Scalar>(model: &McNet<T>, batch: &Batch<T>) -> Result<Vec<[Tensor<T>; 3]>> {
    let g = Graph::inference();
    let out = model.forward(&g, &g.constant(batch.rgb.clone()), &g.constant(batch.thermal.clone()))?;
    let plane = |v: &mcnet_tensor::Var<T>, i: usize| -> Result<Tensor<T>> {
        let s = v.value().sample(i)?;
        let (h, w) = (s.shape()[2], s.shape()[3]);
        Ok(s.reshape(vec![h, w])?)
    };
    (0..batch.len()).map(|i| Ok([plane(&out.pred_fusion, i)?, plane(&out.pred_rgb, i)?, plane(&out.pred_t, i)?])).collect()
}

/// Scores the fused predictions of `model` on labelled in-memory batches.
pub fn evaluate_batches<T: Scalar>(model: &McNet<T>, batches: &[Batch<T>]) -> Result<MetricsReport> {
    let mut scores = Vec::new();
    for b in batches {
        let maps = infer(model, b)?;
        for (i, [fused, _, _]) in maps.iter().enumerate() {
            let gt = b.gt.sample(i)?;
            let (h, w) = (gt.shape()[2], gt.shape()[3]);
            let gt = gt.reshape(vec![h, w])?;
            scores.push((b.names[i].clone(), score_image(&Pair::new(fused, &gt)?)));
        }
    }
    scores.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(aggregate(&scores))
}

#[derive(Debug, Clone, Default)]
pub struct PredictSummary {
    pub written: Vec<PathBuf>,
    pub failed: Vec<(String, String)>,
}

/// Writes `<out>/<name>.png` for every pair under `input_root` (and
/// `<name>_rgb.png`, `<name>_t.png` with `branches`) at the original
/// resolution.
pub fn predict<T: Scalar>(model: &McNet<T>, input_root: &Path, out_dir: &Path, branches: bool) -> Result<PredictSummary> {
    let manifest = scan_inputs(input_root)?;
    let size = model.config.backbone.input_size;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| McError::Config(format!("worker pool: {e}")))?;
    let results: Vec<(String, Result<Vec<PathBuf>>)> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|e| {
                let run = || -> Result<Vec<PathBuf>> {
                    let pair = load_pair::<T>(e, size)?;
                    let (h, w) = pair.original_size;
                    let maps = infer(model, &Batch::from_pairs(std::slice::from_ref(&pair))?)?;
                    let [fused, rgb, t] = &maps[0];
                    let mut outs = vec![(format!("{}.png", e.name), fused)];
                    if branches {
                        outs.push((format!("{}_rgb.png", e.name), rgb));
                        outs.push((format!("{}_t.png", e.name), t));
                    }
                    outs.into_iter()
                        .map(|(file, map)| {
                            let path = out_dir.join(file);
                            write_gray(&path, &resize_bilinear(map, h, w))?;
                            Ok(path)
                        })
                        .collect()
                };
                (e.name.clone(), run())
            })
            .collect()
    });
    let mut summary = PredictSummary::default();
    for (name, r) in results {
        match r {
            Ok(paths) => summary.written.extend(paths),
            Err(e) => summary.failed.push((name, e.to_string())),
        }
    }
    Ok(summary)
}

/// Scores `pred_dir` against `gt_dir` and writes the one-row report.
pub fn evaluate(pred_dir: &Path, gt_dir: &Path, out_csv: &Path, dataset: &str, method: &str) -> Result<MetricsReport> {
    let report = crate::metrics::evaluate_dataset(pred_dir, gt_dir)?;
    write_report(out_csv, &[(dataset.to_string(), method.to_string(), report.clone())])?;
    Ok(report)
}

pub const PLOT_WIDTH: u32 = 320;
pub const PLOT_HEIGHT: u32 = 240;
const PLOT_MARGIN: u32 = 20;

/// A line plot of `(x, y)` in the unit square on a white canvas with a
/// black frame.
pub fn plot_unit_curve(points: &[(f64, f64)]) -> GrayImage {
    let mut img = GrayImage::from_pixel(PLOT_WIDTH, PLOT_HEIGHT, Luma([255]));
    let (x0, y0) = (PLOT_MARGIN as i64, PLOT_MARGIN as i64);
    let (x1, y1) = ((PLOT_WIDTH - PLOT_MARGIN) as i64, (PLOT_HEIGHT - PLOT_MARGIN) as i64);
    let mut put = |x: i64, y: i64, v: u8| {
        if x >= 0 && y >= 0 && x < PLOT_WIDTH as i64 && y < PLOT_HEIGHT as i64 {
            img.put_pixel(x as u32, y as u32, Luma([v]));
        }
    };
    for x in x0..=x1 {
        put(x, y0, 160);
        put(x, y1, 0);
    }
    for y in y0..=y1 {
        put(x0, y, 0);
        put(x1, y, 160);
    }
    let to_px = |(x, y): (f64, f64)| {
        let px = x0 as f64 + x.clamp(0.0, 1.0) * (x1 - x0) as f64;
        let py = y1 as f64 - y.clamp(0.0, 1.0) * (y1 - y0) as f64;
        (px.round() as i64, py.round() as i64)
    };
    for w in points.windows(2) {
        let ((ax, ay), (bx, by)) = (to_px(w[0]), to_px(w[1]));
        let n = (bx - ax).abs().max((by - ay).abs()).max(1);
        for i in 0..=n {
            let x = ax + (bx - ax) * i / n;
            let y = ay + (by - ay) * i / n;
            put(x, y, 0);
        }
    }
    img
}

#[derive(Debug, Clone)]
pub struct CurveFiles {
    pub csv: PathBuf,
    pub pr_plot: PathBuf,
    pub f_plot: PathBuf,
}

/// Writes `<prefix>_curves.csv`, `<prefix>_pr.png` (precision over recall)
/// and `<prefix>_f.png` (F-measure over threshold).
pub fn write_curves(report: &MetricsReport, out_dir: &Path, prefix: &str) -> Result<CurveFiles> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let csv = out_dir.join(format!("{prefix}_curves.csv"));
    write_atomic(&csv, curves_csv(report).as_bytes())?;
    let pr: Vec<(f64, f64)> = report.recall.iter().zip(&report.precision).map(|(&r, &p)| (r, p)).collect();
    let n = report.f_curve.len().saturating_sub(1).max(1) as f64;
    let f: Vec<(f64, f64)> = report.f_curve.iter().enumerate().map(|(t, &v)| (t as f64 / n, v)).collect();
    let pr_plot = out_dir.join(format!("{prefix}_pr.png"));
    let f_plot = out_dir.join(format!("{prefix}_f.png"));
    save(&pr_plot, &plot_unit_curve(&pr))?;
    save(&f_plot, &plot_unit_curve(&f))?;
    Ok(CurveFiles { csv, pr_plot, f_plot })
}

pub const GRID_SIDE: usize = 4;

/// The first 16 channels of `[c, h, w]` (sample 0 of a rank-4 tensor),
/// each min-max normalized, tiled 4 x 4.
pub fn feature_grid<T: Scalar>(x: &Tensor<T>) -> Result<GrayImage> {
    let [_, c, h, w] = x.dims4()?;
    let mut img = GrayImage::new((GRID_SIDE * w) as u32, (GRID_SIDE * h) as u32);
    for ch in 0..c.min(GRID_SIDE * GRID_SIDE) {
        let plane = &x.data()[ch * h * w..(ch + 1) * h * w];
        let (lo, hi) = plane.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            let v = v.to_f64_lossy();
            (lo.min(v), hi.max(v))
        });
        let span = if hi > lo { hi - lo } else { 1.0 };
        let (gy, gx) = (ch / GRID_SIDE, ch % GRID_SIDE);
        for y in 0..h {
            for xx in 0..w {
                let v = (plane[y * w + xx].to_f64_lossy() - lo) / span;
                img.put_pixel((gx * w + xx) as u32, (gy * h + y) as u32, Luma([quantize(v)]));
            }
        }
    }
    Ok(img)
}

/// Names of every intermediate that [`McNet::forward`] records.
pub fn tap_names<T: Scalar>(model: &McNet<T>) -> Result<Vec<String>> {
    let size = model.config.backbone.input_size;
    let g = Graph::inference();
    g.enable_taps();
    let x = g.constant(Tensor::zeros(vec![1, 3, size, size]));
    model.forward(&g, &x, &x)?;
    Ok(g.take_taps().into_iter().map(|(n, _)| n).collect())
}

/// Writes `<out>/<sample>_<tap>.png` grids for the first `limit` pairs
/// under `input_root`. An empty `names` selects every tap.
pub fn dump_features<T: Scalar>(
    model: &McNet<T>,
    input_root: &Path,
    out_dir: &Path,
    names: &[String],
    limit: usize,
) -> Result<Vec<PathBuf>> {
    let manifest = scan_inputs(input_root)?;
    let size = model.config.backbone.input_size;
    let known = tap_names(model)?;
    if let Some(bad) = names.iter().find(|n| !known.contains(n)) {
        return Err(McError::Config(format!("unknown feature `{bad}`; available: {}", known.join(", "))));
    }
    let mut written = Vec::new();
    for e in manifest.entries.iter().take(limit) {
        let pair = load_pair::<T>(e, size)?;
        let batch = Batch::from_pairs(std::slice::from_ref(&pair))?;
        let g = Graph::inference();
        g.enable_taps();
        model.forward(&g, &g.constant(batch.rgb), &g.constant(batch.thermal))?;
        for (name, t) in g.take_taps() {
            if names.is_empty() || names.contains(&name) {
                let path = out_dir.join(format!("{}_{name}.png", e.name));
                save(&path, &feature_grid(&t)?)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

/// One-line description of a model's size, for logs.
pub fn describe<T: Scalar>(model: &McNet<T>) -> Result<String> {
    let c = model.param_counts();
    let mut s = String::new();
    let _ = write!(
        s,
        "variant={} params_total={} params_backbone={} params_other={} macs={}",
        model.config.variant_name(),
        c.total(),
        c.backbone,
        c.other,
        model.macs(model.config.backbone.input_size)?
    );
    Ok(s)
}
