//! Hierarchical shifted-window transformer encoder.
//!
//! Everything stays in `[n, c, h, w]` layout: per-token linear layers are
//! pointwise convolutions and layer norms normalize over channels.
//!
//! The encoder returns five levels. `SF1` is the patch embedding before any
//! attention block; `SF2..SF5` are the outputs of the four stages, where
//! every stage after the first starts with a 2x2 patch merge.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use mcnet_tensor::nn::{Conv2d, LayerNorm, Linear};
use mcnet_tensor::{impl_module, ConvSpec, Graph, Initializer, Module, Param, Scalar, Var, WindowSpec};
use serde::{Deserialize, Serialize};

use crate::checkpoint::read_tensors;
use crate::error::{McError, Result};

/// Stride of each pyramid level relative to the input image.
pub const STRIDES: [usize; 5] = [4, 4, 8, 16, 32];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depths: [usize; 4],
    pub num_heads: [usize; 4],
    pub window_size: usize,
    pub input_size: usize,
    pub mlp_ratio: usize,
    #[serde(default)]
    pub pretrained_path: Option<PathBuf>,
}

impl BackboneConfig {
    /// Swin-B at 384x384 with 12x12 windows.
    pub fn swin_b() -> Self {
        BackboneConfig {
            patch_size: 4,
            embed_dim: 128,
            depths: [2, 2, 18, 2],
            num_heads: [4, 8, 16, 32],
            window_size: 12,
            input_size: 384,
            mlp_ratio: 4,
            pretrained_path: None,
        }
    }

    /// One block per stage at 96x96; runs on a CPU in well under a second.
    pub fn toy() -> Self {
        BackboneConfig {
            patch_size: 4,
            embed_dim: 32,
            depths: [1, 1, 1, 1],
            num_heads: [2, 4, 8, 16],
            window_size: 6,
            input_size: 96,
            mlp_ratio: 4,
            pretrained_path: None,
        }
    }

    /// Smallest useful preset, for training smoke tests at 64x64.
    pub fn tiny() -> Self {
        BackboneConfig {
            patch_size: 4,
            embed_dim: 16,
            depths: [1, 1, 1, 1],
            num_heads: [1, 2, 4, 8],
            window_size: 4,
            input_size: 64,
            mlp_ratio: 2,
            pretrained_path: None,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "swin_b" => Ok(Self::swin_b()),
            "toy" => Ok(Self::toy()),
            "tiny" => Ok(Self::tiny()),
            other => Err(McError::Config(format!("unknown backbone preset `{other}` (swin_b, toy, tiny)"))),
        }
    }

    /// Channels of SF1..SF5.
    pub fn channels(&self) -> [usize; 5] {
        let c = self.embed_dim;
        [c, c, 2 * c, 4 * c, 8 * c]
    }

    /// Side length of SF1..SF5 for a square input of `size` pixels.
    pub fn sizes(&self, size: usize) -> [usize; 5] {
        STRIDES.map(|s| size * self.patch_size / 4 / s)
    }

    pub fn stage_dim(&self, stage: usize) -> usize {
        self.embed_dim << stage
    }

    /// Effective window and whether shifting is allowed in `stage`, given
    /// the configured input size. A grid no larger than the window is
    /// attended as a single unshifted window.
    pub fn stage_window(&self, stage: usize) -> (usize, bool) {
        let grid = (self.input_size / self.patch_size) >> stage;
        if grid <= self.window_size {
            (grid.max(1), false)
        } else {
            (self.window_size, true)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(McError::Config(m));
        if self.patch_size == 0 || self.embed_dim == 0 || self.window_size == 0 || self.mlp_ratio == 0 {
            return bad("patch_size, embed_dim, window_size and mlp_ratio must be positive".into());
        }
        let align = self.patch_size * 8;
        if self.input_size == 0 || !self.input_size.is_multiple_of(align) {
            return bad(format!("input_size {} must be a positive multiple of {align}", self.input_size));
        }
        for s in 0..4 {
            let (d, h) = (self.stage_dim(s), self.num_heads[s]);
            if h == 0 || d % h != 0 {
                return bad(format!("stage {s}: {d} channels not divisible by {h} heads"));
            }
            if self.depths[s] == 0 {
                return bad(format!("stage {s}: depth must be at least 1"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PatchEmbed<T> {
    pub proj: Conv2d<T>,
    pub norm: LayerNorm<T>,
}

impl_module!(PatchEmbed { proj, norm });

impl<T: Scalar> PatchEmbed<T> {
    fn new(init: &mut Initializer, patch: usize, dim: usize) -> Self {
        let fan_in = 3 * patch * patch;
        let mut proj = Conv2d::new(init, 3, dim, patch, ConvSpec { stride: patch, padding: 0, dilation: 1 }, true);
        proj.weight.set(init.uniform(vec![dim, 3, patch, patch], 1.0 / (fan_in as f64).sqrt()));
        PatchEmbed { proj, norm: LayerNorm::new(dim) }
    }

    pub fn forward(&self, g: &Graph<T>, image: &Var<T>) -> Result<Var<T>> {
        let [_, c, h, w] = image.dims4()?;
        let p = self.proj.weight.shape()[2];
        if c != 3 || h % p != 0 || w % p != 0 {
            return Err(McError::Dimension(format!(
                "patch embedding needs 3 channels and sides divisible by {p}, got {c}x{h}x{w}"
            )));
        }
        let x = self.proj.forward(g, image)?;
        Ok(self.norm.forward(g, &x)?)
    }
}

#[derive(Clone, Debug)]
pub struct WindowAttention<T> {
    pub qkv: Linear<T>,
    pub proj: Linear<T>,
    pub relative_position_bias_table: Param<T>,
    pub heads: usize,
}

impl_module!(WindowAttention { qkv, proj, relative_position_bias_table });

#[derive(Clone, Debug)]
pub struct Mlp<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl_module!(Mlp { fc1, fc2 });

/// Pre-norm transformer block: windowed attention then MLP, both residual.
#[derive(Clone, Debug)]
pub struct SwinBlock<T> {
    pub norm1: LayerNorm<T>,
    pub attn: WindowAttention<T>,
    pub norm2: LayerNorm<T>,
    pub mlp: Mlp<T>,
    pub window: usize,
    pub shift: usize,
}

impl_module!(SwinBlock { norm1, attn, norm2, mlp });

impl<T: Scalar> SwinBlock<T> {
    pub fn new(init: &mut Initializer, dim: usize, heads: usize, window: usize, shift: bool, mlp_ratio: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(McError::Config(format!("{dim} channels not divisible by {heads} heads")));
        }
        let span = 2 * window - 1;
        Ok(SwinBlock {
            norm1: LayerNorm::new(dim),
            attn: WindowAttention {
                qkv: Linear::new(init, dim, 3 * dim, true),
                proj: Linear::new(init, dim, dim, true),
                relative_position_bias_table: Param::new(init.trunc_normal(vec![span * span, heads], 0.02)),
                heads,
            },
            norm2: LayerNorm::new(dim),
            mlp: Mlp { fc1: Linear::new(init, dim, mlp_ratio * dim, true), fc2: Linear::new(init, mlp_ratio * dim, dim, true) },
            window,
            shift: if shift { window / 2 } else { 0 },
        })
    }

    pub fn forward(&self, g: &Graph<T>, x: &Var<T>) -> Result<Var<T>> {
        let [_, _, h, w] = x.dims4()?;
        let ws = self.window;
        let (pb, pr) = ((ws - h % ws) % ws, (ws - w % ws) % ws);
        let y = self.norm1.forward(g, x)?;
        let y = g.pad_bottom_right(&y, pb, pr)?;
        let qkv = self.attn.qkv.forward(g, &y)?;
        let table = g.param(&self.attn.relative_position_bias_table);
        let spec = WindowSpec { heads: self.attn.heads, window: ws, shift: self.shift };
        let a = g.window_attention(&qkv, &table, spec)?;
        let a = self.attn.proj.forward(g, &a)?;
        let a = g.crop_top_left(&a, h, w)?;
        let x = g.add(x, &a)?;
        let y = self.norm2.forward(g, &x)?;
        let y = self.mlp.fc1.forward(g, &y)?;
        let y = self.mlp.fc2.forward(g, &g.gelu(&y))?;
        Ok(g.add(&x, &y)?)
    }
}

/// 2x2 neighbourhood concatenation, normalization and projection to twice
/// the channels.
#[derive(Clone, Debug)]
pub struct PatchMerging<T> {
    pub norm: LayerNorm<T>,
    pub reduction: Linear<T>,
}

impl_module!(PatchMerging { norm, reduction });

impl<T: Scalar> PatchMerging<T> {
    pub fn new(init: &mut Initializer, dim: usize) -> Self {
        PatchMerging { norm: LayerNorm::new(4 * dim), reduction: Linear::new(init, 4 * dim, 2 * dim, false) }
    }

    pub fn forward(&self, g: &Graph<T>, x: &Var<T>) -> Result<Var<T>> {
        let [_, _, h, w] = x.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(McError::Dimension(format!("patch merging needs even sides, got {h}x{w}")));
        }
        let y = g.space_to_depth2(x)?;
        let y = self.norm.forward(g, &y)?;
        Ok(self.reduction.forward(g, &y)?)
    }
}

#[derive(Clone, Debug)]
pub struct Stage<T> {
    pub merge: Option<PatchMerging<T>>,
    pub blocks: Vec<SwinBlock<T>>,
}

impl_module!(Stage { merge, blocks });

/// SF1..SF5 of one modality.
#[derive(Clone, Debug)]
pub struct FeaturePyramid<T> {
    pub levels: Vec<Var<T>>,
}

impl<T: Scalar> FeaturePyramid<T> {
    /// `(channels, height, width)` of every level.
    pub fn shapes(&self) -> Vec<(usize, usize, usize)> {
        self.levels.iter().map(|v| (v.shape()[1], v.shape()[2], v.shape()[3])).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Backbone<T> {
    pub patch_embed: PatchEmbed<T>,
    pub stages: Vec<Stage<T>>,
    pub config: BackboneConfig,
}

impl_module!(Backbone { patch_embed, stages });

impl<T: Scalar> Backbone<T> {
    pub fn new(config: &BackboneConfig, init: &mut Initializer) -> Result<Self> {
        config.validate()?;
        let patch_embed = PatchEmbed::new(init, config.patch_size, config.embed_dim);
        let mut stages = Vec::with_capacity(4);
        for s in 0..4 {
            let dim = config.stage_dim(s);
            let merge = (s > 0).then(|| PatchMerging::new(init, dim / 2));
            let (window, can_shift) = config.stage_window(s);
            let blocks = (0..config.depths[s])
                .map(|b| SwinBlock::new(init, dim, config.num_heads[s], window, can_shift && b % 2 == 1, config.mlp_ratio))
                .collect::<Result<_>>()?;
            stages.push(Stage { merge, blocks });
        }
        Ok(Backbone { patch_embed, stages, config: config.clone() })
    }

    /// Builds the encoder and, if the config names a checkpoint, loads it
    /// strictly.
    pub fn from_config(config: &BackboneConfig, init: &mut Initializer) -> Result<Self> {
        let mut b = Self::new(config, init)?;
        if let Some(path) = &config.pretrained_path {
            b.load_pretrained(path, true)?;
        }
        Ok(b)
    }

    /// `image: [n, 3, H, W]` to SF1..SF5.
    pub fn encode(&self, g: &Graph<T>, image: &Var<T>) -> Result<FeaturePyramid<T>> {
        let mut x = self.patch_embed.forward(g, image)?;
        let mut levels = vec![x.clone()];
        for stage in &self.stages {
            if let Some(m) = &stage.merge {
                x = m.forward(g, &x)?;
            }
            for b in &stage.blocks {
                x = b.forward(g, &x)?;
            }
            levels.push(x.clone());
        }
        Ok(FeaturePyramid { levels })
    }

    /// Loads weights from a safetensors file holding either this crate's
    /// parameter names or the reference Swin names (see
    /// [`translate_swin_key`]). In strict mode any missing, unexpected or
    /// mis-shaped tensor is an error.
    pub fn load_pretrained(&mut self, path: &Path, strict: bool) -> Result<LoadReport> {
        let (tensors, _) = read_tensors::<T>(path)?;
        let mut report = LoadReport::default();
        let mut by_name = HashMap::new();
        let mut order = Vec::new();
        for (key, t) in tensors {
            match translate_swin_key(&key) {
                Some(name) => {
                    order.push(key.clone());
                    by_name.insert(name, (key, t));
                }
                None => report.ignored.push(key),
            }
        }
        let mut first_shape_error = None;
        self.visit_mut("", &mut |name, p| match by_name.remove(name) {
            Some((_, t)) if t.shape() == p.shape() => {
                p.set(t);
                report.loaded.push(name.to_string());
            }
            Some((key, t)) => {
                if first_shape_error.is_none() {
                    first_shape_error = Some(McError::WeightShape {
                        key: key.clone(),
                        expected: p.shape().to_vec(),
                        found: t.shape().to_vec(),
                    });
                }
                report.mismatched.push(key);
            }
            None => report.missing.push(name.to_string()),
        });
        let leftover: BTreeSet<_> = by_name.into_values().map(|(k, _)| k).collect();
        report.unexpected = order.into_iter().filter(|k| leftover.contains(k)).collect();
        if strict {
            if let Some(e) = first_shape_error {
                return Err(e);
            }
            if !report.missing.is_empty() || !report.unexpected.is_empty() {
                return Err(McError::Checkpoint {
                    path: path.to_path_buf(),
                    msg: format!("missing keys {:?}, unexpected keys {:?}", report.missing, report.unexpected),
                });
            }
        }
        Ok(report)
    }
}

/// Outcome of [`Backbone::load_pretrained`].
#[derive(Debug, Default, Clone, PartialEq)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    /// Parameters with no tensor in the file.
    pub missing: Vec<String>,
    /// File tensors that map to no parameter.
    pub unexpected: Vec<String>,
    pub mismatched: Vec<String>,
    /// Buffers and heads that are skipped by design.
    pub ignored: Vec<String>,
}

impl LoadReport {
    pub fn unmatched(&self) -> usize {
        self.missing.len() + self.unexpected.len() + self.mismatched.len()
    }
}

/// Maps a checkpoint key to a parameter path of [`Backbone`], or `None` for
/// tensors that are deliberately skipped.
///
/// | file key                          | parameter                    |
/// |-----------------------------------|------------------------------|
/// | `patch_embed.*`                   | `patch_embed.*`              |
/// | `layers.{i}.blocks.{j}.*`         | `stages.{i}.blocks.{j}.*`    |
/// | `layers.{i}.downsample.*`         | `stages.{i+1}.merge.*`       |
/// | `*.relative_position_index`, `*.attn_mask`, `norm.*`, `head.*` | skipped |
///
/// Keys already in parameter form pass through; a leading `backbone.` or
/// `model.` is stripped.
pub fn translate_swin_key(key: &str) -> Option<String> {
    let key = key.strip_prefix("backbone.").or_else(|| key.strip_prefix("model.")).unwrap_or(key);
    if key.ends_with("relative_position_index") || key.ends_with("attn_mask") {
        return None;
    }
    if key.starts_with("norm.") || key.starts_with("head.") {
        return None;
    }
    if key.starts_with("patch_embed.") || key.starts_with("stages.") {
        return Some(key.to_string());
    }
    let rest = key.strip_prefix("layers.")?;
    let (idx, rest) = rest.split_once('.')?;
    let i: usize = idx.parse().ok()?;
    if let Some(tail) = rest.strip_prefix("downsample.") {
        return Some(format!("stages.{}.merge.{tail}", i + 1));
    }
    rest.starts_with("blocks.").then(|| format!("stages.{i}.{rest}"))
}
