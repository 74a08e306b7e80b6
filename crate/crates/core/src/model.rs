//! The full two-stream network.
//!
//! ```text
//! SF_m            = backbone_m(image_m)
//! LF_m            = interaction(SF_rgb, SF_t)
//! agg_m, first_m  = dec_m(LF_m)
//! DF_rgb, DF_t    = sdc(agg_rgb, agg_t)
//! logits_m        = dec_m(LF_m + DF_m)              same decoder instance
//! logits_fusion   = head(cat(logits_rgb, logits_t))
//! ```

use std::collections::HashMap;

use mcnet_tensor::{impl_module, Graph, Initializer, Module, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig};
use crate::error::{McError, Result};
use crate::fusion::{superpose, Decoder, FusionHead, Sdc, SdcFeatures, SDC_CHANNELS};
use crate::interaction::{AttentionVariant, Interaction, InteractionKnobs, InteractionLevel, SQUEEZE_CHANNELS};

/// Parameter-name prefixes of the two encoders.
pub const BACKBONE_PREFIXES: [&str; 2] = ["backbone_rgb.", "backbone_t."];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub attention: AttentionVariant,
    /// `false` swaps the dilated chain for plain 3x3 convolutions.
    #[serde(default = "default_true")]
    pub sdc: bool,
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    pub fn new(backbone: BackboneConfig) -> Self {
        ModelConfig { backbone, attention: AttentionVariant::Proposed, sdc: true }
    }

    /// Short name of the ablation setting.
    pub fn variant_name(&self) -> String {
        if self.sdc {
            self.attention.name().to_string()
        } else {
            format!("{}+no_sdc", self.attention.name())
        }
    }
}

/// Test switches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Knobs {
    pub interaction: InteractionKnobs,
    /// Replace every deep interactive feature by zero.
    pub zero_deep_features: bool,
}

/// Logits and probabilities of the three heads, each `[n, 1, H, W]`.
#[derive(Clone, Debug)]
pub struct SaliencyOutput<T> {
    pub logits_rgb: Var<T>,
    pub logits_t: Var<T>,
    pub logits_fusion: Var<T>,
    /// First-pass decoder logits.
    pub first_rgb: Var<T>,
    pub first_t: Var<T>,
    pub pred_rgb: Var<T>,
    pub pred_t: Var<T>,
    pub pred_fusion: Var<T>,
}

#[derive(Clone, Debug)]
pub struct McNet<T> {
    pub backbone_rgb: Backbone<T>,
    pub backbone_t: Backbone<T>,
    pub interaction: Interaction<T>,
    pub dec_rgb: Decoder<T>,
    pub dec_t: Decoder<T>,
    pub sdc: Sdc<T>,
    pub head: FusionHead<T>,
    pub config: ModelConfig,
    pub knobs: Knobs,
}

impl_module!(McNet { backbone_rgb, backbone_t, interaction, dec_rgb, dec_t, sdc, head });

/// Parameter counts by group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCounts {
    pub backbone: usize,
    pub other: usize,
}

impl ParamCounts {
    pub fn total(&self) -> usize {
        self.backbone + self.other
    }
}

pub fn is_backbone_param(name: &str) -> bool {
    BACKBONE_PREFIXES.iter().any(|p| name.starts_with(p))
}

fn tap_levels<T: Scalar>(g: &Graph<T>, name: &str, vs: &[Var<T>]) {
    for (i, v) in vs.iter().enumerate() {
        g.tap(format!("{name}{}", i + 2), v);
    }
}

impl<T: Scalar> McNet<T> {
    /// Builds the network; encoders load their checkpoint when configured.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut root = Initializer::new(seed);
        let mut init = |salt| root.fork(salt);
        let bc = &config.backbone;
        let ch = bc.channels();
        Ok(McNet {
            backbone_rgb: Backbone::from_config(bc, &mut init(1))?,
            backbone_t: Backbone::from_config(bc, &mut init(2))?,
            interaction: Interaction::new(&mut init(3), [ch[1], ch[2], ch[3], ch[4]], config.attention),
            dec_rgb: Decoder::new(&mut init(4)),
            dec_t: Decoder::new(&mut init(5)),
            sdc: Sdc::new(&mut init(6), config.sdc),
            head: FusionHead::new(&mut init(7)),
            config: config.clone(),
            knobs: Knobs::default(),
        })
    }

    pub fn param_counts(&self) -> ParamCounts {
        let mut c = ParamCounts { backbone: 0, other: 0 };
        self.visit("", &mut |name, p| {
            if p.is_trainable() {
                if is_backbone_param(name) {
                    c.backbone += p.numel();
                } else {
                    c.other += p.numel();
                }
            }
        });
        c
    }

    /// `rgb: [n, 3, H, W]`, `thermal: [n, 1 | 3, H, W]`. Intermediates are
    /// recorded as taps when the graph has them enabled.
    pub fn forward(&self, g: &Graph<T>, rgb: &Var<T>, thermal: &Var<T>) -> Result<SaliencyOutput<T>> {
        let [n, c, h, w] = rgb.dims4()?;
        let [tn, tc, th, tw] = thermal.dims4()?;
        if c != 3 || (tn, th, tw) != (n, h, w) || !(tc == 1 || tc == 3) {
            return Err(McError::Dimension(format!("misaligned inputs: rgb {:?}, thermal {:?}", rgb.shape(), thermal.shape())));
        }
        let thermal = if tc == 1 { g.concat_channels(&[thermal, thermal, thermal])? } else { thermal.clone() };
        let sf_rgb = self.backbone_rgb.encode(g, rgb)?;
        let sf_t = self.backbone_t.encode(g, &thermal)?;
        g.tap("SF1_rgb", &sf_rgb.levels[0]);
        g.tap("SF1_t", &sf_t.levels[0]);
        tap_levels(g, "SF_rgb", &sf_rgb.levels[1..]);
        tap_levels(g, "SF_t", &sf_t.levels[1..]);

        let inter = self.interaction.forward(g, &sf_rgb.levels[1..], &sf_t.levels[1..], self.knobs.interaction)?;
        let (lf_rgb, lf_t) = (inter.lf_rgb(), inter.lf_t());
        tap_levels(g, "F_rgb", &inter.f_rgb);
        tap_levels(g, "F_t", &inter.f_t);
        tap_levels(g, "LF_rgb", &lf_rgb);
        tap_levels(g, "LF_t", &lf_t);

        let first_rgb = self.dec_rgb.forward(g, &lf_rgb, (h, w))?;
        let first_t = self.dec_t.forward(g, &lf_t, (h, w))?;
        let SdcFeatures { sdc_in, sdc_out, mut df_rgb, mut df_t } =
            self.sdc.forward(g, &first_rgb.aggregate, &first_t.aggregate)?;
        if self.knobs.zero_deep_features {
            for d in df_rgb.iter_mut().chain(df_t.iter_mut()) {
                *d = g.scale(d, T::zero());
            }
        }
        g.tap("SDC_in", &sdc_in);
        tap_levels(g, "SDC_out", &sdc_out);
        tap_levels(g, "DF_rgb", &df_rgb);
        tap_levels(g, "DF_t", &df_t);

        let second_rgb = self.dec_rgb.forward(g, &superpose(g, &lf_rgb, &df_rgb)?, (h, w))?;
        let second_t = self.dec_t.forward(g, &superpose(g, &lf_t, &df_t)?, (h, w))?;
        let logits_fusion = self.head.forward(g, &second_rgb.logits, &second_t.logits)?;
        Ok(SaliencyOutput {
            pred_rgb: g.sigmoid(&second_rgb.logits),
            pred_t: g.sigmoid(&second_t.logits),
            pred_fusion: g.sigmoid(&logits_fusion),
            logits_rgb: second_rgb.logits,
            logits_t: second_t.logits,
            logits_fusion,
            first_rgb: first_rgb.logits,
            first_t: first_t.logits,
        })
    }

    /// Multiply-accumulates of one inference pass on a `size x size` pair.
    pub fn macs(&self, size: usize) -> Result<u64> {
        let g = Graph::inference();
        let x = g.constant(Tensor::zeros(vec![1, 3, size, size]));
        self.forward(&g, &x, &x)?;
        Ok(g.macs())
    }

    /// Every parameter and buffer by name.
    pub fn state(&self) -> Vec<(String, Tensor<T>)> {
        self.named_params().into_iter().map(|(n, p)| (n, p.value().clone())).collect()
    }

    /// Replaces parameters and buffers by name. Every name must be present
    /// with the right shape.
    pub fn load_state(&mut self, state: &HashMap<String, Tensor<T>>) -> Result<()> {
        let mut err = None;
        let mut seen = 0;
        self.visit_mut("", &mut |name, p| {
            if err.is_some() {
                return;
            }
            match state.get(name) {
                None => err = Some(McError::Checkpoint { path: Default::default(), msg: format!("missing tensor `{name}`") }),
                Some(t) if t.shape() != p.shape() => {
                    err = Some(McError::WeightShape {
                        key: name.to_string(),
                        expected: p.shape().to_vec(),
                        found: t.shape().to_vec(),
                    })
                }
                Some(t) => {
                    p.set(t.clone());
                    seen += 1;
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if seen != state.len() {
            let known: std::collections::HashSet<String> = self.named_params().into_iter().map(|(n, _)| n).collect();
            let mut extra: Vec<&String> = state.keys().filter(|k| !known.contains(*k)).collect();
            extra.sort();
            return Err(McError::Checkpoint { path: Default::default(), msg: format!("unexpected tensors {extra:?}") });
        }
        Ok(())
    }

    /// The same network with the roles of the two streams exchanged:
    /// feeding it `(thermal, rgb)` yields the branch outputs swapped.
    pub fn mirrored(&self) -> Self {
        let mut m = self.clone();
        std::mem::swap(&mut m.backbone_rgb, &mut m.backbone_t);
        std::mem::swap(&mut m.dec_rgb, &mut m.dec_t);
        let it = &mut m.interaction;
        std::mem::swap(&mut it.squeeze_rgb, &mut it.squeeze_t);
        for level in &mut it.levels {
            mirror_level(level);
        }
        std::mem::swap(&mut m.sdc.head_rgb, &mut m.sdc.head_t);
        let half = SDC_CHANNELS / 2;
        let first = &mut m.sdc.blocks[0];
        let conv = match (&mut first.pre, &mut first.dilated) {
            (Some(pre), _) => &mut pre.conv,
            (None, d) => &mut d.conv,
        };
        let w = swap_ranges(conv.weight.value(), 1, 0, half, half);
        conv.weight.set(w);
        let w = swap_ranges(m.head.conv.conv.weight.value(), 1, 0, 1, 1);
        m.head.conv.conv.weight.set(w);
        m
    }
}

fn mirror_level<T: Scalar>(level: &mut InteractionLevel<T>) {
    std::mem::swap(&mut level.transform_rgb, &mut level.transform_t);
    std::mem::swap(&mut level.ca_rgb, &mut level.ca_t);
    std::mem::swap(&mut level.sa_rgb, &mut level.sa_t);
    std::mem::swap(&mut level.conv_rgb, &mut level.conv_t);
    // the shared feature becomes cat(prod, F̂_t, F̂_rgb)
    let c = SQUEEZE_CHANNELS;
    if let Some(ca) = &mut level.ca {
        let w = swap_ranges(ca.fc1.weight.value(), 1, c, 2 * c, c);
        ca.fc1.weight.set(w);
        let w = swap_ranges(ca.fc2.weight.value(), 0, c, 2 * c, c);
        ca.fc2.weight.set(w);
    }
    for conv in [&mut level.conv_rgb, &mut level.conv_t].into_iter().flatten() {
        let w = swap_ranges(conv.conv.weight.value(), 1, c, 2 * c, c);
        conv.conv.weight.set(w);
    }
}

/// Swaps index ranges `[a, a + len)` and `[b, b + len)` along `axis`.
fn swap_ranges<T: Scalar>(t: &Tensor<T>, axis: usize, a: usize, b: usize, len: usize) -> Tensor<T> {
    let shape = t.shape();
    let inner: usize = shape[axis + 1..].iter().product();
    let dim = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let src = |i: usize| {
        if (a..a + len).contains(&i) {
            i - a + b
        } else if (b..b + len).contains(&i) {
            i - b + a
        } else {
            i
        }
    };
    let mut out = t.clone();
    let (d, o) = (t.data(), out.data_mut());
    for p in 0..outer {
        for i in 0..dim {
            let (dst, s) = ((p * dim + i) * inner, (p * dim + src(i)) * inner);
            o[dst..dst + inner].copy_from_slice(&d[s..s + inner]);
        }
    }
    out
}
