//! Squeezing of both pyramids to 64 channels and the attention-based
//! interaction between the RGB and thermal streams.
//!
//! Per level `i` (SF2..SF5):
//!
//! ```text
//! F_m    = squeeze_m(SF_m)                     m in {rgb, t}
//! F̂_m    = ConvBnRelu3x3_m(F_m)
//! F_fuse = cat(F̂_rgb * F̂_t, F̂_rgb, F̂_t)        192 channels
//! Att_rgb = S_att_t(F_t)   + Conv3_rgb(C_att(F_fuse))
//! Att_t   = S_att_rgb(F_rgb) + Conv3_t(C_att(F_fuse))
//! LF_m    = F_m + Att_m
//! ```

use mcnet_tensor::nn::{Conv2d, ConvBnRelu, Linear};
use mcnet_tensor::{impl_module, ConvSpec, Graph, Initializer, Scalar, Var};
use serde::{Deserialize, Serialize};

use crate::error::{McError, Result};

pub const SQUEEZE_CHANNELS: usize = 64;
pub const SHARED_CHANNELS: usize = 3 * SQUEEZE_CHANNELS;
pub const CA_REDUCTION: usize = 16;
pub const SA_KERNEL: usize = 7;

/// Interaction design, selectable for ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionVariant {
    /// Channel attention on the shared feature, spatial attention across
    /// modalities.
    #[default]
    Proposed,
    /// Channel then spatial attention on the shared feature, split by two
    /// 3x3 convolutions.
    Share,
    /// Channel then spatial attention per modality, added to the other one.
    Cross,
    /// Channel then spatial attention per modality, added to itself.
    NonInteraction,
}

impl AttentionVariant {
    pub const ALL: [AttentionVariant; 4] =
        [AttentionVariant::Proposed, AttentionVariant::Share, AttentionVariant::Cross, AttentionVariant::NonInteraction];

    pub fn name(self) -> &'static str {
        match self {
            AttentionVariant::Proposed => "proposed",
            AttentionVariant::Share => "share",
            AttentionVariant::Cross => "cross",
            AttentionVariant::NonInteraction => "non_interaction",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| McError::Config(format!("unknown attention variant `{s}` (proposed, share, cross, non_interaction)")))
    }

    fn uses_shared_feature(self) -> bool {
        matches!(self, AttentionVariant::Proposed | AttentionVariant::Share)
    }
}

/// 3x3 then 1x1 convolution to [`SQUEEZE_CHANNELS`].
#[derive(Clone, Debug)]
pub struct Squeeze<T> {
    pub conv3: ConvBnRelu<T>,
    pub conv1: ConvBnRelu<T>,
}

impl_module!(Squeeze { conv3, conv1 });

impl<T: Scalar> Squeeze<T> {
    pub fn new(init: &mut Initializer, cin: usize) -> Self {
        Squeeze {
            conv3: ConvBnRelu::new(init, cin, SQUEEZE_CHANNELS, 3, 1),
            conv1: ConvBnRelu::new(init, SQUEEZE_CHANNELS, SQUEEZE_CHANNELS, 1, 1),
        }
    }

    pub fn forward(&self, g: &Graph<T>, x: &Var<T>) -> Result<Var<T>> {
        let y = self.conv3.forward(g, x)?;
        Ok(self.conv1.forward(g, &y)?)
    }
}

/// `sigmoid(MLP(maxpool(x)) + MLP(avgpool(x))) * x` with one MLP shared by
/// both pooled vectors.
#[derive(Clone, Debug)]
pub struct ChannelAttention<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl_module!(ChannelAttention { fc1, fc2 });

impl<T: Scalar> ChannelAttention<T> {
    pub fn new(init: &mut Initializer, channels: usize) -> Self {
        let hidden = (channels / CA_REDUCTION).max(1);
        ChannelAttention { fc1: Linear::new(init, channels, hidden, false), fc2: Linear::new(init, hidden, channels, false) }
    }

    fn mlp(&self, g: &Graph<T>, v: &Var<T>) -> Result<Var<T>> {
        let h = g.relu(&self.fc1.forward(g, v)?);
        Ok(self.fc2.forward(g, &h)?)
    }

    /// Per-channel gate `[n, c, 1, 1]`.
    pub fn gate(&self, g: &Graph<T>, x: &Var<T>) -> Result<Var<T>> {
        let max = self.mlp(g, &g.max_axes(x, &[2, 3])?)?;
        let avg = self.mlp(g, &g.mean_axes(x, &[2, 3])?)?;
        Ok(g.sigmoid(&g.add(&max, &avg)?))
    }

    pub fn forward(&self, g: &Graph<T>, x: &Var<T>) -> Result<Var<T>> {
        Ok(g.mul(&self.gate(g, x)?, x)?)
    }
}

/// `sigmoid(conv7x7(cat(max_c(x), mean_c(x)))) * x`.
#[derive(Clone, Debug)]
pub struct SpatialAttention<T> {
    pub conv: Conv2d<T>,
}

impl_module!(SpatialAttention { conv });

impl<T: Scalar> SpatialAttention<T> {
    pub fn new(init: &mut Initializer) -> Self {
        SpatialAttention { conv: Conv2d::new(init, 2, 1, SA_KERNEL, ConvSpec::same(SA_KERNEL, 1), true) }
    }

    /// Spatial gate `[n, 1, h, w]`.
    pub fn gate(&self, g: &Graph<T>, x: &Var<T>) -> Result<Var<T>> {
        let pooled = g.concat_channels(&[&g.max_axes(x, &[1])?, &g.mean_axes(x, &[1])?])?;
        Ok(g.sigmoid(&self.conv.forward(g, &pooled)?))
    }

    pub fn forward(&self, g: &Graph<T>, x: &Var<T>) -> Result<Var<T>> {
        Ok(g.mul(&self.gate(g, x)?, x)?)
    }
}

/// Test switches that cut parts of the interaction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InteractionKnobs {
    /// Replace both attention maps by zero, so `LF == F`.
    pub zero_attention: bool,
    /// Drop the shared-feature term from both attention maps.
    pub zero_shared_path: bool,
    /// Replace the transformed thermal feature by zero.
    pub zero_thermal_transform: bool,
}

/// Intermediates of one level.
#[derive(Clone, Debug)]
pub struct LevelOutput<T> {
    pub f_hat_rgb: Option<Var<T>>,
    pub f_hat_t: Option<Var<T>>,
    pub f_fuse: Option<Var<T>>,
    pub c_att: Option<Var<T>>,
    pub att_rgb: Var<T>,
    pub att_t: Var<T>,
    pub lf_rgb: Var<T>,
    pub lf_t: Var<T>,
}

/// Parameters of one pyramid level. Which fields exist depends on the
/// variant.
#[derive(Clone, Debug)]
pub struct InteractionLevel<T> {
    pub transform_rgb: Option<ConvBnRelu<T>>,
    pub transform_t: Option<ConvBnRelu<T>>,
    /// Channel attention on the shared feature.
    pub ca: Option<ChannelAttention<T>>,
    /// Spatial attention on the shared feature (`Share`).
    pub sa_shared: Option<SpatialAttention<T>>,
    /// Per-modality channel attention (`Cross`, `NonInteraction`).
    pub ca_rgb: Option<ChannelAttention<T>>,
    pub ca_t: Option<ChannelAttention<T>>,
    /// Spatial attention applied to the RGB / thermal feature.
    pub sa_rgb: Option<SpatialAttention<T>>,
    pub sa_t: Option<SpatialAttention<T>>,
    /// 192 -> 64 projections of the shared path.
    pub conv_rgb: Option<ConvBnRelu<T>>,
    pub conv_t: Option<ConvBnRelu<T>>,
    pub variant: AttentionVariant,
}

impl_module!(InteractionLevel { transform_rgb, transform_t, ca, sa_shared, ca_rgb, ca_t, sa_rgb, sa_t, conv_rgb, conv_t });

impl<T: Scalar> InteractionLevel<T> {
    pub fn new(init: &mut Initializer, variant: AttentionVariant) -> Self {
        use AttentionVariant::*;
        let c = SQUEEZE_CHANNELS;
        let shared = variant.uses_shared_feature();
        let per_modality = matches!(variant, Cross | NonInteraction);
        InteractionLevel {
            transform_rgb: shared.then(|| ConvBnRelu::new(init, c, c, 3, 1)),
            transform_t: shared.then(|| ConvBnRelu::new(init, c, c, 3, 1)),
            ca: shared.then(|| ChannelAttention::new(init, SHARED_CHANNELS)),
            sa_shared: (variant == Share).then(|| SpatialAttention::new(init)),
            ca_rgb: per_modality.then(|| ChannelAttention::new(init, c)),
            ca_t: per_modality.then(|| ChannelAttention::new(init, c)),
            sa_rgb: (variant != Share).then(|| SpatialAttention::new(init)),
            sa_t: (variant != Share).then(|| SpatialAttention::new(init)),
            conv_rgb: shared.then(|| ConvBnRelu::new(init, SHARED_CHANNELS, c, 3, 1)),
            conv_t: shared.then(|| ConvBnRelu::new(init, SHARED_CHANNELS, c, 3, 1)),
            variant,
        }
    }

    /// `cat(F̂_rgb * F̂_t, F̂_rgb, F̂_t)`.
    pub fn shared_fuse(g: &Graph<T>, f_hat_rgb: &Var<T>, f_hat_t: &Var<T>) -> Result<Var<T>> {
        let prod = g.mul(f_hat_rgb, f_hat_t)?;
        Ok(g.concat_channels(&[&prod, f_hat_rgb, f_hat_t])?)
    }

    pub fn forward(&self, g: &Graph<T>, f_rgb: &Var<T>, f_t: &Var<T>, knobs: InteractionKnobs) -> Result<LevelOutput<T>> {
        if f_rgb.shape() != f_t.shape() {
            return Err(McError::Dimension(format!("interaction: {:?} vs {:?}", f_rgb.shape(), f_t.shape())));
        }
        let missing = || McError::Config(format!("{} interaction is missing a module", self.variant.name()));
        let mut out = LevelOutput {
            f_hat_rgb: None,
            f_hat_t: None,
            f_fuse: None,
            c_att: None,
            att_rgb: f_rgb.clone(),
            att_t: f_t.clone(),
            lf_rgb: f_rgb.clone(),
            lf_t: f_t.clone(),
        };
        let (att_rgb, att_t) = match self.variant {
            AttentionVariant::Proposed | AttentionVariant::Share => {
                let fr = self.transform_rgb.as_ref().ok_or_else(missing)?.forward(g, f_rgb)?;
                let mut ft = self.transform_t.as_ref().ok_or_else(missing)?.forward(g, f_t)?;
                if knobs.zero_thermal_transform {
                    ft = g.scale(&ft, T::zero());
                }
                let fuse = Self::shared_fuse(g, &fr, &ft)?;
                let mut c_att = self.ca.as_ref().ok_or_else(missing)?.forward(g, &fuse)?;
                out.f_hat_rgb = Some(fr);
                out.f_hat_t = Some(ft);
                out.f_fuse = Some(fuse);
                out.c_att = Some(c_att.clone());
                if let Some(sa) = &self.sa_shared {
                    c_att = sa.forward(g, &c_att)?;
                }
                let mut shared_rgb = self.conv_rgb.as_ref().ok_or_else(missing)?.forward(g, &c_att)?;
                let mut shared_t = self.conv_t.as_ref().ok_or_else(missing)?.forward(g, &c_att)?;
                if knobs.zero_shared_path {
                    shared_rgb = g.scale(&shared_rgb, T::zero());
                    shared_t = g.scale(&shared_t, T::zero());
                }
                if self.variant == AttentionVariant::Share {
                    (shared_rgb, shared_t)
                } else {
                    let cross_rgb = self.sa_t.as_ref().ok_or_else(missing)?.forward(g, f_t)?;
                    let cross_t = self.sa_rgb.as_ref().ok_or_else(missing)?.forward(g, f_rgb)?;
                    (g.add(&cross_rgb, &shared_rgb)?, g.add(&cross_t, &shared_t)?)
                }
            }
            AttentionVariant::Cross | AttentionVariant::NonInteraction => {
                let own = |ca: &Option<ChannelAttention<T>>, sa: &Option<SpatialAttention<T>>, x: &Var<T>| -> Result<Var<T>> {
                    let y = ca.as_ref().ok_or_else(missing)?.forward(g, x)?;
                    sa.as_ref().ok_or_else(missing)?.forward(g, &y)
                };
                let a_rgb = own(&self.ca_rgb, &self.sa_rgb, f_rgb)?;
                let a_t = own(&self.ca_t, &self.sa_t, f_t)?;
                if self.variant == AttentionVariant::Cross {
                    (a_t, a_rgb)
                } else {
                    (a_rgb, a_t)
                }
            }
        };
        let (att_rgb, att_t) = if knobs.zero_attention {
            (g.scale(&att_rgb, T::zero()), g.scale(&att_t, T::zero()))
        } else {
            (att_rgb, att_t)
        };
        out.lf_rgb = g.add(f_rgb, &att_rgb)?;
        out.lf_t = g.add(f_t, &att_t)?;
        out.att_rgb = att_rgb;
        out.att_t = att_t;
        Ok(out)
    }
}

/// Squeeze and interaction for levels 2..5.
#[derive(Clone, Debug)]
pub struct Interaction<T> {
    pub squeeze_rgb: Vec<Squeeze<T>>,
    pub squeeze_t: Vec<Squeeze<T>>,
    pub levels: Vec<InteractionLevel<T>>,
}

impl_module!(Interaction { squeeze_rgb, squeeze_t, levels });

/// Squeezed and interacted features of both modalities, finest level first.
#[derive(Clone, Debug)]
pub struct InteractionPyramid<T> {
    pub f_rgb: Vec<Var<T>>,
    pub f_t: Vec<Var<T>>,
    pub levels: Vec<LevelOutput<T>>,
}

impl<T: Scalar> InteractionPyramid<T> {
    pub fn lf_rgb(&self) -> Vec<Var<T>> {
        self.levels.iter().map(|l| l.lf_rgb.clone()).collect()
    }

    pub fn lf_t(&self) -> Vec<Var<T>> {
        self.levels.iter().map(|l| l.lf_t.clone()).collect()
    }
}

impl<T: Scalar> Interaction<T> {
    /// `channels` are those of SF2..SF5.
    pub fn new(init: &mut Initializer, channels: [usize; 4], variant: AttentionVariant) -> Self {
        Interaction {
            squeeze_rgb: channels.iter().map(|&c| Squeeze::new(init, c)).collect(),
            squeeze_t: channels.iter().map(|&c| Squeeze::new(init, c)).collect(),
            levels: (0..4).map(|_| InteractionLevel::new(init, variant)).collect(),
        }
    }

    pub fn squeeze(&self, g: &Graph<T>, sf_rgb: &[Var<T>], sf_t: &[Var<T>]) -> Result<[Vec<Var<T>>; 2]> {
        if sf_rgb.len() != 4 || sf_t.len() != 4 {
            return Err(McError::Dimension(format!("expected 4 levels, got {} and {}", sf_rgb.len(), sf_t.len())));
        }
        let f_rgb = self.squeeze_rgb.iter().zip(sf_rgb).map(|(s, x)| s.forward(g, x)).collect::<Result<Vec<_>>>()?;
        let f_t = self.squeeze_t.iter().zip(sf_t).map(|(s, x)| s.forward(g, x)).collect::<Result<Vec<_>>>()?;
        Ok([f_rgb, f_t])
    }

    /// `sf_*` are SF2..SF5 of each modality.
    pub fn forward(&self, g: &Graph<T>, sf_rgb: &[Var<T>], sf_t: &[Var<T>], knobs: InteractionKnobs) -> Result<InteractionPyramid<T>> {
        let [f_rgb, f_t] = self.squeeze(g, sf_rgb, sf_t)?;
        let levels = self
            .levels
            .iter()
            .zip(f_rgb.iter().zip(&f_t))
            .map(|(l, (r, t))| l.forward(g, r, t, knobs))
            .collect::<Result<Vec<_>>>()?;
        Ok(InteractionPyramid { f_rgb, f_t, levels })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mcnet_tensor::{Module, Tensor};

    fn rand(init: &mut Initializer, shape: [usize; 4]) -> Tensor<f64> {
        init.uniform(shape.to_vec(), 1.0)
    }

    #[test]
    fn variant_names_round_trip() {
        for v in AttentionVariant::ALL {
            assert_eq!(AttentionVariant::parse(v.name()).unwrap(), v);
        }
        assert!(AttentionVariant::parse("both").is_err());
    }

    #[test]
    fn channel_gate_of_constant_channels() {
        let mut init = Initializer::new(3);
        let ca = ChannelAttention::<f64>::new(&mut init, 2);
        let g = Graph::inference();
        let x = g.constant(Tensor::new(vec![1, 2, 2, 2], vec![0.5, 0.5, 0.5, 0.5, -1.0, -1.0, -1.0, -1.0]).unwrap());
        let gate = ca.gate(&g, &x).unwrap();
        let (w1, w2) = (ca.fc1.weight.value().data(), ca.fc2.weight.value().data());
        let hidden = (w1[0] * 0.5 - w1[1]).max(0.0);
        for (c, &w) in w2.iter().enumerate() {
            let expect = mcnet_tensor::ops::elementwise::sigmoid(2.0 * w * hidden);
            assert!((gate.value().data()[c] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn spatial_gate_on_constant_input_matches_hand_convolution() {
        let mut init = Initializer::new(4);
        let sa = SpatialAttention::<f64>::new(&mut init);
        let g = Graph::inference();
        let x = g.constant(Tensor::full(vec![1, 4, 3, 3], 0.7));
        let gate = sa.gate(&g, &x).unwrap();
        assert_eq!(gate.shape(), &[1, 1, 3, 3]);
        // zero padding: each pixel sees only the taps that land inside
        let k = sa.conv.weight.value();
        let b = sa.conv.bias.as_ref().unwrap().value().data()[0];
        for y in 0..3 {
            for x in 0..3 {
                let mut acc = b;
                for sy in 0..3 {
                    for sx in 0..3 {
                        let (ky, kx) = (sy + 3 - y, sx + 3 - x);
                        acc += 0.7 * (k.at4(0, 0, ky, kx) + k.at4(0, 1, ky, kx));
                    }
                }
                let expect = mcnet_tensor::ops::elementwise::sigmoid(acc);
                assert!((gate.value().at4(0, 0, y, x) - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn shared_fuse_swaps_last_slices() {
        let mut init = Initializer::new(5);
        let g = Graph::inference();
        let a = g.constant(rand(&mut init, [1, 64, 4, 4]));
        let b = g.constant(rand(&mut init, [1, 64, 4, 4]));
        let ab = InteractionLevel::shared_fuse(&g, &a, &b).unwrap();
        let ba = InteractionLevel::shared_fuse(&g, &b, &a).unwrap();
        assert_eq!(ab.shape(), &[1, 192, 4, 4]);
        let slice = |v: &Var<f64>, i: usize| v.value().data()[i * 1024..(i + 1) * 1024].to_vec();
        assert_eq!(slice(&ab, 0), slice(&ba, 0));
        assert_eq!(slice(&ab, 1), slice(&ba, 2));
        assert_eq!(slice(&ab, 2), slice(&ba, 1));
    }

    #[test]
    fn variants_build_the_documented_modules() {
        let mut init = Initializer::new(6);
        let counts: Vec<usize> =
            AttentionVariant::ALL.iter().map(|&v| InteractionLevel::<f32>::new(&mut init, v).num_params()).collect();
        assert!(counts[0] != counts[1] && counts[0] != counts[2]);
        assert_eq!(counts[2], counts[3]);
    }
}
