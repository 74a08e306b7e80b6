//! Top-down decoders, the serial dilated-convolution (SDC) block and the
//! fusion head.

use mcnet_tensor::nn::{Conv2d, ConvBnRelu};
use mcnet_tensor::{impl_module, ConvSpec, Graph, Initializer, Scalar, Var};

use crate::error::{McError, Result};
use crate::interaction::SQUEEZE_CHANNELS;

/// Dilation rates of the four SDC blocks, finest level first.
pub const SDC_DILATIONS: [usize; 4] = [1, 3, 5, 7];
pub const SDC_CHANNELS: usize = 2 * SQUEEZE_CHANNELS;
pub const HEAD_CHANNELS: usize = 16;

fn spatial(v: &Var<impl Scalar>) -> (usize, usize) {
    (v.shape()[2], v.shape()[3])
}

/// Aggregate feature at the finest level and full-resolution logits.
#[derive(Clone, Debug)]
pub struct DecoderOutput<T> {
    pub aggregate: Var<T>,
    pub logits: Var<T>,
}

/// Start at the coarsest level, then repeatedly upsample, add the next
/// finer level and convolve.
#[derive(Clone, Debug)]
pub struct Decoder<T> {
    pub top: ConvBnRelu<T>,
    /// One block per finer level, coarse to fine.
    pub fuse: Vec<ConvBnRelu<T>>,
    pub head: ConvBnRelu<T>,
    pub out: Conv2d<T>,
}

impl_module!(Decoder { top, fuse, head, out });

impl<T: Scalar> Decoder<T> {
    pub fn new(init: &mut Initializer) -> Self {
        let c = SQUEEZE_CHANNELS;
        Decoder {
            top: ConvBnRelu::new(init, c, c, 3, 1),
            fuse: (0..3).map(|_| ConvBnRelu::new(init, c, c, 3, 1)).collect(),
            head: ConvBnRelu::new(init, c, HEAD_CHANNELS, 3, 1),
            out: Conv2d::new(init, HEAD_CHANNELS, 1, 1, ConvSpec::default(), true),
        }
    }

    /// `levels` are finest first; logits are resized to `out_size`.
    pub fn forward(&self, g: &Graph<T>, levels: &[Var<T>], out_size: (usize, usize)) -> Result<DecoderOutput<T>> {
        if levels.len() != 4 {
            return Err(McError::Dimension(format!("decoder expects 4 levels, got {}", levels.len())));
        }
        let mut x = self.top.forward(g, &levels[3])?;
        for (block, lf) in self.fuse.iter().zip(levels[..3].iter().rev()) {
            let (h, w) = spatial(lf);
            let up = g.resize_bilinear(&x, h, w)?;
            x = block.forward(g, &g.add(&up, lf)?)?;
        }
        let y = self.out.forward(g, &self.head.forward(g, &x)?)?;
        let logits = g.resize_bilinear(&y, out_size.0, out_size.1)?;
        Ok(DecoderOutput { aggregate: x, logits })
    }
}

/// One scale of the SDC chain: `gamma x gamma` conv, 1x1 conv, then a 3x3
/// conv dilated by `gamma`. In the plain variant only a 3x3 conv remains.
#[derive(Clone, Debug)]
pub struct SdcBlock<T> {
    pub pre: Option<ConvBnRelu<T>>,
    pub point: Option<ConvBnRelu<T>>,
    pub dilated: ConvBnRelu<T>,
}

impl_module!(SdcBlock { pre, point, dilated });

impl<T: Scalar> SdcBlock<T> {
    pub fn dilated(init: &mut Initializer, gamma: usize) -> Self {
        let c = SDC_CHANNELS;
        SdcBlock {
            pre: Some(ConvBnRelu::new(init, c, c, gamma, 1)),
            point: Some(ConvBnRelu::new(init, c, c, 1, 1)),
            dilated: ConvBnRelu::new(init, c, c, 3, gamma),
        }
    }

    pub fn plain(init: &mut Initializer) -> Self {
        SdcBlock { pre: None, point: None, dilated: ConvBnRelu::new(init, SDC_CHANNELS, SDC_CHANNELS, 3, 1) }
    }

    pub fn forward(&self, g: &Graph<T>, x: &Var<T>) -> Result<Var<T>> {
        let mut y = x.clone();
        for m in [&self.pre, &self.point].into_iter().flatten() {
            y = m.forward(g, &y)?;
        }
        Ok(self.dilated.forward(g, &y)?)
    }
}

#[derive(Clone, Debug)]
pub struct SdcFeatures<T> {
    pub sdc_in: Var<T>,
    /// Outputs at strides 4, 8, 16, 32.
    pub sdc_out: Vec<Var<T>>,
    pub df_rgb: Vec<Var<T>>,
    pub df_t: Vec<Var<T>>,
}

/// Serial chain over the concatenated decoder aggregates, with max pooling
/// between scales and two 64-channel heads per scale.
#[derive(Clone, Debug)]
pub struct Sdc<T> {
    pub blocks: Vec<SdcBlock<T>>,
    pub head_rgb: Vec<ConvBnRelu<T>>,
    pub head_t: Vec<ConvBnRelu<T>>,
}

impl_module!(Sdc { blocks, head_rgb, head_t });

impl<T: Scalar> Sdc<T> {
    /// `dilated = false` builds the plain 3x3 ablation.
    pub fn new(init: &mut Initializer, dilated: bool) -> Self {
        let blocks =
            SDC_DILATIONS.iter().map(|&d| if dilated { SdcBlock::dilated(init, d) } else { SdcBlock::plain(init) }).collect();
        let head = |init: &mut Initializer| -> Vec<ConvBnRelu<T>> {
            (0..4).map(|_| ConvBnRelu::new(init, SDC_CHANNELS, SQUEEZE_CHANNELS, 3, 1)).collect()
        };
        let head_rgb = head(init);
        let head_t = head(init);
        Sdc { blocks, head_rgb, head_t }
    }

    pub fn forward(&self, g: &Graph<T>, agg_rgb: &Var<T>, agg_t: &Var<T>) -> Result<SdcFeatures<T>> {
        if agg_rgb.shape() != agg_t.shape() {
            return Err(McError::Dimension(format!("sdc: {:?} vs {:?}", agg_rgb.shape(), agg_t.shape())));
        }
        let sdc_in = g.concat_channels(&[agg_rgb, agg_t])?;
        let mut x = sdc_in.clone();
        let mut sdc_out = Vec::with_capacity(4);
        for (i, block) in self.blocks.iter().enumerate() {
            if i > 0 {
                x = g.max_pool2d(&x, 2, 2)?;
            }
            x = block.forward(g, &x)?;
            sdc_out.push(x.clone());
        }
        let df_rgb = self.head_rgb.iter().zip(&sdc_out).map(|(h, s)| h.forward(g, s)).collect::<Result<Vec<_>, _>>()?;
        let df_t = self.head_t.iter().zip(&sdc_out).map(|(h, s)| h.forward(g, s)).collect::<Result<Vec<_>, _>>()?;
        Ok(SdcFeatures { sdc_in, sdc_out, df_rgb, df_t })
    }
}

/// `conv3x3(2 -> 16) + conv1x1(16 -> 1)` over the two branch logit maps.
#[derive(Clone, Debug)]
pub struct FusionHead<T> {
    pub conv: ConvBnRelu<T>,
    pub out: Conv2d<T>,
}

impl_module!(FusionHead { conv, out });

impl<T: Scalar> FusionHead<T> {
    pub fn new(init: &mut Initializer) -> Self {
        FusionHead {
            conv: ConvBnRelu::new(init, 2, HEAD_CHANNELS, 3, 1),
            out: Conv2d::new(init, HEAD_CHANNELS, 1, 1, ConvSpec::default(), true),
        }
    }

    pub fn forward(&self, g: &Graph<T>, logits_rgb: &Var<T>, logits_t: &Var<T>) -> Result<Var<T>> {
        let x = g.concat_channels(&[logits_rgb, logits_t])?;
        Ok(self.out.forward(g, &self.conv.forward(g, &x)?)?)
    }
}

/// `LF^i + DF^i` per level; sizes must agree.
pub fn superpose<T: Scalar>(g: &Graph<T>, lf: &[Var<T>], df: &[Var<T>]) -> Result<Vec<Var<T>>> {
    if lf.len() != df.len() {
        return Err(McError::Dimension(format!("{} LF levels vs {} DF levels", lf.len(), df.len())));
    }
    lf.iter()
        .zip(df)
        .map(|(l, d)| {
            if l.shape() != d.shape() {
                return Err(McError::Dimension(format!("LF {:?} vs DF {:?}", l.shape(), d.shape())));
            }
            Ok(g.add(l, d)?)
        })
        .collect()
}
