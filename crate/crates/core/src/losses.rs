//! Loss kernels on probability maps `[n, 1, H, W]` and the composite
//! training objective.

use mcnet_tensor::{ConvSpec, Graph, Scalar, Tensor, Var};

use crate::error::{McError, Result};

pub const BCE_EPS: f64 = 1e-7;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const IOU_SMOOTH: f64 = 1.0;

fn same_shape<T: Scalar>(op: &str, a: &Var<T>, b: &Var<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(McError::Dimension(format!("{op}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    a.dims4()?;
    Ok(())
}

/// Mean binary cross-entropy; `target` may be soft.
pub fn bce<T: Scalar>(g: &Graph<T>, pred: &Var<T>, target: &Var<T>) -> Result<Var<T>> {
    same_shape("bce", pred, target)?;
    let eps = T::lit(BCE_EPS);
    let p = g.clamp(pred, eps, T::one() - eps)?;
    let pos = g.mul(target, &g.ln(&p))?;
    let neg = g.mul(&g.rsub_scalar(T::one(), target), &g.ln(&g.rsub_scalar(T::one(), &p)))?;
    let ll = g.add(&pos, &neg)?;
    Ok(g.scale(&g.mean_all(&ll), -T::one()))
}

/// Normalized 1-D Gaussian of length [`SSIM_WINDOW`].
pub fn gaussian_1d(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let raw: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// `[1, 1, k, k]` outer product of [`gaussian_1d`].
pub fn gaussian_window<T: Scalar>() -> Tensor<T> {
    let g = gaussian_1d(SSIM_WINDOW, SSIM_SIGMA);
    Tensor::from_fn(vec![1, 1, SSIM_WINDOW, SSIM_WINDOW], |i| T::lit(g[i / SSIM_WINDOW] * g[i % SSIM_WINDOW]))
}

/// Per-pixel SSIM map with a Gaussian window and zero padding outside the
/// image, so maps smaller than the window are still defined.
pub fn ssim_map<T: Scalar>(g: &Graph<T>, x: &Var<T>, y: &Var<T>) -> Result<Var<T>> {
    same_shape("ssim", x, y)?;
    if x.shape()[1] != 1 {
        return Err(McError::Dimension(format!("ssim expects one channel, got {:?}", x.shape())));
    }
    let win = g.constant(gaussian_window());
    let spec = ConvSpec::same(SSIM_WINDOW, 1);
    let blur = |v: &Var<T>| g.conv2d(v, &win, None, spec);
    let (mx, my) = (blur(x)?, blur(y)?);
    let (mxx, myy, mxy) = (g.mul(&mx, &mx)?, g.mul(&my, &my)?, g.mul(&mx, &my)?);
    let sxx = g.sub(&blur(&g.mul(x, x)?)?, &mxx)?;
    let syy = g.sub(&blur(&g.mul(y, y)?)?, &myy)?;
    let sxy = g.sub(&blur(&g.mul(x, y)?)?, &mxy)?;
    let (c1, c2) = (T::lit(SSIM_C1), T::lit(SSIM_C2));
    let two = T::lit(2.0);
    let num = g.mul(&g.add_scalar(&g.scale(&mxy, two), c1), &g.add_scalar(&g.scale(&sxy, two), c2))?;
    let den = g.mul(&g.add_scalar(&g.add(&mxx, &myy)?, c1), &g.add_scalar(&g.add(&sxx, &syy)?, c2))?;
    Ok(g.div(&num, &den)?)
}

/// `1 - mean(SSIM)`.
pub fn ssim_loss<T: Scalar>(g: &Graph<T>, pred: &Var<T>, target: &Var<T>) -> Result<Var<T>> {
    let m = ssim_map(g, pred, target)?;
    Ok(g.rsub_scalar(T::one(), &g.mean_all(&m)))
}

/// Soft IoU per sample, `1 - (I + 1) / (U + 1)`, averaged over the batch.
pub fn iou_loss<T: Scalar>(g: &Graph<T>, pred: &Var<T>, target: &Var<T>) -> Result<Var<T>> {
    same_shape("iou", pred, target)?;
    let smooth = T::lit(IOU_SMOOTH);
    let inter = g.sum_per_sample(&g.mul(pred, target)?)?;
    let total = g.add(&g.sum_per_sample(pred)?, &g.sum_per_sample(target)?)?;
    let union = g.sub(&total, &inter)?;
    let ratio = g.div(&g.add_scalar(&inter, smooth), &g.add_scalar(&union, smooth))?;
    Ok(g.rsub_scalar(T::one(), &g.mean_all(&ratio)))
}

/// BCE + SSIM, for the soft skeleton and contour targets.
pub fn branch_loss<T: Scalar>(g: &Graph<T>, pred: &Var<T>, target: &Var<T>) -> Result<Var<T>> {
    Ok(g.add(&bce(g, pred, target)?, &ssim_loss(g, pred, target)?)?)
}

/// BCE + SSIM + IoU against the full mask.
pub fn fusion_loss<T: Scalar>(g: &Graph<T>, pred: &Var<T>, target: &Var<T>) -> Result<Var<T>> {
    Ok(g.add(&branch_loss(g, pred, target)?, &iou_loss(g, pred, target)?)?)
}

/// Probability maps of the three heads.
#[derive(Clone, Debug)]
pub struct Predictions<T> {
    pub rgb: Var<T>,
    pub thermal: Var<T>,
    pub fusion: Var<T>,
}

/// Targets for the three heads.
#[derive(Clone, Debug)]
pub struct Targets<T> {
    pub gt: Var<T>,
    pub skeleton: Var<T>,
    pub contour: Var<T>,
}

#[derive(Clone, Debug)]
pub struct LossBundle<T> {
    pub l_rgb: Var<T>,
    pub l_thermal: Var<T>,
    pub l_fusion: Var<T>,
    pub total: Var<T>,
}

impl<T: Scalar> LossBundle<T> {
    /// `(l_rgb, l_thermal, l_fusion, total)` as plain numbers.
    pub fn values(&self) -> [f64; 4] {
        [&self.l_rgb, &self.l_thermal, &self.l_fusion, &self.total].map(|v| v.value().item().to_f64_lossy())
    }
}

/// RGB branch against the skeleton, thermal branch against the contour,
/// fused map against the full mask; the total is their plain sum.
pub fn total_loss<T: Scalar>(g: &Graph<T>, preds: &Predictions<T>, targets: &Targets<T>) -> Result<LossBundle<T>> {
    let l_rgb = branch_loss(g, &preds.rgb, &targets.skeleton)?;
    let l_thermal = branch_loss(g, &preds.thermal, &targets.contour)?;
    let l_fusion = fusion_loss(g, &preds.fusion, &targets.gt)?;
    let total = g.add(&g.add(&l_rgb, &l_thermal)?, &l_fusion)?;
    Ok(LossBundle { l_rgb, l_thermal, l_fusion, total })
}
