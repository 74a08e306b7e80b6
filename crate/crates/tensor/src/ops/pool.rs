use crate::error::{invalid, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Source index pairs and weights for one axis of a half-pixel bilinear
/// resize (`align_corners = false`).
fn bilinear_taps<T: Scalar>(input: usize, output: usize) -> Vec<(usize, usize, T)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = if i0 + 1 < input { i0 + 1 } else { i0 };
            let frac = (src - i0 as f64).clamp(0.0, 1.0);
            (i0, i1, T::lit(frac))
        })
        .collect()
}

/// Bilinear resize of every plane of `x: [planes, h, w]` (flattened) to
/// `(oh, ow)`. Shared by the graph op and plain-tensor image helpers.
pub fn resize_bilinear_planes<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let ty = bilinear_taps::<T>(h, oh);
    let tx = bilinear_taps::<T>(w, ow);
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (T::one() - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (T::one() - fx) + src[y1 * w + x1] * fx;
                dst[oy * ow + ox] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
    out
}

impl<T: Scalar> Graph<T> {
    /// Max pooling without padding; trailing rows/columns that do not fill
    /// a window are dropped.
    pub fn max_pool2d(&self, x: &Var<T>, kernel: usize, stride: usize) -> Result<Var<T>> {
        let [n, c, h, w] = x.dims4()?;
        if kernel == 0 || stride == 0 || h < kernel || w < kernel {
            return Err(invalid("max_pool2d", format!("kernel {kernel} stride {stride} on {h}x{w}")));
        }
        let ho = (h - kernel) / stride + 1;
        let wo = (w - kernel) / stride + 1;
        let xd = x.value().data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut arg = Vec::with_capacity(n * c * ho * wo);
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = T::neg_infinity();
                    let mut bi = base + oy * stride * w + ox * stride;
                    for i in 0..kernel {
                        for j in 0..kernel {
                            let idx = base + (oy * stride + i) * w + ox * stride + j;
                            if xd[idx] > best {
                                best = xd[idx];
                                bi = idx;
                            }
                        }
                    }
                    out.push(best);
                    arg.push(bi);
                }
            }
        }
        let y = Tensor::new(vec![n, c, ho, wo], out)?;
        Ok(self.record(y, &[x], move |go| {
            let mut gi = Tensor::zeros(vec![n, c, h, w]);
            let gd = gi.data_mut();
            for (k, &i) in arg.iter().enumerate() {
                gd[i] += go.data()[k];
            }
            vec![Some(gi)]
        }))
    }

    /// Half-pixel bilinear resize to `(oh, ow)`.
    pub fn resize_bilinear(&self, x: &Var<T>, oh: usize, ow: usize) -> Result<Var<T>> {
        let [n, c, h, w] = x.dims4()?;
        if oh == 0 || ow == 0 || h == 0 || w == 0 {
            return Err(invalid("resize_bilinear", "empty size"));
        }
        if (oh, ow) == (h, w) {
            return Ok(self.record(x.value().clone(), &[x], |go| vec![Some(go.clone())]));
        }
        let y = Tensor::new(vec![n, c, oh, ow], resize_bilinear_planes(x.value().data(), n * c, h, w, oh, ow))?;
        Ok(self.record(y, &[x], move |go| {
            let ty = bilinear_taps::<T>(h, oh);
            let tx = bilinear_taps::<T>(w, ow);
            let mut gi = Tensor::zeros(vec![n, c, h, w]);
            let gd = gi.data_mut();
            let god = go.data();
            for p in 0..n * c {
                let dst = &mut gd[p * h * w..(p + 1) * h * w];
                let src = &god[p * oh * ow..(p + 1) * oh * ow];
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let g = src[oy * ow + ox];
                        let gt = g * (T::one() - fy);
                        let gb = g * fy;
                        dst[y0 * w + x0] += gt * (T::one() - fx);
                        dst[y0 * w + x1] += gt * fx;
                        dst[y1 * w + x0] += gb * (T::one() - fx);
                        dst[y1 * w + x1] += gb * fx;
                    }
                }
            }
            vec![Some(gi)]
        }))
    }

    /// Integer-factor bilinear upsampling.
    pub fn upsample(&self, x: &Var<T>, factor: usize) -> Result<Var<T>> {
        let [_, _, h, w] = x.dims4()?;
        self.resize_bilinear(x, h * factor, w * factor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_upsample_matches_half_pixel_convention() {
        // 1-D [0, 1] upsampled x2 -> [0, 0.25, 0.75, 1]
        let out = resize_bilinear_planes(&[0.0f64, 1.0], 1, 1, 2, 1, 4);
        let want = [0.0, 0.25, 0.75, 1.0];
        for (a, b) in out.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{out:?}");
        }
    }

    #[test]
    fn constant_plane_stays_constant() {
        let out = resize_bilinear_planes(&[0.3f64; 9], 1, 3, 3, 7, 5);
        assert!(out.iter().all(|v| (v - 0.3).abs() < 1e-12));
    }
}
