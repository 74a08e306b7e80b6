use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check_affine<T: Scalar>(op: &'static str, c: usize, gamma: &Var<T>, beta: &Var<T>) -> Result<()> {
    for p in [gamma, beta] {
        if p.shape() != [c] {
            return Err(TensorError::ShapeMismatch { op, lhs: vec![c], rhs: p.shape().to_vec() });
        }
    }
    Ok(())
}

/// Batch statistics of a batch-norm forward pass.
pub struct BatchStats<T> {
    pub mean: Tensor<T>,
    /// Unbiased variance, the quantity tracked by running statistics.
    pub var_unbiased: Tensor<T>,
}

impl<T: Scalar> Graph<T> {
    /// Layer normalization over the channel axis at every pixel of
    /// `x: [n,c,h,w]`.
    pub fn layer_norm_channels(&self, x: &Var<T>, gamma: &Var<T>, beta: &Var<T>, eps: T) -> Result<Var<T>> {
        let [n, c, h, w] = x.dims4()?;
        check_affine("layer_norm", c, gamma, beta)?;
        let hw = h * w;
        let xd = x.value().data();
        let (gd, bd) = (gamma.value().data(), beta.value().data());
        let inv_c = T::one() / T::from_usize_lossy(c);
        let mut xhat = vec![T::zero(); xd.len()];
        let mut rstd = vec![T::zero(); n * hw];
        let mut y = vec![T::zero(); xd.len()];
        for s in 0..n {
            let base = s * c * hw;
            for p in 0..hw {
                let mut mean = T::zero();
                for ch in 0..c {
                    mean += xd[base + ch * hw + p];
                }
                mean *= inv_c;
                let mut var = T::zero();
                for ch in 0..c {
                    let d = xd[base + ch * hw + p] - mean;
                    var += d * d;
                }
                let r = T::one() / (var * inv_c + eps).sqrt();
                rstd[s * hw + p] = r;
                for ch in 0..c {
                    let i = base + ch * hw + p;
                    let xh = (xd[i] - mean) * r;
                    xhat[i] = xh;
                    y[i] = xh * gd[ch] + bd[ch];
                }
            }
        }
        let y = Tensor::new(vec![n, c, h, w], y)?;
        let gv = gamma.shared();
        Ok(self.record(y, &[x, gamma, beta], move |go| {
            let god = go.data();
            let gd = gv.data();
            let mut gx = vec![T::zero(); god.len()];
            let mut gg = vec![T::zero(); c];
            let mut gb = vec![T::zero(); c];
            for s in 0..n {
                let base = s * c * hw;
                for p in 0..hw {
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for ch in 0..c {
                        let i = base + ch * hw + p;
                        let dxh = god[i] * gd[ch];
                        m1 += dxh;
                        m2 += dxh * xhat[i];
                        gg[ch] += god[i] * xhat[i];
                        gb[ch] += god[i];
                    }
                    m1 *= inv_c;
                    m2 *= inv_c;
                    let r = rstd[s * hw + p];
                    for (ch, &d) in gd.iter().enumerate() {
                        let i = base + ch * hw + p;
                        gx[i] = r * (god[i] * d - m1 - xhat[i] * m2);
                    }
                }
            }
            vec![
                Some(Tensor::new(vec![n, c, h, w], gx).expect("shape")),
                Some(Tensor::new(vec![c], gg).expect("shape")),
                Some(Tensor::new(vec![c], gb).expect("shape")),
            ]
        }))
    }

    /// Batch normalization with statistics of the current batch.
    pub fn batch_norm_train(
        &self,
        x: &Var<T>,
        gamma: &Var<T>,
        beta: &Var<T>,
        eps: T,
    ) -> Result<(Var<T>, BatchStats<T>)> {
        let [n, c, h, w] = x.dims4()?;
        check_affine("batch_norm", c, gamma, beta)?;
        let hw = h * w;
        let m = n * hw;
        let inv_m = T::one() / T::from_usize_lossy(m);
        let xd = x.value().data();
        let (gd, bd) = (gamma.value().data(), beta.value().data());
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut acc = T::zero();
            for s in 0..n {
                acc += xd[(s * c + ch) * hw..(s * c + ch + 1) * hw].iter().copied().sum::<T>();
            }
            let mu = acc * inv_m;
            let mut v = T::zero();
            for s in 0..n {
                for &xv in &xd[(s * c + ch) * hw..(s * c + ch + 1) * hw] {
                    let d = xv - mu;
                    v += d * d;
                }
            }
            mean[ch] = mu;
            var[ch] = v;
        }
        let rstd: Vec<T> = var.iter().map(|&v| T::one() / (v * inv_m + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut y = vec![T::zero(); xd.len()];
        for s in 0..n {
            for ch in 0..c {
                for i in (s * c + ch) * hw..(s * c + ch + 1) * hw {
                    let xh = (xd[i] - mean[ch]) * rstd[ch];
                    xhat[i] = xh;
                    y[i] = xh * gd[ch] + bd[ch];
                }
            }
        }
        let unbiased = if m > 1 { T::one() / T::from_usize_lossy(m - 1) } else { T::zero() };
        let stats = BatchStats {
            mean: Tensor::new(vec![c], mean)?,
            var_unbiased: Tensor::new(vec![c], var.iter().map(|&v| v * unbiased).collect())?,
        };
        let y = Tensor::new(vec![n, c, h, w], y)?;
        let gv = gamma.shared();
        let out = self.record(y, &[x, gamma, beta], move |go| {
            let god = go.data();
            let gd = gv.data();
            let mut gx = vec![T::zero(); god.len()];
            let mut gg = vec![T::zero(); c];
            let mut gb = vec![T::zero(); c];
            for ch in 0..c {
                let mut sum_dy = T::zero();
                let mut sum_dy_xhat = T::zero();
                for s in 0..n {
                    for i in (s * c + ch) * hw..(s * c + ch + 1) * hw {
                        sum_dy += god[i];
                        sum_dy_xhat += god[i] * xhat[i];
                    }
                }
                gg[ch] = sum_dy_xhat;
                gb[ch] = sum_dy;
                let m1 = sum_dy * inv_m;
                let m2 = sum_dy_xhat * inv_m;
                let k = gd[ch] * rstd[ch];
                for s in 0..n {
                    for i in (s * c + ch) * hw..(s * c + ch + 1) * hw {
                        gx[i] = k * (god[i] - m1 - xhat[i] * m2);
                    }
                }
            }
            vec![
                Some(Tensor::new(vec![n, c, h, w], gx).expect("shape")),
                Some(Tensor::new(vec![c], gg).expect("shape")),
                Some(Tensor::new(vec![c], gb).expect("shape")),
            ]
        });
        Ok((out, stats))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        &self,
        x: &Var<T>,
        gamma: &Var<T>,
        beta: &Var<T>,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        eps: T,
    ) -> Result<Var<T>> {
        let [n, c, h, w] = x.dims4()?;
        check_affine("batch_norm", c, gamma, beta)?;
        let hw = h * w;
        let rstd: Vec<T> = running_var.data().iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mean = running_mean.data().to_vec();
        let xd = x.value().data();
        let (gd, bd) = (gamma.value().data(), beta.value().data());
        let mut y = vec![T::zero(); xd.len()];
        for s in 0..n {
            for ch in 0..c {
                let (sc, sh) = (gd[ch] * rstd[ch], bd[ch] - mean[ch] * gd[ch] * rstd[ch]);
                for i in (s * c + ch) * hw..(s * c + ch + 1) * hw {
                    y[i] = xd[i] * sc + sh;
                }
            }
        }
        let y = Tensor::new(vec![n, c, h, w], y)?;
        let (xv, gv) = (x.shared(), gamma.shared());
        Ok(self.record(y, &[x, gamma, beta], move |go| {
            let god = go.data();
            let (xd, gd) = (xv.data(), gv.data());
            let mut gx = vec![T::zero(); god.len()];
            let mut gg = vec![T::zero(); c];
            let mut gb = vec![T::zero(); c];
            for s in 0..n {
                for ch in 0..c {
                    for i in (s * c + ch) * hw..(s * c + ch + 1) * hw {
                        gx[i] = god[i] * gd[ch] * rstd[ch];
                        gg[ch] += god[i] * (xd[i] - mean[ch]) * rstd[ch];
                        gb[ch] += god[i];
                    }
                }
            }
            vec![
                Some(Tensor::new(vec![n, c, h, w], gx).expect("shape")),
                Some(Tensor::new(vec![c], gg).expect("shape")),
                Some(Tensor::new(vec![c], gb).expect("shape")),
            ]
        }))
    }
}
