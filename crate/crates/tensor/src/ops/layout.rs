use crate::error::{invalid, Result, TensorError};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// (dy, dx) of the four 2x2 neighbours in patch-merging channel order.
pub const MERGE_ORDER: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];

impl<T: Scalar> Graph<T> {
    /// Concatenation along the channel axis of rank-4 tensors.
    pub fn concat_channels(&self, xs: &[&Var<T>]) -> Result<Var<T>> {
        let first = xs.first().ok_or_else(|| invalid("concat_channels", "no inputs"))?;
        let [n, _, h, w] = first.dims4()?;
        let mut chans = Vec::with_capacity(xs.len());
        for x in xs {
            let [xn, xc, xh, xw] = x.dims4()?;
            if (xn, xh, xw) != (n, h, w) {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_channels",
                    lhs: first.shape().to_vec(),
                    rhs: x.shape().to_vec(),
                });
            }
            chans.push(xc);
        }
        let total: usize = chans.iter().sum();
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total * hw);
        for s in 0..n {
            for (x, &c) in xs.iter().zip(&chans) {
                out.extend_from_slice(&x.value().data()[s * c * hw..(s + 1) * c * hw]);
            }
        }
        let y = Tensor::new(vec![n, total, h, w], out)?;
        Ok(self.record(y, xs, move |go| {
            let god = go.data();
            let mut grads: Vec<Vec<T>> = chans.iter().map(|&c| Vec::with_capacity(n * c * hw)).collect();
            for s in 0..n {
                let mut off = s * total * hw;
                for (g, &c) in grads.iter_mut().zip(&chans) {
                    g.extend_from_slice(&god[off..off + c * hw]);
                    off += c * hw;
                }
            }
            grads
                .into_iter()
                .zip(&chans)
                .map(|(g, &c)| Some(Tensor::new(vec![n, c, h, w], g).expect("shape")))
                .collect()
        }))
    }

    /// Channels `start..start + len`.
    pub fn slice_channels(&self, x: &Var<T>, start: usize, len: usize) -> Result<Var<T>> {
        let [n, c, h, w] = x.dims4()?;
        if start + len > c {
            return Err(invalid("slice_channels", format!("{start}+{len} > {c}")));
        }
        let hw = h * w;
        let xd = x.value().data();
        let mut out = Vec::with_capacity(n * len * hw);
        for s in 0..n {
            out.extend_from_slice(&xd[(s * c + start) * hw..(s * c + start + len) * hw]);
        }
        let y = Tensor::new(vec![n, len, h, w], out)?;
        Ok(self.record(y, &[x], move |go| {
            let mut gi = Tensor::zeros(vec![n, c, h, w]);
            for s in 0..n {
                gi.data_mut()[(s * c + start) * hw..(s * c + start + len) * hw]
                    .copy_from_slice(&go.data()[s * len * hw..(s + 1) * len * hw]);
            }
            vec![Some(gi)]
        }))
    }

    /// Zero padding on the bottom and right edges.
    pub fn pad_bottom_right(&self, x: &Var<T>, bottom: usize, right: usize) -> Result<Var<T>> {
        if bottom == 0 && right == 0 {
            return Ok(x.clone());
        }
        let [n, c, h, w] = x.dims4()?;
        let (hp, wp) = (h + bottom, w + right);
        let mut y = Tensor::zeros(vec![n, c, hp, wp]);
        {
            let (yd, xd) = (y.data_mut(), x.value().data());
            for p in 0..n * c {
                for r in 0..h {
                    yd[(p * hp + r) * wp..(p * hp + r) * wp + w].copy_from_slice(&xd[(p * h + r) * w..(p * h + r + 1) * w]);
                }
            }
        }
        Ok(self.record(y, &[x], move |go| {
            let mut gi = Tensor::zeros(vec![n, c, h, w]);
            let (gd, god) = (gi.data_mut(), go.data());
            for p in 0..n * c {
                for r in 0..h {
                    gd[(p * h + r) * w..(p * h + r + 1) * w].copy_from_slice(&god[(p * hp + r) * wp..(p * hp + r) * wp + w]);
                }
            }
            vec![Some(gi)]
        }))
    }

    /// Keeps the top-left `h x w` window.
    pub fn crop_top_left(&self, x: &Var<T>, h: usize, w: usize) -> Result<Var<T>> {
        let [n, c, hp, wp] = x.dims4()?;
        if h > hp || w > wp {
            return Err(invalid("crop_top_left", format!("{h}x{w} from {hp}x{wp}")));
        }
        if (h, w) == (hp, wp) {
            return Ok(x.clone());
        }
        let mut y = Tensor::zeros(vec![n, c, h, w]);
        {
            let (yd, xd) = (y.data_mut(), x.value().data());
            for p in 0..n * c {
                for r in 0..h {
                    yd[(p * h + r) * w..(p * h + r + 1) * w].copy_from_slice(&xd[(p * hp + r) * wp..(p * hp + r) * wp + w]);
                }
            }
        }
        Ok(self.record(y, &[x], move |go| {
            let mut gi = Tensor::zeros(vec![n, c, hp, wp]);
            let (gd, god) = (gi.data_mut(), go.data());
            for p in 0..n * c {
                for r in 0..h {
                    gd[(p * hp + r) * wp..(p * hp + r) * wp + w].copy_from_slice(&god[(p * h + r) * w..(p * h + r + 1) * w]);
                }
            }
            vec![Some(gi)]
        }))
    }

    /// Gathers every 2x2 neighbourhood into channels:
    /// `[n,c,h,w] -> [n,4c,h/2,w/2]`, blocks ordered by [`MERGE_ORDER`].
    pub fn space_to_depth2(&self, x: &Var<T>) -> Result<Var<T>> {
        let [n, c, h, w] = x.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(invalid("space_to_depth2", format!("odd spatial size {h}x{w}")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let index = move |s: usize, k: usize, ch: usize, oy: usize, ox: usize| {
            let (dy, dx) = MERGE_ORDER[k];
            ((s * c + ch) * h + 2 * oy + dy) * w + 2 * ox + dx
        };
        let xd = x.value().data();
        let mut out = Vec::with_capacity(xd.len());
        for s in 0..n {
            for k in 0..4 {
                for ch in 0..c {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            out.push(xd[index(s, k, ch, oy, ox)]);
                        }
                    }
                }
            }
        }
        let y = Tensor::new(vec![n, 4 * c, ho, wo], out)?;
        Ok(self.record(y, &[x], move |go| {
            let mut gi = Tensor::zeros(vec![n, c, h, w]);
            let gd = gi.data_mut();
            let mut it = go.data().iter();
            for s in 0..n {
                for k in 0..4 {
                    for ch in 0..c {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                gd[index(s, k, ch, oy, ox)] = *it.next().expect("length");
                            }
                        }
                    }
                }
            }
            vec![Some(gi)]
        }))
    }
}
