use crate::error::{invalid, Result, TensorError};
use crate::graph::{Graph, Var};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

/// Symmetric stride / zero-padding / dilation of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec { stride: 1, padding: 0, dilation: 1 }
    }
}

impl ConvSpec {
    /// Stride 1 with "same" padding for an odd kernel at the given dilation.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        ConvSpec { stride: 1, padding: dilation * (kernel - 1) / 2, dilation }
    }

    pub fn out_size(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span || self.stride == 0 {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    spec: ConvSpec,
}

impl Geometry {
    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn l(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.spec.stride == 1 && self.spec.padding == 0
    }
}

fn im2col<T: Scalar>(x: &[T], g: &Geometry, col: &mut [T]) {
    let (s, p, d) = (g.spec.stride as isize, g.spec.padding as isize, g.spec.dilation as isize);
    let l = g.l();
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (ci * g.kh + i) * g.kw + j;
                let dst = &mut col[row * l..(row + 1) * l];
                for oy in 0..g.ho {
                    let iy = oy as isize * s + i as isize * d - p;
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = ox as isize * s + j as isize * d - p;
                        *o = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], g: &Geometry, x: &mut [T]) {
    let (s, p, d) = (g.spec.stride as isize, g.spec.padding as isize, g.spec.dilation as isize);
    let l = g.l();
    for ci in 0..g.c {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (ci * g.kh + i) * g.kw + j;
                let src = &col[row * l..(row + 1) * l];
                for oy in 0..g.ho {
                    let iy = oy as isize * s + i as isize * d - p;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = ox as isize * s + j as isize * d - p;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn weight_dims(w: &Tensor<impl Scalar>) -> Result<[usize; 4]> {
    match w.shape() {
        &[o, c] => Ok([o, c, 1, 1]),
        &[o, c, kh, kw] => Ok([o, c, kh, kw]),
        s => Err(TensorError::Rank { op: "conv2d weight", expected: 4, shape: s.to_vec() }),
    }
}

impl<T: Scalar> Graph<T> {
    /// 2-D cross-correlation of `x: [n,c,h,w]` with `weight: [o,c,kh,kw]`
    /// (or `[o,c]` for a pointwise layer) plus an optional `bias: [o]`.
    pub fn conv2d(&self, x: &Var<T>, weight: &Var<T>, bias: Option<&Var<T>>, spec: ConvSpec) -> Result<Var<T>> {
        let [n, c, h, w] = x.dims4()?;
        let [o, wc, kh, kw] = weight_dims(weight.value())?;
        if wc != c {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: x.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        if let Some(b) = bias {
            if b.shape() != [o] {
                return Err(TensorError::ShapeMismatch { op: "conv2d bias", lhs: vec![o], rhs: b.shape().to_vec() });
            }
        }
        let (ho, wo) = match (spec.out_size(h, kh), spec.out_size(w, kw)) {
            (Some(a), Some(b)) if spec.dilation > 0 => (a, b),
            _ => return Err(invalid("conv2d", format!("kernel {kh}x{kw} {spec:?} does not fit {h}x{w}"))),
        };
        let geo = Geometry { c, h, w, kh, kw, ho, wo, spec };
        let (k, l) = (geo.k(), geo.l());
        self.add_macs((n * o * k * l) as u64);

        let xd = x.value().data();
        let wd = weight.value().data();
        let mut out = vec![T::zero(); n * o * l];
        let mut col = if geo.is_pointwise() { Vec::new() } else { vec![T::zero(); k * l] };
        for s in 0..n {
            let xs = &xd[s * c * h * w..(s + 1) * c * h * w];
            let cols: &[T] = if geo.is_pointwise() {
                xs
            } else {
                im2col(xs, &geo, &mut col);
                &col
            };
            let os = &mut out[s * o * l..(s + 1) * o * l];
            gemm(T::one(), MatRef::new(wd, o, k), MatRef::new(cols, k, l), T::zero(), os);
            if let Some(b) = bias {
                for (oc, row) in os.chunks_mut(l).enumerate() {
                    let bv = b.value().data()[oc];
                    row.iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        let y = Tensor::new(vec![n, o, ho, wo], out)?;

        let need_x = x.is_tracked();
        let need_w = weight.is_tracked();
        let has_bias = bias.is_some();
        let need_b = bias.map(|b| b.is_tracked()).unwrap_or(false);
        let xv = x.shared();
        let wv = weight.shared();
        let mut inputs = vec![x, weight];
        if let Some(b) = bias {
            inputs.push(b);
        }
        Ok(self.record(y, &inputs, move |go| {
            let xd = xv.data();
            let wd = wv.data();
            let god = go.data();
            let mut gx = if need_x { Some(Tensor::zeros(vec![n, c, h, w])) } else { None };
            let mut gw = if need_w { Some(Tensor::zeros(wv.shape().to_vec())) } else { None };
            let mut col = if geo.is_pointwise() { Vec::new() } else { vec![T::zero(); k * l] };
            let mut dcol = if need_x && !geo.is_pointwise() { vec![T::zero(); k * l] } else { Vec::new() };
            for s in 0..n {
                let gos = &god[s * o * l..(s + 1) * o * l];
                if let Some(gw) = gw.as_mut() {
                    let xs = &xd[s * c * h * w..(s + 1) * c * h * w];
                    let cols: &[T] = if geo.is_pointwise() {
                        xs
                    } else {
                        im2col(xs, &geo, &mut col);
                        &col
                    };
                    gemm(T::one(), MatRef::new(gos, o, l), MatRef::t(cols, k, l), T::one(), gw.data_mut());
                }
                if let Some(gx) = gx.as_mut() {
                    let gxs = &mut gx.data_mut()[s * c * h * w..(s + 1) * c * h * w];
                    if geo.is_pointwise() {
                        gemm(T::one(), MatRef::t(wd, o, k), MatRef::new(gos, o, l), T::zero(), gxs);
                    } else {
                        gemm(T::one(), MatRef::t(wd, o, k), MatRef::new(gos, o, l), T::zero(), &mut dcol);
                        col2im(&dcol, &geo, gxs);
                    }
                }
            }
            let mut grads = vec![gx, gw];
            if has_bias {
                grads.push(if need_b {
                    let mut gb = Tensor::zeros(vec![o]);
                    for s in 0..n {
                        for oc in 0..o {
                            let row = &god[(s * o + oc) * l..(s * o + oc + 1) * l];
                            gb.data_mut()[oc] += row.iter().copied().sum::<T>();
                        }
                    }
                    Some(gb)
                } else {
                    None
                });
            }
            grads
        }))
    }
}
