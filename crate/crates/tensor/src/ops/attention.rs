//! Windowed multi-head self-attention over a token grid stored as NCHW.
//!
//! Input is the fused projection `qkv: [n, 3c, h, w]` (queries, keys and
//! values stacked on the channel axis, heads contiguous inside each), the
//! relative position bias table `[(2ws-1)^2, heads]`, and the window
//! layout. A non-zero shift rolls the grid by `-shift` before partitioning
//! and back afterwards; token pairs that originate from different regions
//! of the rolled grid receive a large negative logit.

use crate::error::{invalid, Result, TensorError};
use crate::graph::{Graph, Var};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

pub const MASK_LOGIT: f64 = -100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub heads: usize,
    pub window: usize,
    pub shift: usize,
}

struct Layout {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    ws: usize,
    shift: usize,
    heads: usize,
    dh: usize,
}

impl Layout {
    fn tokens(&self) -> usize {
        self.ws * self.ws
    }

    fn windows(&self) -> (usize, usize) {
        (self.h / self.ws, self.w / self.ws)
    }

    /// Flat spatial offset (row-major in the original grid) of token `t`
    /// in window `(wy, wx)`.
    fn position(&self, wy: usize, wx: usize, t: usize) -> usize {
        let (i, j) = (t / self.ws, t % self.ws);
        let y = (wy * self.ws + i + self.shift) % self.h;
        let x = (wx * self.ws + j + self.shift) % self.w;
        y * self.w + x
    }

    fn region(&self, coord: usize, size: usize) -> usize {
        if self.shift == 0 || coord < size - self.ws {
            0
        } else if coord < size - self.shift {
            1
        } else {
            2
        }
    }

    /// Additive mask between tokens `t` and `u` of window `(wy, wx)`.
    fn mask(&self, wy: usize, wx: usize, t: usize, u: usize) -> bool {
        if self.shift == 0 {
            return false;
        }
        let id = |tok: usize| {
            let (i, j) = (tok / self.ws, tok % self.ws);
            let py = wy * self.ws + i;
            let px = wx * self.ws + j;
            self.region(py, self.h) * 3 + self.region(px, self.w)
        };
        id(t) != id(u)
    }

    fn rel_index(&self, t: usize, u: usize) -> usize {
        let (yi, xi) = (t / self.ws, t % self.ws);
        let (yj, xj) = (u / self.ws, u % self.ws);
        let span = 2 * self.ws - 1;
        (yi + self.ws - 1 - yj) * span + (xi + self.ws - 1 - xj)
    }
}

fn layout<T: Scalar>(qkv: &Tensor<T>, table: &Tensor<T>, spec: WindowSpec) -> Result<Layout> {
    let [n, c3, h, w] = qkv.dims4()?;
    if c3 % 3 != 0 {
        return Err(invalid("window_attention", format!("qkv channels {c3} not divisible by 3")));
    }
    let c = c3 / 3;
    if spec.heads == 0 || c % spec.heads != 0 {
        return Err(invalid("window_attention", format!("{c} channels not divisible by {} heads", spec.heads)));
    }
    let ws = spec.window;
    if ws == 0 || h % ws != 0 || w % ws != 0 {
        return Err(invalid("window_attention", format!("grid {h}x{w} not divisible by window {ws}")));
    }
    if spec.shift >= ws {
        return Err(invalid("window_attention", format!("shift {} >= window {ws}", spec.shift)));
    }
    let span = 2 * ws - 1;
    if table.shape() != [span * span, spec.heads] {
        return Err(TensorError::ShapeMismatch {
            op: "window_attention bias table",
            lhs: vec![span * span, spec.heads],
            rhs: table.shape().to_vec(),
        });
    }
    Ok(Layout { n, c, h, w, ws, shift: spec.shift, heads: spec.heads, dh: c / spec.heads })
}

/// Forward pass; returns the output and the attention probabilities laid
/// out as `[n, windows, heads, tokens, tokens]`.
fn forward<T: Scalar>(qkv: &Tensor<T>, table: &Tensor<T>, lay: &Layout) -> (Tensor<T>, Vec<T>) {
    let (nwy, nwx) = lay.windows();
    let nt = lay.tokens();
    let hw = lay.h * lay.w;
    let scale = T::one() / T::from_usize_lossy(lay.dh).sqrt();
    let mask = T::lit(MASK_LOGIT);
    let qd = qkv.data();
    let td = table.data();
    let mut out = vec![T::zero(); lay.n * lay.c * hw];
    let mut probs = vec![T::zero(); lay.n * nwy * nwx * lay.heads * nt * nt];
    let mut q = vec![T::zero(); nt * lay.dh];
    let mut k = vec![T::zero(); nt * lay.dh];
    let mut v = vec![T::zero(); nt * lay.dh];
    let mut o = vec![T::zero(); nt * lay.dh];
    let mut pos = vec![0usize; nt];
    for s in 0..lay.n {
        let base = s * 3 * lay.c * hw;
        for wy in 0..nwy {
            for wx in 0..nwx {
                for (t, p) in pos.iter_mut().enumerate() {
                    *p = lay.position(wy, wx, t);
                }
                for hd in 0..lay.heads {
                    for d in 0..lay.dh {
                        let ch = hd * lay.dh + d;
                        for t in 0..nt {
                            q[t * lay.dh + d] = qd[base + ch * hw + pos[t]];
                            k[t * lay.dh + d] = qd[base + (lay.c + ch) * hw + pos[t]];
                            v[t * lay.dh + d] = qd[base + (2 * lay.c + ch) * hw + pos[t]];
                        }
                    }
                    let pi = (((s * nwy + wy) * nwx + wx) * lay.heads + hd) * nt * nt;
                    let a = &mut probs[pi..pi + nt * nt];
                    gemm(scale, MatRef::new(&q, nt, lay.dh), MatRef::t(&k, nt, lay.dh), T::zero(), a);
                    for t in 0..nt {
                        let row = &mut a[t * nt..(t + 1) * nt];
                        for (u, val) in row.iter_mut().enumerate() {
                            *val += td[lay.rel_index(t, u) * lay.heads + hd];
                            if lay.mask(wy, wx, t, u) {
                                *val += mask;
                            }
                        }
                        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
                        let mut sum = T::zero();
                        for val in row.iter_mut() {
                            *val = (*val - mx).exp();
                            sum += *val;
                        }
                        for val in row.iter_mut() {
                            *val /= sum;
                        }
                    }
                    gemm(T::one(), MatRef::new(a, nt, nt), MatRef::new(&v, nt, lay.dh), T::zero(), &mut o);
                    let ob = s * lay.c * hw;
                    for d in 0..lay.dh {
                        let ch = hd * lay.dh + d;
                        for t in 0..nt {
                            out[ob + ch * hw + pos[t]] = o[t * lay.dh + d];
                        }
                    }
                }
            }
        }
    }
    let out = Tensor::new(vec![lay.n, lay.c, lay.h, lay.w], out).expect("shape");
    (out, probs)
}

impl<T: Scalar> Graph<T> {
    pub fn window_attention(&self, qkv: &Var<T>, bias_table: &Var<T>, spec: WindowSpec) -> Result<Var<T>> {
        let lay = layout(qkv.value(), bias_table.value(), spec)?;
        let (nwy, nwx) = lay.windows();
        let nt = lay.tokens();
        self.add_macs((2 * lay.n * nwy * nwx * lay.heads * nt * nt * lay.dh) as u64);
        let (y, probs) = forward(qkv.value(), bias_table.value(), &lay);
        let qv = qkv.shared();
        let need_table = bias_table.is_tracked();
        let table_shape = bias_table.shape().to_vec();
        Ok(self.record(y, &[qkv, bias_table], move |go| {
            let hw = lay.h * lay.w;
            let scale = T::one() / T::from_usize_lossy(lay.dh).sqrt();
            let qd = qv.data();
            let god = go.data();
            let mut gqkv = vec![T::zero(); qd.len()];
            let mut gtable = vec![T::zero(); table_shape.iter().product()];
            let dh = lay.dh;
            let mut q = vec![T::zero(); nt * dh];
            let mut k = vec![T::zero(); nt * dh];
            let mut v = vec![T::zero(); nt * dh];
            let mut dout = vec![T::zero(); nt * dh];
            let mut da = vec![T::zero(); nt * nt];
            let mut dq = vec![T::zero(); nt * dh];
            let mut dk = vec![T::zero(); nt * dh];
            let mut dv = vec![T::zero(); nt * dh];
            let mut pos = vec![0usize; nt];
            for s in 0..lay.n {
                let base = s * 3 * lay.c * hw;
                for wy in 0..nwy {
                    for wx in 0..nwx {
                        for (t, p) in pos.iter_mut().enumerate() {
                            *p = lay.position(wy, wx, t);
                        }
                        for hd in 0..lay.heads {
                            for d in 0..dh {
                                let ch = hd * dh + d;
                                for t in 0..nt {
                                    q[t * dh + d] = qd[base + ch * hw + pos[t]];
                                    k[t * dh + d] = qd[base + (lay.c + ch) * hw + pos[t]];
                                    v[t * dh + d] = qd[base + (2 * lay.c + ch) * hw + pos[t]];
                                    dout[t * dh + d] = god[s * lay.c * hw + ch * hw + pos[t]];
                                }
                            }
                            let pi = (((s * nwy + wy) * nwx + wx) * lay.heads + hd) * nt * nt;
                            let a = &probs[pi..pi + nt * nt];
                            // dV = A^T dO ; dA = dO V^T
                            gemm(T::one(), MatRef::t(a, nt, nt), MatRef::new(&dout, nt, dh), T::zero(), &mut dv);
                            gemm(T::one(), MatRef::new(&dout, nt, dh), MatRef::t(&v, nt, dh), T::zero(), &mut da);
                            // softmax backward, in place: dS = A * (dA - <dA, A>_row)
                            for t in 0..nt {
                                let ar = &a[t * nt..(t + 1) * nt];
                                let dr = &mut da[t * nt..(t + 1) * nt];
                                let dot: T = ar.iter().zip(dr.iter()).map(|(&x, &y)| x * y).sum();
                                for (d, &x) in dr.iter_mut().zip(ar) {
                                    *d = x * (*d - dot);
                                }
                                if need_table {
                                    for (u, &d) in dr.iter().enumerate() {
                                        gtable[lay.rel_index(t, u) * lay.heads + hd] += d;
                                    }
                                }
                            }
                            gemm(scale, MatRef::new(&da, nt, nt), MatRef::new(&k, nt, dh), T::zero(), &mut dq);
                            gemm(scale, MatRef::t(&da, nt, nt), MatRef::new(&q, nt, dh), T::zero(), &mut dk);
                            for d in 0..dh {
                                let ch = hd * dh + d;
                                for t in 0..nt {
                                    gqkv[base + ch * hw + pos[t]] += dq[t * dh + d];
                                    gqkv[base + (lay.c + ch) * hw + pos[t]] += dk[t * dh + d];
                                    gqkv[base + (2 * lay.c + ch) * hw + pos[t]] += dv[t * dh + d];
                                }
                            }
                        }
                    }
                }
            }
            vec![
                Some(Tensor::new(qv.shape().to_vec(), gqkv).expect("shape")),
                if need_table { Some(Tensor::new(table_shape.clone(), gtable).expect("shape")) } else { None },
            ]
        }))
    }
}

/// Attention probabilities `[n, windows, heads, tokens, tokens]` of a
/// window-attention forward pass, for inspection.
pub fn window_attention_probs<T: Scalar>(qkv: &Tensor<T>, bias_table: &Tensor<T>, spec: WindowSpec) -> Result<Tensor<T>> {
    let lay = layout(qkv, bias_table, spec)?;
    let (nwy, nwx) = lay.windows();
    let nt = lay.tokens();
    let (_, probs) = forward(qkv, bias_table, &lay);
    Tensor::new(vec![lay.n, nwy * nwx, lay.heads, nt, nt], probs)
}

/// Whether tokens at shifted-grid coordinates `a` and `b` (row, col) fall in
/// the same region of a rolled `h x w` grid, i.e. may attend to each other.
pub fn same_shift_region(h: usize, w: usize, window: usize, shift: usize, a: (usize, usize), b: (usize, usize)) -> bool {
    let lay = Layout { n: 1, c: 1, h, w, ws: window, shift, heads: 1, dh: 1 };
    lay.region(a.0, h) == lay.region(b.0, h) && lay.region(a.1, w) == lay.region(b.1, w)
}
