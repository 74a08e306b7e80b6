use crate::error::{invalid, Result, TensorError};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Left-pads a shape of rank <= 4 with ones.
pub(crate) fn as4(shape: &[usize]) -> Result<[usize; 4]> {
    if shape.len() > 4 {
        return Err(TensorError::Rank { op: "broadcast", expected: 4, shape: shape.to_vec() });
    }
    let mut out = [1; 4];
    out[4 - shape.len()..].copy_from_slice(shape);
    Ok(out)
}

fn contiguous_strides(d: [usize; 4]) -> [usize; 4] {
    [d[1] * d[2] * d[3], d[2] * d[3], d[3], 1]
}

/// Strides of `d` viewed at the broadcast shape `out` (zero on broadcast axes).
fn bcast_strides(d: [usize; 4], out: [usize; 4]) -> [usize; 4] {
    let s = contiguous_strides(d);
    let mut r = [0; 4];
    for i in 0..4 {
        r[i] = if d[i] == out[i] { s[i] } else { 0 };
    }
    r
}

pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let a4 = as4(a)?;
    let b4 = as4(b)?;
    let mut out = [1; 4];
    for i in 0..4 {
        out[i] = match (a4[i], b4[i]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::ShapeMismatch { op, lhs: a.to_vec(), rhs: b.to_vec() });
            }
        };
    }
    Ok(out[4 - rank..].to_vec())
}

/// `f(a, b)` with numpy-style broadcasting over up to four axes.
pub(crate) fn broadcast_apply<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let shape = broadcast_shape(op, a.shape(), b.shape())?;
    let o4 = as4(&shape)?;
    let sa = bcast_strides(as4(a.shape())?, o4);
    let sb = bcast_strides(as4(b.shape())?, o4);
    let (ad, bd) = (a.data(), b.data());
    let mut data = Vec::with_capacity(o4.iter().product());
    for i0 in 0..o4[0] {
        for i1 in 0..o4[1] {
            for i2 in 0..o4[2] {
                let base_a = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
                let base_b = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
                for i3 in 0..o4[3] {
                    data.push(f(ad[base_a + i3 * sa[3]], bd[base_b + i3 * sb[3]]));
                }
            }
        }
    }
    Tensor::new(shape, data)
}

/// Sums `g` (at a broadcast shape) down to `target` shape.
pub(crate) fn reduce_to<T: Scalar>(g: &Tensor<T>, target: &[usize]) -> Tensor<T> {
    if g.shape() == target {
        return g.clone();
    }
    let o4 = as4(g.shape()).expect("rank <= 4");
    let t4 = as4(target).expect("rank <= 4");
    let st = bcast_strides(t4, o4);
    let mut out = Tensor::zeros(target.to_vec());
    let od = out.data_mut();
    let gd = g.data();
    let mut k = 0;
    for i0 in 0..o4[0] {
        for i1 in 0..o4[1] {
            for i2 in 0..o4[2] {
                let base = i0 * st[0] + i1 * st[1] + i2 * st[2];
                for i3 in 0..o4[3] {
                    od[base + i3 * st[3]] += gd[k];
                    k += 1;
                }
            }
        }
    }
    out
}

fn unary<T: Scalar>(
    g: &Graph<T>,
    x: &Var<T>,
    f: impl Fn(T) -> T,
    // derivative from (input, output)
    df: impl Fn(T, T) -> T + 'static,
) -> Var<T> {
    let y = x.value().map(f);
    let xs = x.shared();
    let ys = std::sync::Arc::new(y.clone());
    g.record(y, &[x], move |go| {
        let mut gi = go.clone();
        for ((d, &xv), &yv) in gi.data_mut().iter_mut().zip(xs.data()).zip(ys.data()) {
            *d *= df(xv, yv);
        }
        vec![Some(gi)]
    })
}

impl<T: Scalar> Graph<T> {
    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let y = broadcast_apply("add", a.value(), b.value(), |x, y| x + y)?;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        Ok(self.record(y, &[a, b], move |go| vec![Some(reduce_to(go, &sa)), Some(reduce_to(go, &sb))]))
    }

    pub fn sub(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let y = broadcast_apply("sub", a.value(), b.value(), |x, y| x - y)?;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        Ok(self.record(y, &[a, b], move |go| {
            vec![Some(reduce_to(go, &sa)), Some(reduce_to(&go.map(|v| -v), &sb))]
        }))
    }

    pub fn mul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let y = broadcast_apply("mul", a.value(), b.value(), |x, y| x * y)?;
        let (av, bv) = (a.shared(), b.shared());
        Ok(self.record(y, &[a, b], move |go| {
            let ga = broadcast_apply("mul", go, &bv, |g, b| g * b).expect("broadcast checked");
            let gb = broadcast_apply("mul", go, &av, |g, a| g * a).expect("broadcast checked");
            vec![Some(reduce_to(&ga, av.shape())), Some(reduce_to(&gb, bv.shape()))]
        }))
    }

    pub fn div(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let y = broadcast_apply("div", a.value(), b.value(), |x, y| x / y)?;
        let (av, bv) = (a.shared(), b.shared());
        let ys = std::sync::Arc::new(y.clone());
        Ok(self.record(y, &[a, b], move |go| {
            let ga = broadcast_apply("div", go, &bv, |g, b| g / b).expect("broadcast checked");
            // d(a/b)/db = -y/b
            let gy = go.zip_map(&ys, |g, y| g * y).expect("same shape");
            let gb = broadcast_apply("div", &gy, &bv, |gy, b| -gy / b).expect("broadcast checked");
            vec![Some(reduce_to(&ga, av.shape())), Some(reduce_to(&gb, bv.shape()))]
        }))
    }

    pub fn scale(&self, x: &Var<T>, s: T) -> Var<T> {
        let y = x.value().map(|v| v * s);
        self.record(y, &[x], move |go| vec![Some(go.map(|g| g * s))])
    }

    pub fn add_scalar(&self, x: &Var<T>, s: T) -> Var<T> {
        let y = x.value().map(|v| v + s);
        self.record(y, &[x], move |go| vec![Some(go.clone())])
    }

    /// `s - x`.
    pub fn rsub_scalar(&self, s: T, x: &Var<T>) -> Var<T> {
        let y = x.value().map(|v| s - v);
        self.record(y, &[x], move |go| vec![Some(go.map(|g| -g))])
    }

    pub fn relu(&self, x: &Var<T>) -> Var<T> {
        unary(self, x, |v| v.max(T::zero()), |x, _| if x > T::zero() { T::one() } else { T::zero() })
    }

    pub fn sigmoid(&self, x: &Var<T>) -> Var<T> {
        unary(self, x, sigmoid, |_, y| y * (T::one() - y))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&self, x: &Var<T>) -> Var<T> {
        let half = T::lit(0.5);
        let inv_sqrt2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
        let inv_sqrt_2pi = T::lit(0.398_942_280_401_432_7);
        unary(
            self,
            x,
            move |v| half * v * (T::one() + (v * inv_sqrt2).erf()),
            move |x, _| half * (T::one() + (x * inv_sqrt2).erf()) + x * (-(x * x) * half).exp() * inv_sqrt_2pi,
        )
    }

    pub fn ln(&self, x: &Var<T>) -> Var<T> {
        unary(self, x, |v| v.ln(), |x, _| T::one() / x)
    }

    pub fn exp(&self, x: &Var<T>) -> Var<T> {
        unary(self, x, |v| v.exp(), |_, y| y)
    }

    pub fn square(&self, x: &Var<T>) -> Var<T> {
        unary(self, x, |v| v * v, |x, _| x + x)
    }

    /// Clamp to `[lo, hi]`; the gradient passes only inside the interval.
    pub fn clamp(&self, x: &Var<T>, lo: T, hi: T) -> Result<Var<T>> {
        if lo > hi {
            return Err(invalid("clamp", "lo > hi"));
        }
        Ok(unary(
            self,
            x,
            move |v| v.max(lo).min(hi),
            move |x, _| if x >= lo && x <= hi { T::one() } else { T::zero() },
        ))
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
