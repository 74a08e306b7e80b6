use crate::error::{invalid, Result};
use crate::graph::{Graph, Var};
use crate::ops::elementwise::as4;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn reduced_shape(x4: [usize; 4], axes: &[usize]) -> Result<[usize; 4]> {
    let mut o = x4;
    for &a in axes {
        if a >= 4 {
            return Err(invalid("reduce", format!("axis {a} out of range")));
        }
        o[a] = 1;
    }
    Ok(o)
}

/// Calls `f(out_index, in_index)` for every input element of a rank-4
/// shape reduced over `axes` (keepdim).
fn for_each_reduced(x4: [usize; 4], o4: [usize; 4], mut f: impl FnMut(usize, usize)) {
    let os = [o4[1] * o4[2] * o4[3], o4[2] * o4[3], o4[3], 1];
    let mut k = 0;
    for i0 in 0..x4[0] {
        let b0 = if o4[0] == 1 { 0 } else { i0 * os[0] };
        for i1 in 0..x4[1] {
            let b1 = b0 + if o4[1] == 1 { 0 } else { i1 * os[1] };
            for i2 in 0..x4[2] {
                let b2 = b1 + if o4[2] == 1 { 0 } else { i2 * os[2] };
                let step = if o4[3] == 1 { 0 } else { 1 };
                for i3 in 0..x4[3] {
                    f(b2 + i3 * step, k);
                    k += 1;
                }
            }
        }
    }
}

impl<T: Scalar> Graph<T> {
    /// Sum of all elements, shape `[1]`.
    pub fn sum_all(&self, x: &Var<T>) -> Var<T> {
        let y = Tensor::scalar(x.value().sum());
        let shape = x.shape().to_vec();
        self.record(y, &[x], move |go| vec![Some(Tensor::full(shape.clone(), go.item()))])
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean_all(&self, x: &Var<T>) -> Var<T> {
        let n = T::from_usize_lossy(x.value().numel().max(1));
        let s = self.sum_all(x);
        self.scale(&s, T::one() / n)
    }

    /// Sum over `axes` of a rank-4 tensor, keeping reduced axes as size 1.
    pub fn sum_axes(&self, x: &Var<T>, axes: &[usize]) -> Result<Var<T>> {
        let x4 = x.dims4()?;
        let o4 = reduced_shape(x4, axes)?;
        let mut y = Tensor::zeros(o4.to_vec());
        {
            let (yd, xd) = (y.data_mut(), x.value().data());
            for_each_reduced(x4, o4, |o, i| yd[o] += xd[i]);
        }
        Ok(self.record(y, &[x], move |go| {
            let mut gi = Tensor::zeros(x4.to_vec());
            {
                let (gd, god) = (gi.data_mut(), go.data());
                for_each_reduced(x4, o4, |o, i| gd[i] = god[o]);
            }
            vec![Some(gi)]
        }))
    }

    pub fn mean_axes(&self, x: &Var<T>, axes: &[usize]) -> Result<Var<T>> {
        let x4 = x.dims4()?;
        let count: usize = axes.iter().map(|&a| x4.get(a).copied().unwrap_or(1)).product();
        let s = self.sum_axes(x, axes)?;
        Ok(self.scale(&s, T::one() / T::from_usize_lossy(count.max(1))))
    }

    /// Max over `axes` (keepdim). Ties route the gradient to the first
    /// maximal element in row-major order.
    pub fn max_axes(&self, x: &Var<T>, axes: &[usize]) -> Result<Var<T>> {
        let x4 = x.dims4()?;
        let o4 = reduced_shape(x4, axes)?;
        let numel: usize = o4.iter().product();
        let mut best = vec![T::neg_infinity(); numel];
        let mut arg = vec![usize::MAX; numel];
        {
            let xd = x.value().data();
            for_each_reduced(x4, o4, |o, i| {
                if arg[o] == usize::MAX || xd[i] > best[o] {
                    best[o] = xd[i];
                    arg[o] = i;
                }
            });
        }
        let y = Tensor::new(o4.to_vec(), best)?;
        Ok(self.record(y, &[x], move |go| {
            let mut gi = Tensor::zeros(x4.to_vec());
            let gd = gi.data_mut();
            for (o, &i) in arg.iter().enumerate() {
                gd[i] += go.data()[o];
            }
            vec![Some(gi)]
        }))
    }

    /// Sum over every axis except the leading one: `[n,c,h,w] -> [n,1,1,1]`.
    pub fn sum_per_sample(&self, x: &Var<T>) -> Result<Var<T>> {
        let _ = as4(x.shape())?;
        self.sum_axes(x, &[1, 2, 3])
    }
}
