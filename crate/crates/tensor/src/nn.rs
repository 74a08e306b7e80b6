//! Parameterized layers.

use crate::error::Result;
use crate::graph::{BufferUpdate, Graph, Var};
use crate::init::Initializer;
use crate::ops::conv::ConvSpec;
use crate::param::Param;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub spec: ConvSpec,
}

crate::impl_module!(Conv2d { weight, bias });

impl<T: Scalar> Conv2d<T> {
    /// Square-kernel convolution, He-initialized, with optional zero bias.
    pub fn new(init: &mut Initializer, cin: usize, cout: usize, kernel: usize, spec: ConvSpec, bias: bool) -> Self {
        let weight = Param::new(init.kaiming_normal(vec![cout, cin, kernel, kernel], cin * kernel * kernel));
        let bias = bias.then(|| Param::new(Tensor::zeros(vec![cout])));
        Conv2d { weight, bias, spec }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, g: &Graph<T>, x: &Var<T>) -> Result<Var<T>> {
        let w = g.param(&self.weight);
        let b = self.bias.as_ref().map(|b| g.param(b));
        g.conv2d(x, &w, b.as_ref(), self.spec)
    }
}

/// Fully connected layer applied at every pixel; weight is `[out, in]`.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
}

crate::impl_module!(Linear { weight, bias });

impl<T: Scalar> Linear<T> {
    pub fn new(init: &mut Initializer, cin: usize, cout: usize, bias: bool) -> Self {
        Linear {
            weight: Param::new(init.trunc_normal(vec![cout, cin], 0.02)),
            bias: bias.then(|| Param::new(Tensor::zeros(vec![cout]))),
        }
    }

    pub fn forward(&self, g: &Graph<T>, x: &Var<T>) -> Result<Var<T>> {
        let w = g.param(&self.weight);
        let b = self.bias.as_ref().map(|b| g.param(b));
        g.conv2d(x, &w, b.as_ref(), ConvSpec::default())
    }
}

/// Layer normalization over channels.
#[derive(Clone, Debug)]
pub struct LayerNorm<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

crate::impl_module!(LayerNorm { weight, bias });

impl<T: Scalar> LayerNorm<T> {
    pub fn new(c: usize) -> Self {
        LayerNorm { weight: Param::new(Tensor::ones(vec![c])), bias: Param::new(Tensor::zeros(vec![c])) }
    }

    pub fn forward(&self, g: &Graph<T>, x: &Var<T>) -> Result<Var<T>> {
        g.layer_norm_channels(x, &g.param(&self.weight), &g.param(&self.bias), T::lit(LN_EPS))
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
}

crate::impl_module!(BatchNorm2d { weight, bias, running_mean, running_var });

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(c: usize) -> Self {
        BatchNorm2d {
            weight: Param::new(Tensor::ones(vec![c])),
            bias: Param::new(Tensor::zeros(vec![c])),
            running_mean: Param::buffer(Tensor::zeros(vec![c])),
            running_var: Param::buffer(Tensor::ones(vec![c])),
        }
    }

    /// Batch statistics in training graphs (queueing running-stat updates),
    /// running statistics otherwise.
    pub fn forward(&self, g: &Graph<T>, x: &Var<T>) -> Result<Var<T>> {
        let (w, b) = (g.param(&self.weight), g.param(&self.bias));
        let eps = T::lit(BN_EPS);
        if !g.is_training() {
            return g.batch_norm_eval(x, &w, &b, self.running_mean.value(), self.running_var.value(), eps);
        }
        let (y, stats) = g.batch_norm_train(x, &w, &b, eps)?;
        let m = T::lit(BN_MOMENTUM);
        let blend = |old: &Tensor<T>, new: &Tensor<T>| old.zip_map(new, |o, n| (T::one() - m) * o + m * n);
        g.push_update(BufferUpdate { id: self.running_mean.id(), value: blend(self.running_mean.value(), &stats.mean)? });
        g.push_update(BufferUpdate { id: self.running_var.id(), value: blend(self.running_var.value(), &stats.var_unbiased)? });
        Ok(y)
    }
}

/// Bias-free convolution, batch norm, ReLU.
#[derive(Clone, Debug)]
pub struct ConvBnRelu<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

crate::impl_module!(ConvBnRelu { conv, bn });

impl<T: Scalar> ConvBnRelu<T> {
    pub fn new(init: &mut Initializer, cin: usize, cout: usize, kernel: usize, dilation: usize) -> Self {
        ConvBnRelu {
            conv: Conv2d::new(init, cin, cout, kernel, ConvSpec::same(kernel, dilation), false),
            bn: BatchNorm2d::new(cout),
        }
    }

    pub fn forward(&self, g: &Graph<T>, x: &Var<T>) -> Result<Var<T>> {
        let y = self.conv.forward(g, x)?;
        let y = self.bn.forward(g, &y)?;
        Ok(g.relu(&y))
    }
}

/// Applies queued running-statistics updates to the matching buffers of `m`.
pub fn apply_updates<T: Scalar, M: crate::Module<T> + ?Sized>(m: &mut M, updates: Vec<BufferUpdate<T>>) -> usize {
    let mut by_id: std::collections::HashMap<_, _> = updates.into_iter().map(|u| (u.id, u.value)).collect();
    let mut applied = 0;
    m.visit_mut("", &mut |_, p| {
        if let Some(v) = by_id.remove(&p.id()) {
            p.set(v);
            applied += 1;
        }
    });
    applied
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Module;

    #[test]
    fn batch_norm_updates_running_stats_only_in_training() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        let x = Tensor::new(vec![2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = Graph::train();
        bn.forward(&g, &g.constant(x.clone())).unwrap();
        let n = apply_updates(&mut bn, g.take_updates());
        assert_eq!(n, 2);
        assert!((bn.running_mean.value().data()[0] - 0.25).abs() < 1e-12);
        // unbiased var of 1..4 is 5/3
        assert!((bn.running_var.value().data()[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);

        let g = Graph::inference();
        bn.forward(&g, &g.constant(x)).unwrap();
        assert!(g.take_updates().is_empty());
    }

    #[test]
    fn module_paths_are_dotted() {
        let mut init = Initializer::new(0);
        let m = ConvBnRelu::<f32>::new(&mut init, 3, 4, 3, 1);
        let names: Vec<_> = m.named_params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["conv.weight", "bn.weight", "bn.bias", "bn.running_mean", "bn.running_var"]);
        assert_eq!(m.num_params(), 4 * 3 * 9 + 8);
    }
}
