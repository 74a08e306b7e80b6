use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Seeded weight initializer. Two initializers built from the same seed
/// produce identical weights in the same call order.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Independent child stream, so that adding parameters to one
    /// sub-module does not shift the weights of another.
    pub fn fork(&mut self, salt: u64) -> Initializer {
        let base: u64 = self.rng.random();
        Initializer::new(base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Normal(0, std) truncated to +-2 std by resampling.
    pub fn trunc_normal<T: Scalar>(&mut self, shape: impl Into<Vec<usize>>, std: f64) -> Tensor<T> {
        Tensor::from_fn(shape, |_| loop {
            let z = self.normal();
            if z.abs() <= 2.0 {
                break T::lit(z * std);
            }
        })
    }

    /// He-normal initialization for layers followed by a rectifier.
    pub fn kaiming_normal<T: Scalar>(&mut self, shape: impl Into<Vec<usize>>, fan_in: usize) -> Tensor<T> {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        Tensor::from_fn(shape, |_| T::lit(self.normal() * std))
    }

    pub fn uniform<T: Scalar>(&mut self, shape: impl Into<Vec<usize>>, bound: f64) -> Tensor<T> {
        Tensor::from_fn(shape, |_| T::lit(self.rng.random_range(-bound..=bound)))
    }
}
