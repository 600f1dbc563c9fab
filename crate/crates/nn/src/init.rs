//! Weight initializers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::real::Real;
use crate::tensor::Tensor;

/// Kaiming-normal (fan-in, ReLU gain) initialization for a conv kernel
/// of shape `[C_out, C_in, K, K]`.
pub fn kaiming_normal<T: Real, R: Rng + ?Sized>(shape: [usize; 4], rng: &mut R) -> Tensor<T> {
    let fan_in = (shape[1] * shape[2] * shape[3]).max(1);
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| T::of(normal.sample(rng)))
}
