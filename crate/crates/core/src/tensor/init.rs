//! Seeded random construction helpers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Shape, Tensor};

pub type SeededRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Constant tensor with entries drawn uniformly from `[lo, hi)`.
pub fn uniform(rng: &mut impl Rng, shape: Shape, lo: f64, hi: f64) -> Tensor {
    let data = (0..shape.numel()).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape, data).expect("sized")
}

pub fn normal(rng: &mut impl Rng, shape: Shape, std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("positive std");
    let data = (0..shape.numel()).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape, data).expect("sized")
}

/// Zero-initialised trainable tensor.
pub fn zeros_param(shape: Shape) -> Tensor {
    Tensor::parameter(shape, vec![0.0; shape.numel()]).expect("sized")
}
