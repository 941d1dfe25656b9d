//! Seeded parameter initializers.
//!
//! All draws are rounded through `f32` so that freshly initialized states
//! survive the f32 checkpoint container bit-exactly.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

/// Kaiming-style normal init: std = sqrt(2 / fan_in).
pub fn kaiming_normal(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).unwrap();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| round_f32(dist.sample(rng))).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
}

/// Uniform in [-bound, bound], the linear-layer default.
pub fn uniform_symmetric(rng: &mut impl Rng, shape: &[usize], bound: f64) -> ArrayD<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| round_f32(rng.random_range(-bound..bound))).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
}

pub fn zeros(shape: &[usize]) -> ArrayD<f64> {
    ArrayD::zeros(IxDyn(shape))
}

pub fn ones(shape: &[usize]) -> ArrayD<f64> {
    ArrayD::ones(IxDyn(shape))
}
