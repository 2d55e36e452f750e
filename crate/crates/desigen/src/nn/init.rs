//! Weight initialization. All draws come from the caller's seeded RNG, so
//! construction order fixes the parameter values.

use crate::rng::Rng;
use ndarray::{Array1, Array2};
use rand::Rng as _;

/// Uniform(-bound, bound) matrix.
pub fn uniform2(rng: &mut Rng, rows: usize, cols: usize, bound: f32) -> Array2<f32> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

/// Kaiming-uniform bound used for linear/conv weights: sqrt(1/fan_in).
pub fn kaiming_bound(fan_in: usize) -> f32 {
    (1.0 / fan_in as f32).sqrt()
}

pub fn normal2(rng: &mut Rng, rows: usize, cols: usize, std: f32) -> Array2<f32> {
    use rand_distr::{Distribution, Normal};
    let n = Normal::new(0.0f32, std).unwrap();
    Array2::from_shape_fn((rows, cols), |_| n.sample(rng))
}

pub fn zeros1(n: usize) -> Array1<f32> {
    Array1::zeros(n)
}

pub fn ones1(n: usize) -> Array1<f32> {
    Array1::ones(n)
}
