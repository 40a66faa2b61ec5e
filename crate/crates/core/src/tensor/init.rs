//! Keras-default initializers.
//!
//! Draws are taken in `f64` and then converted, so an `f32` model and its
//! `f64` shadow built from the same seed hold the same values up to rounding.

use rand::Rng;

use super::{Real, Tensor};

pub const EMBEDDING_RANGE: f64 = 0.05;

/// `rows × cols` table, i.i.d. uniform in `[-0.05, 0.05]`.
pub fn init_embedding<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
    assert!(rows >= 1 && cols >= 1, "embedding extents must be positive");
    uniform(vec![rows, cols], EMBEDDING_RANGE, rng)
}

/// Glorot-uniform bound: the `a` for which `U[-a, a]` has standard deviation
/// `sqrt(2 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// `fan_in × fan_out` kernel, Glorot uniform.
pub fn init_dense<T: Real, R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    assert!(fan_in >= 1 && fan_out >= 1, "dense extents must be positive");
    uniform(vec![fan_in, fan_out], glorot_bound(fan_in, fan_out), rng)
}

pub fn uniform<T: Real, R: Rng + ?Sized>(shape: Vec<usize>, bound: f64, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-bound..=bound)))
}
