//! Weight initialization.

use crate::tensor::Tensor;
use crate::Result;
use rand::Rng;

/// Uniform He-style fan-in initialization: values drawn from
/// `U(−√(6/fan_in), √(6/fan_in))`.
pub fn he_uniform<R: Rng>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Result<Tensor> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data)
}
