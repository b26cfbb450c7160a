use rand::Rng;

use crate::tensor::Tensor;

/// Uniform on `[-bound, bound]`.
pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("contract violation: zero extent")
}

/// The `1/sqrt(fan_in)` uniform rule used for every weight and bias.
pub fn fan_in_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    uniform(shape, 1.0 / (fan_in as f64).sqrt(), rng)
}
