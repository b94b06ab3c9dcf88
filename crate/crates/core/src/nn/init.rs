use rand::Rng as _;

use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Kaiming-uniform (fan-in, ReLU gain): `U(−√(6/fan_in), √(6/fan_in))`.
pub fn kaiming_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let bound = libm::sqrt(6.0 / fan_in.max(1) as f64);
    Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(-bound..bound)))
}
