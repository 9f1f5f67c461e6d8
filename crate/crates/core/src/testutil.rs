use rand::Rng;

use crate::rng::stream;
use crate::tensor::{Scalar, Tensor};

/// Uniform values in [-1, 1).
pub fn rand_tensor<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = stream(seed, &[0xfeed]);
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.gen_range(-1.0..1.0)))
}

/// Relative error with a 1e-5 floor on the denominator: central differences
/// carry ~1e-10 of rounding noise, which would otherwise dominate parameters
/// whose exact gradient is zero (conv biases ahead of train-mode batch norm).
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}
