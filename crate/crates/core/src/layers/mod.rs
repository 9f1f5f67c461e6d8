//! Stateful layers with train/inference modes.
//!
//! Each layer caches what its backward pass needs during `forward` and
//! accumulates parameter gradients into its [`Param`] buffers on `backward`.
//! Gradients are accumulated, never overwritten; call `zero_grad` between
//! optimizer steps.

mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod residual;
mod se;

pub use batchnorm::{BatchNorm, BN_EPSILON, BN_MOMENTUM};
pub use conv::Conv2d;
pub use dense::Dense;
pub use dropout::Dropout;
pub use residual::{ResidualBlock, ResidualBlockConfig};
pub use se::SeBlock;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// A named array with its gradient buffer.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// False for batch-norm running statistics.
    pub trainable: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param {
            name: name.into(),
            value,
            grad,
            trainable,
        }
    }

    pub fn accumulate(&mut self, g: &Tensor<T>) {
        self.grad.add_assign(g);
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Enumerates a component's parameters in a fixed order.
pub trait Parameterized<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));

    fn zero_grad(&mut self)
    where
        T: Scalar,
    {
        self.visit_params_mut(&mut |p| p.zero_grad());
    }

    fn trainable_count(&self) -> usize
    where
        T: Scalar,
    {
        let mut n = 0;
        self.visit_params(&mut |p| {
            if p.trainable {
                n += p.value.len();
            }
        });
        n
    }
}

/// He-normal initialization: N(0, 2 / fan_in).
pub fn he_normal<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| T::from_f64_lossy(normal.sample(rng)))
}

#[cfg(test)]
pub(crate) mod gradcheck_util {
    use super::*;
    use crate::testutil::rel_err;

    /// Adds `delta` to element `elem` of the `index`-th parameter.
    pub fn perturb<L: Parameterized<f64>>(layer: &mut L, index: usize, elem: usize, delta: f64) {
        let mut i = 0;
        layer.visit_params_mut(&mut |p| {
            if i == index {
                p.value.data_mut()[elem] += delta;
            }
            i += 1;
        });
    }

    /// Worst relative error between accumulated gradients and central
    /// differences of `loss`, over every element of every trainable parameter.
    pub fn worst_param_error<L: Parameterized<f64>>(layer: &mut L, mut loss: impl FnMut(&mut L) -> f64) -> f64 {
        let mut grads = Vec::new();
        layer.visit_params(&mut |p| grads.push((p.trainable, p.grad.data().to_vec())));
        let h = 1e-5;
        let mut worst = 0.0f64;
        for (pi, (trainable, g)) in grads.iter().enumerate() {
            if !trainable {
                continue;
            }
            for (e, &analytic) in g.iter().enumerate() {
                perturb(layer, pi, e, h);
                let up = loss(layer);
                perturb(layer, pi, e, -2.0 * h);
                let down = loss(layer);
                perturb(layer, pi, e, h);
                worst = worst.max(rel_err(analytic, (up - down) / (2.0 * h)));
            }
        }
        worst
    }

    pub fn worst_input_error(
        x: &Tensor<f64>,
        grad: &Tensor<f64>,
        mut loss: impl FnMut(&Tensor<f64>) -> f64,
    ) -> f64 {
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..x.len() {
            let mut up = x.clone();
            up.data_mut()[i] += h;
            let mut down = x.clone();
            down.data_mut()[i] -= h;
            let numeric = (loss(&up) - loss(&down)) / (2.0 * h);
            worst = worst.max(rel_err(grad.data()[i], numeric));
        }
        worst
    }

    pub fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }
}
