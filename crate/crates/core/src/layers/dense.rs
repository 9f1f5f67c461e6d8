use rand::Rng;

use super::{he_normal, Param, Parameterized};
use crate::error::{Error, Result};
use crate::tensor::{dense_affine, dense_affine_backward, Scalar, Tensor};

/// Fully connected layer over N×D inputs.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Dense {
            weight: Param::new(format!("{name}.weight"), he_normal(&[d_in, d_out], d_in, rng), true),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[d_out]), true),
            input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = dense_affine(x, &self.weight.value, &self.bias.value)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .input
            .take()
            .ok_or_else(|| Error::precondition("dense_backward", "backward called before forward"))?;
        let g = dense_affine_backward(&x, &self.weight.value, grad_out)?;
        self.weight.accumulate(&g.weights);
        self.bias.accumulate(&g.bias);
        Ok(g.input)
    }
}

impl<T> Parameterized<T> for Dense<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
