use rand::Rng;

use super::{he_normal, Param, Parameterized};
use crate::error::{Error, Result};
use crate::tensor::{conv2d, conv2d_backward, ConvSpec, Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub spec: ConvSpec,
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, spec: ConvSpec, rng: &mut R) -> Self {
        let fan_in = spec.kernel.0 * spec.kernel.1 * spec.in_channels;
        Conv2d {
            spec,
            weight: Param::new(format!("{name}.weight"), he_normal(&spec.weight_shape(), fan_in, rng), true),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[spec.out_channels]), true),
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = conv2d(x, &self.weight.value, &self.bias.value, &self.spec)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .input
            .take()
            .ok_or_else(|| Error::precondition("conv2d_backward", "backward called before forward"))?;
        let g = conv2d_backward(&x, &self.weight.value, grad_out, &self.spec)?;
        self.weight.accumulate(&g.weights);
        self.bias.accumulate(&g.bias);
        Ok(g.input)
    }
}

impl<T> Parameterized<T> for Conv2d<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
