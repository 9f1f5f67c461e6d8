use rand::Rng;

use super::{he_normal, Param, Parameterized};
use crate::error::{Error, Result};
use crate::tensor::{
    dense_affine, dense_affine_backward, global_avg_pool, global_avg_pool_backward, relu,
    relu_backward, sigmoid, sigmoid_backward, Scalar, Tensor,
};

/// Squeeze-and-excitation channel attention.
///
/// squeeze:    z = mean over H×W of each channel
/// excitation: s = sigmoid(relu(z · W1) · W2), with W1: C×(C/r), W2: (C/r)×C
/// scaling:    out[n,h,w,c] = s[n,c] · x[n,h,w,c]
///
/// The excitation has no biases.
#[derive(Debug, Clone)]
pub struct SeBlock<T> {
    pub w1: Param<T>,
    pub w2: Param<T>,
    cache: Option<Cache<T>>,
}

#[derive(Debug, Clone)]
struct Cache<T> {
    x: Tensor<T>,
    z: Tensor<T>,
    pre: Tensor<T>,
    hidden: Tensor<T>,
    scale: Tensor<T>,
}

impl<T: Scalar> SeBlock<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, channels: usize, reduction: usize, rng: &mut R) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::Config(format!(
                "se reduction {reduction} must divide channel count {channels}"
            )));
        }
        let hidden = channels / reduction;
        Ok(SeBlock {
            w1: Param::new(format!("{name}.w1"), he_normal(&[channels, hidden], channels, rng), true),
            w2: Param::new(format!("{name}.w2"), he_normal(&[hidden, channels], hidden, rng), true),
            cache: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.w1.value.shape()[0]
    }

    fn check_weights(&self, c: usize) -> Result<usize> {
        let [wc, hidden] = self.w1.value.shape()[..] else {
            return Err(Error::precondition("se_block", "w1 must be rank 2"));
        };
        if wc != c {
            return Err(Error::DimensionMismatch { op: "se_block", axis: "w1 rows", expected: c, actual: wc });
        }
        if self.w2.value.shape() != [hidden, c] {
            let [r, k] = self.w2.value.shape()[..] else {
                return Err(Error::precondition("se_block", "w2 must be rank 2"));
            };
            let (axis, expected, actual) = if r != hidden { ("w2 rows", hidden, r) } else { ("w2 cols", c, k) };
            return Err(Error::DimensionMismatch { op: "se_block", axis, expected, actual });
        }
        Ok(hidden)
    }

    /// Per-sample channel gates `s`, shape N×C.
    pub fn gates(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, _, _, c) = x.nhwc("se_block")?;
        let hidden = self.check_weights(c)?;
        let z = global_avg_pool(x)?;
        let pre = dense_affine(&z, &self.w1.value, &Tensor::zeros(&[hidden]))?;
        let h = relu(&pre);
        Ok(sigmoid(&dense_affine(&h, &self.w2.value, &Tensor::zeros(&[c]))?))
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, hh, ww, c) = x.nhwc("se_block")?;
        let hidden = self.check_weights(c)?;
        let z = global_avg_pool(x)?;
        let pre = dense_affine(&z, &self.w1.value, &Tensor::zeros(&[hidden]))?;
        let h = relu(&pre);
        let s = sigmoid(&dense_affine(&h, &self.w2.value, &Tensor::zeros(&[c]))?);
        let mut out = x.data().to_vec();
        for sample in 0..n {
            let gate = &s.data()[sample * c..(sample + 1) * c];
            for px in out[sample * hh * ww * c..(sample + 1) * hh * ww * c].chunks_exact_mut(c) {
                for (v, &g) in px.iter_mut().zip(gate) {
                    *v *= g;
                }
            }
        }
        self.cache = Some(Cache { x: x.clone(), z, pre, hidden: h, scale: s });
        Tensor::new(x.shape(), out)
    }

    /// Backward through both the scaling path and the squeeze path.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let Cache { x, z, pre, hidden, scale } = self
            .cache
            .take()
            .ok_or_else(|| Error::precondition("se_backward", "backward called before forward"))?;
        let (n, hh, ww, c) = x.nhwc("se_backward")?;
        let hw = hh * ww;
        let mut dx = grad_out.data().to_vec();
        let mut d_scale = vec![T::zero(); n * c];
        for sample in 0..n {
            let gate = &scale.data()[sample * c..(sample + 1) * c];
            let ds = &mut d_scale[sample * c..(sample + 1) * c];
            let range = sample * hw * c..(sample + 1) * hw * c;
            for (dpx, xpx) in dx[range.clone()].chunks_exact_mut(c).zip(x.data()[range].chunks_exact(c)) {
                for i in 0..c {
                    ds[i] += dpx[i] * xpx[i];
                    dpx[i] *= gate[i];
                }
            }
        }
        let d_scale = Tensor::new(&[n, c], d_scale)?;
        let d_logit = sigmoid_backward(&scale, &d_scale);
        let g2 = dense_affine_backward(&hidden, &self.w2.value, &d_logit)?;
        self.w2.accumulate(&g2.weights);
        let d_pre = relu_backward(&pre, &g2.input);
        let g1 = dense_affine_backward(&z, &self.w1.value, &d_pre)?;
        self.w1.accumulate(&g1.weights);
        let d_squeeze = global_avg_pool_backward(&g1.input, x.shape())?;
        for (d, &v) in dx.iter_mut().zip(d_squeeze.data()) {
            *d += v;
        }
        Tensor::new(x.shape(), dx)
    }
}

impl<T> Parameterized<T> for SeBlock<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.w1);
        f(&self.w2);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.w1);
        f(&mut self.w2);
    }
}
