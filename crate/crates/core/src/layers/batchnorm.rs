use super::{Mode, Param, Parameterized};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPSILON: f64 = 1e-5;

/// Batch normalization over the last (channel) axis.
///
/// Train mode normalizes with the batch statistics and folds them into the
/// running estimates as `running = momentum * running + (1 - momentum) * batch`
/// (unbiased variance for the running estimate). Infer mode reads the running
/// estimates only.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub name: String,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub momentum: f64,
    pub epsilon: f64,
    cache: Option<Cache<T>>,
}

#[derive(Debug, Clone)]
struct Cache<T> {
    x_hat: Vec<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm {
            name: name.to_string(),
            gamma: Param::new(format!("{name}.gamma"), Tensor::full(&[channels], T::one()), true),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[channels]), true),
            running_mean: Param::new(format!("{name}.running_mean"), Tensor::zeros(&[channels]), false),
            running_var: Param::new(format!("{name}.running_var"), Tensor::full(&[channels], T::one()), false),
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let c = self.channels();
        let actual = *x.shape().last().expect("rank >= 1");
        if actual != c {
            return Err(Error::DimensionMismatch {
                op: "batchnorm",
                axis: "channels",
                expected: c,
                actual,
            });
        }
        let m = x.len() / c;
        let eps = self.epsilon;
        let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
            Mode::Train => {
                if m < 2 {
                    return Err(Error::DegenerateBatch {
                        layer: self.name.clone(),
                        count: m,
                    });
                }
                let mut mean = vec![0.0f64; c];
                for row in x.data().chunks_exact(c) {
                    for (a, &v) in mean.iter_mut().zip(row) {
                        *a += v.to_f64_lossy();
                    }
                }
                mean.iter_mut().for_each(|a| *a /= m as f64);
                let mut var = vec![0.0f64; c];
                for row in x.data().chunks_exact(c) {
                    for ((a, &v), mu) in var.iter_mut().zip(row).zip(&mean) {
                        let d = v.to_f64_lossy() - mu;
                        *a += d * d;
                    }
                }
                var.iter_mut().for_each(|a| *a /= m as f64);

                let mom = self.momentum;
                let unbias = m as f64 / (m as f64 - 1.0);
                for (r, &mu) in self.running_mean.value.data_mut().iter_mut().zip(&mean) {
                    *r = T::from_f64_lossy(mom * r.to_f64_lossy() + (1.0 - mom) * mu);
                }
                for (r, &v) in self.running_var.value.data_mut().iter_mut().zip(&var) {
                    *r = T::from_f64_lossy(mom * r.to_f64_lossy() + (1.0 - mom) * v * unbias);
                }
                (mean, var)
            }
            Mode::Infer => (
                self.running_mean.value.data().iter().map(|v| v.to_f64_lossy()).collect(),
                self.running_var.value.data().iter().map(|v| v.to_f64_lossy()).collect(),
            ),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::from_f64_lossy(1.0 / (v + eps).sqrt())).collect();
        let mean: Vec<T> = mean.into_iter().map(T::from_f64_lossy).collect();

        let mut x_hat = x.data().to_vec();
        for row in x_hat.chunks_exact_mut(c) {
            for ((v, &mu), &s) in row.iter_mut().zip(&mean).zip(&inv_std) {
                *v = (*v - mu) * s;
            }
        }
        let mut y = x_hat.clone();
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        for row in y.chunks_exact_mut(c) {
            for ((v, &g), &b) in row.iter_mut().zip(g).zip(b) {
                *v = *v * g + b;
            }
        }
        self.cache = Some(Cache { x_hat, inv_std, mode });
        Tensor::new(x.shape(), y)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let Cache { x_hat, inv_std, mode } = self
            .cache
            .take()
            .ok_or_else(|| Error::precondition("batchnorm_backward", "backward called before forward"))?;
        let c = self.channels();
        if grad_out.len() != x_hat.len() {
            return Err(Error::DimensionMismatch {
                op: "batchnorm_backward",
                axis: "grad_out",
                expected: x_hat.len(),
                actual: grad_out.len(),
            });
        }
        let m = x_hat.len() / c;
        let dy = grad_out.data();
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        for (row_dy, row_xh) in dy.chunks_exact(c).zip(x_hat.chunks_exact(c)) {
            for i in 0..c {
                sum_dy[i] += row_dy[i];
                sum_dy_xhat[i] += row_dy[i] * row_xh[i];
            }
        }
        for (g, &v) in self.gamma.grad.data_mut().iter_mut().zip(&sum_dy_xhat) {
            *g += v;
        }
        for (g, &v) in self.beta.grad.data_mut().iter_mut().zip(&sum_dy) {
            *g += v;
        }

        let gamma = self.gamma.value.data();
        let mut dx = vec![T::zero(); dy.len()];
        match mode {
            Mode::Infer => {
                for (row_dx, row_dy) in dx.chunks_exact_mut(c).zip(dy.chunks_exact(c)) {
                    for i in 0..c {
                        row_dx[i] = row_dy[i] * gamma[i] * inv_std[i];
                    }
                }
            }
            Mode::Train => {
                let mf = T::from_usize(m).expect("count fits");
                let scale: Vec<T> = (0..c).map(|i| gamma[i] * inv_std[i] / mf).collect();
                for ((row_dx, row_dy), row_xh) in dx
                    .chunks_exact_mut(c)
                    .zip(dy.chunks_exact(c))
                    .zip(x_hat.chunks_exact(c))
                {
                    for i in 0..c {
                        row_dx[i] = scale[i] * (mf * row_dy[i] - sum_dy[i] - row_xh[i] * sum_dy_xhat[i]);
                    }
                }
            }
        }
        Tensor::new(grad_out.shape(), dx)
    }
}

impl<T> Parameterized<T> for BatchNorm<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.running_mean);
        f(&self.running_var);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::gradcheck_util::{dot, worst_input_error, worst_param_error};
    use crate::testutil::rand_tensor;

    #[test]
    fn infer_identity_configuration() {
        let mut bn = BatchNorm::<f64>::new("bn", 3);
        let x = rand_tensor(&[2, 2, 2, 3], 1);
        let y = bn.forward(&x, Mode::Infer).unwrap();
        // 1/sqrt(1 + eps) is the only deviation from exact identity
        assert!(y.max_abs_diff(&x) < 1e-5);
        bn.epsilon = 0.0;
        assert_eq!(bn.forward(&x, Mode::Infer).unwrap(), x);
    }

    #[test]
    fn train_mode_normalizes_each_channel() {
        let mut bn = BatchNorm::<f32>::new("bn", 4);
        let x = rand_tensor::<f32>(&[3, 5, 5, 4], 2).map(|v| v * 3.0 + 1.5);
        let y = bn.forward(&x, Mode::Train).unwrap();
        for ch in 0..4 {
            let vals: Vec<f64> = y.data().iter().skip(ch).step_by(4).map(|&v| v as f64).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn running_stats_follow_momentum_and_stay_nonnegative() {
        let mut bn = BatchNorm::<f64>::new("bn", 1);
        let x = Tensor::new(&[4, 1], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        // batch mean 3, unbiased variance 14/3
        assert!((bn.running_mean.value.data()[0] - 0.3).abs() < 1e-12);
        assert!((bn.running_var.value.data()[0] - (0.9 + 0.1 * 14.0 / 3.0)).abs() < 1e-12);
        assert!(bn.running_var.value.data()[0] >= 0.0);
    }

    #[test]
    fn degenerate_batch_is_rejected_in_train_mode_only() {
        let mut bn = BatchNorm::<f32>::new("stem.bn", 2);
        let x = Tensor::zeros(&[1, 1, 1, 2]);
        assert!(matches!(
            bn.forward(&x, Mode::Train),
            Err(Error::DegenerateBatch { count: 1, .. })
        ));
        assert!(bn.forward(&x, Mode::Infer).is_ok());
    }

    #[test]
    fn gradients_match_finite_differences_in_both_modes() {
        for mode in [Mode::Train, Mode::Infer] {
            let mut bn = BatchNorm::<f64>::new("bn", 3);
            bn.gamma.value = rand_tensor(&[3], 3).map(|v| v + 1.5);
            bn.beta.value = rand_tensor(&[3], 4);
            bn.running_mean.value = rand_tensor(&[3], 5).map(|v| 0.2 * v);
            bn.running_var.value = rand_tensor(&[3], 6).map(|v| 1.0 + 0.5 * v);
            let x = rand_tensor(&[2, 3, 2, 3], 7);
            let r = rand_tensor(&[2, 3, 2, 3], 8);
            bn.forward(&x, mode).unwrap();
            let dx = bn.backward(&r).unwrap();
            let snapshot = bn.clone();
            let worst_p = worst_param_error(&mut bn, |l| dot(&l.clone().forward(&x, mode).unwrap(), &r));
            let worst_x = worst_input_error(&x, &dx, |xi| dot(&snapshot.clone().forward(xi, mode).unwrap(), &r));
            assert!(worst_p < 1e-4, "{mode:?} params {worst_p}");
            assert!(worst_x < 1e-4, "{mode:?} input {worst_x}");
        }
    }
}
