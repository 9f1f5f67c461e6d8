use serde::{Deserialize, Serialize};

use crate::layers::Parameterized;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSettings {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerSettings {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerSettings {
            kind: OptimizerKind::Sgd,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimizerSettings {
            kind: OptimizerKind::Adam,
            ..Self::sgd(learning_rate)
        }
    }
}

/// Plain SGD or bias-corrected Adam over the trainable parameters of a
/// component. Moment buffers follow the registry order.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    settings: OptimizerSettings,
    step: u64,
    moments: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(settings: OptimizerSettings) -> Self {
        Optimizer {
            settings,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients.
    pub fn step<P: Parameterized<T> + ?Sized>(&mut self, params: &mut P) {
        self.step += 1;
        let s = self.settings;
        let lr = T::from_f64_lossy(s.learning_rate);
        match s.kind {
            OptimizerKind::Sgd => params.visit_params_mut(&mut |p| {
                if p.trainable {
                    for (v, &g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                        *v -= lr * g;
                    }
                }
            }),
            OptimizerKind::Adam => {
                let (b1, b2) = (T::from_f64_lossy(s.beta1), T::from_f64_lossy(s.beta2));
                let c1 = T::from_f64_lossy(1.0 - s.beta1.powi(self.step as i32));
                let c2 = T::from_f64_lossy(1.0 - s.beta2.powi(self.step as i32));
                let eps = T::from_f64_lossy(s.epsilon);
                let one = T::one();
                let moments = &mut self.moments;
                let mut slot = 0;
                params.visit_params_mut(&mut |p| {
                    if !p.trainable {
                        return;
                    }
                    if moments.len() == slot {
                        moments.push((Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())));
                    }
                    let (m, v) = &mut moments[slot];
                    slot += 1;
                    let values = p.value.data_mut().iter_mut();
                    let state = m.data_mut().iter_mut().zip(v.data_mut().iter_mut());
                    for ((w, &g), (m, v)) in values.zip(p.grad.data()).zip(state) {
                        *m = b1 * *m + (one - b1) * g;
                        *v = b2 * *v + (one - b2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *w -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Param;

    struct Scalars(Vec<Param<f64>>);

    impl Parameterized<f64> for Scalars {
        fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<f64>)) {
            self.0.iter().for_each(f);
        }
        fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<f64>)) {
            self.0.iter_mut().for_each(f);
        }
    }

    fn single(v: f64, g: f64) -> Scalars {
        let mut p = Param::new("p", Tensor::scalar(v), true);
        p.grad = Tensor::scalar(g);
        Scalars(vec![p])
    }

    fn value(s: &Scalars) -> f64 {
        s.0[0].value.data()[0]
    }

    #[test]
    fn sgd_step() {
        let mut s = single(1.0, 2.0);
        Optimizer::new(OptimizerSettings::sgd(0.1)).step(&mut s);
        assert!((value(&s) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_lr_for_any_gradient_scale() {
        for g in [1e-4, 1.0, 1e4] {
            let mut s = single(0.0, g);
            Optimizer::new(OptimizerSettings::adam(1e-3)).step(&mut s);
            assert!((value(&s) + 1e-3).abs() < 1e-6, "g={g}: {}", value(&s));
        }
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut s = single(3.0, 0.0);
        let mut opt = Optimizer::new(OptimizerSettings::adam(0.1));
        for _ in 0..200 {
            let p = value(&s);
            s.0[0].grad = Tensor::scalar(2.0 * p);
            opt.step(&mut s);
        }
        assert!(value(&s).abs() < 0.1, "{}", value(&s));
        assert_eq!(opt.steps_taken(), 200);
    }

    #[test]
    fn zero_learning_rate_and_frozen_params_are_untouched() {
        for settings in [OptimizerSettings::sgd(0.0), OptimizerSettings::adam(0.0)] {
            let mut s = single(0.7, 3.0);
            Optimizer::new(settings).step(&mut s);
            assert_eq!(value(&s).to_bits(), 0.7f64.to_bits());
        }
        let mut s = single(0.7, 3.0);
        s.0[0].trainable = false;
        Optimizer::new(OptimizerSettings::adam(0.5)).step(&mut s);
        assert_eq!(value(&s), 0.7);
    }
}
