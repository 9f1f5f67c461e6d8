use std::collections::HashSet;

use rand::Rng;
use serde::Serialize;

use super::loss::cross_entropy_loss;
use crate::error::{Error, Result};
use crate::layers::{Mode, Parameterized};
use crate::model::Model;
use crate::rng::stream;
use crate::tensor::{softmax, Tensor};

const GRADCHECK_STREAM: u64 = 0x4743;

/// Denominator floor of the relative error, keeping round-off on
/// near-zero gradients from dominating.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    /// Number of scalars to check, spread round-robin over trainable tensors.
    pub samples: usize,
    pub epsilon: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            samples: 96,
            epsilon: 1e-5,
            tolerance: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradSample {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradReport {
    pub samples: Vec<GradSample>,
    /// Worst relative error per layer, in registry order.
    pub per_layer: Vec<(String, f64)>,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradReport {
    pub fn worst(&self) -> Option<&GradSample> {
        self.samples.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    /// Layer families present among the checked scalars.
    pub fn covered_kinds(&self) -> Vec<&'static str> {
        let mut kinds: Vec<&'static str> = self.samples.iter().map(|s| layer_kind(&s.param)).collect();
        kinds.sort();
        kinds.dedup();
        kinds
    }
}

/// Family of a parameter from its registry name.
pub fn layer_kind(param: &str) -> &'static str {
    let parts: Vec<&str> = param.split('.').collect();
    if parts.contains(&"proj") {
        "projection"
    } else if parts.contains(&"se") {
        "se"
    } else if parts.iter().any(|p| p.starts_with("conv")) {
        "conv"
    } else if parts.iter().any(|p| p.starts_with("bn")) {
        "batchnorm"
    } else {
        "dense"
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_ERROR_FLOOR)
}

fn loss(model: &mut Model<f64>, images: &Tensor<f64>, labels: &[usize]) -> Result<f64> {
    let probs = softmax(&model.forward(images, Mode::Infer)?)?;
    Ok(cross_entropy_loss(&probs, labels)?.0)
}

fn nudge(model: &mut Model<f64>, tensor: usize, elem: usize, delta: f64) {
    let mut i = 0;
    model.visit_params_mut(&mut |p| {
        if i == tensor {
            p.value.data_mut()[elem] += delta;
        }
        i += 1;
    });
}

/// Central-difference check of the analytic gradient of the mean
/// cross-entropy, in inference mode (running batch statistics, no dropout).
pub fn gradient_check(
    model: &mut Model<f64>,
    images: &Tensor<f64>,
    labels: &[usize],
    opts: &GradCheckOptions,
) -> Result<GradReport> {
    if opts.samples == 0 {
        return Err(Error::Config("gradcheck.samples must be >= 1".into()));
    }
    if opts.epsilon.is_nan() || opts.epsilon <= 0.0 {
        return Err(Error::Config(format!("gradcheck.epsilon must be > 0, got {}", opts.epsilon)));
    }

    model.zero_grad();
    let probs = softmax(&model.forward(images, Mode::Infer)?)?;
    let (_, grad) = cross_entropy_loss(&probs, labels)?;
    model.backward(&grad)?;

    // (registry index, name, analytic gradient) of every trainable tensor
    let mut tensors = Vec::new();
    let mut registry = 0;
    model.visit_params(&mut |p| {
        if p.trainable {
            tensors.push((registry, p.name.clone(), p.grad.clone()));
        }
        registry += 1;
    });

    let mut rng = stream(opts.seed, &[GRADCHECK_STREAM]);
    let mut chosen = HashSet::new();
    let mut samples = Vec::with_capacity(opts.samples);
    for k in 0..opts.samples {
        let (reg, name, g) = &tensors[k % tensors.len()];
        let mut elem = rng.gen_range(0..g.len());
        for _ in 0..8 {
            if chosen.insert((*reg, elem)) {
                break;
            }
            elem = rng.gen_range(0..g.len());
        }
        nudge(model, *reg, elem, opts.epsilon);
        let plus = loss(model, images, labels)?;
        nudge(model, *reg, elem, -2.0 * opts.epsilon);
        let minus = loss(model, images, labels)?;
        nudge(model, *reg, elem, opts.epsilon);
        let numeric = (plus - minus) / (2.0 * opts.epsilon);
        let analytic = g.data()[elem];
        samples.push(GradSample {
            param: name.clone(),
            index: elem,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }

    let mut per_layer: Vec<(String, f64)> = Vec::new();
    for (_, name, _) in &tensors {
        let layer = name.rsplit_once('.').map_or(name.as_str(), |(l, _)| l);
        let worst = samples
            .iter()
            .filter(|s| &s.param == name)
            .map(|s| s.rel_error)
            .fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.max(e))));
        let Some(worst) = worst else { continue };
        match per_layer.iter_mut().find(|(l, _)| l == layer) {
            Some((_, m)) => *m = m.max(worst),
            None => per_layer.push((layer.to_string(), worst)),
        }
    }
    let max_error = samples.iter().map(|s| s.rel_error).fold(0.0, f64::max);
    Ok(GradReport {
        samples,
        per_layer,
        max_error,
        tolerance: opts.tolerance,
        passed: max_error < opts.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig};
    use crate::tensor::inject_conv_weight_grad_fault;
    use crate::testutil::rand_tensor;

    fn small() -> (Model<f64>, Tensor<f64>, Vec<usize>) {
        let cfg = ModelConfig {
            input_size: 16,
            channel_plan: vec![4, 4, 8, 16],
            fc_plan: vec![12, 8],
            num_classes: 3,
            se_reduction: 4,
            ..ModelConfig::default()
        };
        let x = rand_tensor::<f64>(&[2, 16, 16, 3], 4).map(|v| 0.5 + 0.5 * v);
        (build_model(&cfg, 2).unwrap(), x, vec![0, 2])
    }

    #[test]
    fn fresh_model_passes_and_covers_every_kind() {
        let (mut m, x, y) = small();
        let r = gradient_check(&mut m, &x, &y, &GradCheckOptions::default()).unwrap();
        assert!(r.passed, "worst {:?}", r.worst());
        assert_eq!(r.samples.len(), 96);
        assert_eq!(r.covered_kinds(), ["batchnorm", "conv", "dense", "projection", "se"]);
        assert!(r.per_layer.iter().any(|(l, _)| l == "block3.se"));
    }

    #[test]
    fn corrupted_conv_backward_is_pinpointed() {
        let (mut m, x, y) = small();
        inject_conv_weight_grad_fault(true);
        let r = gradient_check(&mut m, &x, &y, &GradCheckOptions::default());
        inject_conv_weight_grad_fault(false);
        let r = r.unwrap();
        assert!(!r.passed);
        let worst = r.worst().unwrap();
        assert_eq!(layer_kind(&worst.param), "conv", "{worst:?}");
        assert!(worst.param.ends_with(".weight"));
    }

    #[test]
    fn zero_samples_is_a_config_error() {
        let (mut m, x, y) = small();
        let opts = GradCheckOptions { samples: 0, ..Default::default() };
        assert!(matches!(gradient_check(&mut m, &x, &y, &opts), Err(Error::Config(_))));
    }

    #[test]
    fn kinds_from_names() {
        assert_eq!(layer_kind("block2.proj.conv.weight"), "projection");
        assert_eq!(layer_kind("block3.se.w1"), "se");
        assert_eq!(layer_kind("block1.conv2.bias"), "conv");
        assert_eq!(layer_kind("stem.bn.gamma"), "batchnorm");
        assert_eq!(layer_kind("fc1.weight"), "dense");
        assert_eq!(layer_kind("classifier.bias"), "dense");
    }
}
