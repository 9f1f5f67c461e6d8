//! The FourCropNet graph.
//!
//! ```text
//! Conv3x3(3→32) → BN → ReLU → MaxPool2        (H/2, W/2, 32)
//! ResBlock(32→32)                             (H/2, W/2, 32)
//! ResBlock(32→64, 1x1 projection) → MaxPool2  (H/4, W/4, 64)
//! ResBlock(64→128, projection, SE) → MaxPool2 (H/8, W/8, 128)
//! head: global average pool (128) | flatten (H/8·W/8·128)
//! Dense 256 → ReLU → Dropout(0.5)
//! Dense 128 → ReLU → Dropout(0.5)
//! Dense num_classes (logits)
//! ```
//!
//! With the default 224×224 input the feature maps after the stem pool,
//! block 1, block 2's pool and block 3's pool are (112,112,32), (112,112,32),
//! (56,56,64) and (28,28,128).

mod checkpoint;
mod config;
mod summary;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use config::{Head, ModelConfig};
pub use summary::{count_parameters, head_totals, render_summary, summarize, ParamTable, SummaryRow};

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{BatchNorm, Conv2d, Dense, Dropout, Mode, Param, Parameterized, ResidualBlock, ResidualBlockConfig};
use crate::rng::stream;
use crate::tensor::{
    global_avg_pool, global_avg_pool_backward, maxpool2d, maxpool2d_backward, relu, relu_backward,
    softmax, ConvSpec, PoolIndices, Scalar, Tensor,
};

const INIT_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

/// Shape of an intermediate activation, recorded during a probed forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Probe {
    pub layer: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone)]
struct HiddenLayer<T> {
    dense: Dense<T>,
    dropout: Dropout<T>,
    pre_act: Option<Tensor<T>>,
}

#[derive(Debug, Clone, Default)]
struct Caches<T> {
    stem_pre_act: Option<Tensor<T>>,
    pools: [Option<PoolIndices>; 3],
    head_input_shape: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    cfg: ModelConfig,
    stem_conv: Conv2d<T>,
    stem_bn: BatchNorm<T>,
    block1: ResidualBlock<T>,
    block2: ResidualBlock<T>,
    block3: ResidualBlock<T>,
    hidden: Vec<HiddenLayer<T>>,
    classifier: Dense<T>,
    dropout_rng: ChaCha8Rng,
    caches: Caches<T>,
}

/// Builds a freshly initialized model. Initialization depends only on `cfg`
/// and `seed`.
pub fn build_model<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<Model<T>> {
    cfg.validate()?;
    let mut rng = stream(seed, &[INIT_STREAM]);
    let [c0, c1, c2, c3] = cfg.channel_plan[..] else {
        unreachable!("validated")
    };
    let stem_conv = Conv2d::new("stem.conv", ConvSpec::same(3, 3, c0), &mut rng);
    let stem_bn = BatchNorm::new("stem.bn", c0);
    let block1 = ResidualBlock::new("block1", ResidualBlockConfig::new(c0, c1), &mut rng)?;
    let block2 = ResidualBlock::new("block2", ResidualBlockConfig::new(c1, c2), &mut rng)?;
    let block3 = ResidualBlock::new("block3", ResidualBlockConfig::new(c2, c3).with_se(cfg.se_reduction), &mut rng)?;
    let mut width = cfg.head_features();
    let mut hidden = Vec::with_capacity(cfg.fc_plan.len());
    for (i, &units) in cfg.fc_plan.iter().enumerate() {
        hidden.push(HiddenLayer {
            dense: Dense::new(&format!("fc{}", i + 1), width, units, &mut rng),
            dropout: Dropout::new(cfg.dropout)?,
            pre_act: None,
        });
        width = units;
    }
    let classifier = Dense::new("classifier", width, cfg.num_classes, &mut rng);
    Ok(Model {
        cfg: cfg.clone(),
        stem_conv,
        stem_bn,
        block1,
        block2,
        block3,
        hidden,
        classifier,
        dropout_rng: stream(seed, &[DROPOUT_STREAM]),
        caches: Caches::default(),
    })
}

fn take<T>(slot: &mut Option<T>, what: &str) -> Result<T> {
    slot.take()
        .ok_or_else(|| Error::precondition("model_backward", format!("{what}: backward called before forward")))
}

impl<T: Scalar> Model<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Restarts the dropout mask stream.
    pub fn reseed_dropout(&mut self, seed: u64) {
        self.dropout_rng = stream(seed, &[DROPOUT_STREAM]);
    }

    pub fn forward(&mut self, images: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.forward_impl(images, mode, None)
    }

    /// Forward pass that also records the shape after every stage.
    pub fn forward_probed(&mut self, images: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Vec<Probe>)> {
        let mut probes = Vec::new();
        let logits = self.forward_impl(images, mode, Some(&mut probes))?;
        Ok((logits, probes))
    }

    fn check_input(&self, images: &Tensor<T>) -> Result<()> {
        let (_, h, w, c) = images.nhwc("model_forward")?;
        let s = self.cfg.input_size;
        for (axis, expected, actual) in [("height", s, h), ("width", s, w), ("channels", 3, c)] {
            if expected != actual {
                return Err(Error::DimensionMismatch {
                    op: "model_forward",
                    axis,
                    expected,
                    actual,
                });
            }
        }
        Ok(())
    }

    fn forward_impl(&mut self, images: &Tensor<T>, mode: Mode, mut probes: Option<&mut Vec<Probe>>) -> Result<Tensor<T>> {
        self.check_input(images)?;
        let mut record = |layer: &str, t: &Tensor<T>| {
            if let Some(p) = probes.as_deref_mut() {
                p.push(Probe {
                    layer: layer.to_string(),
                    shape: t.shape().to_vec(),
                });
            }
        };

        let x = self.stem_conv.forward(images)?;
        record("stem.conv", &x);
        let x = self.stem_bn.forward(&x, mode)?;
        record("stem.bn", &x);
        let (pooled, idx) = maxpool2d(&relu(&x), 2)?;
        self.caches.stem_pre_act = Some(x);
        self.caches.pools[0] = Some(idx);
        let x = pooled;
        record("stem.pool", &x);

        let x = self.block1.forward(&x, mode)?;
        record("block1", &x);
        let x = self.block2.forward(&x, mode)?;
        record("block2", &x);
        let (x, idx) = maxpool2d(&x, 2)?;
        self.caches.pools[1] = Some(idx);
        record("block2.pool", &x);
        let x = self.block3.forward(&x, mode)?;
        record("block3", &x);
        let (x, idx) = maxpool2d(&x, 2)?;
        self.caches.pools[2] = Some(idx);
        record("block3.pool", &x);

        self.caches.head_input_shape = Some(x.shape().to_vec());
        let mut x = match self.cfg.head {
            Head::Gap => global_avg_pool(&x)?,
            Head::Flatten => {
                let n = x.shape()[0];
                let d = x.len() / n;
                x.reshape(&[n, d])?
            }
        };
        record(self.cfg.head.layer_name(), &x);

        for layer in &mut self.hidden {
            let pre = layer.dense.forward(&x)?;
            x = layer.dropout.forward(&relu(&pre), mode, &mut self.dropout_rng);
            layer.pre_act = Some(pre);
            record(&layer.dense.weight.name.replace(".weight", ""), &x);
        }
        let logits = self.classifier.forward(&x)?;
        record("classifier", &logits);
        Ok(logits)
    }

    /// Backpropagates `d loss / d logits` through the last forward pass,
    /// accumulating parameter gradients. Returns the gradient w.r.t. the images.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = self.classifier.backward(grad_logits)?;
        for layer in self.hidden.iter_mut().rev() {
            let pre = take(&mut layer.pre_act, "dense")?;
            g = layer.dense.backward(&relu_backward(&pre, &layer.dropout.backward(&g)))?;
        }
        let head_shape = take(&mut self.caches.head_input_shape, "head")?;
        let g = match self.cfg.head {
            Head::Gap => global_avg_pool_backward(&g, &head_shape)?,
            Head::Flatten => g.reshape(&head_shape)?,
        };
        let g = maxpool2d_backward(&g, &take(&mut self.caches.pools[2], "pool3")?)?;
        let g = self.block3.backward(&g)?;
        let g = maxpool2d_backward(&g, &take(&mut self.caches.pools[1], "pool2")?)?;
        let g = self.block2.backward(&g)?;
        let g = self.block1.backward(&g)?;
        let g = maxpool2d_backward(&g, &take(&mut self.caches.pools[0], "stem pool")?)?;
        let pre = take(&mut self.caches.stem_pre_act, "stem relu")?;
        let g = self.stem_bn.backward(&relu_backward(&pre, &g))?;
        self.stem_conv.backward(&g)
    }

    /// Softmax probabilities in inference mode.
    pub fn probabilities(&mut self, images: &Tensor<T>) -> Result<Tensor<T>> {
        softmax(&self.forward(images, Mode::Infer)?)
    }

    /// Arg-max class (lowest index on ties) and its softmax probability.
    pub fn predict(&mut self, images: &Tensor<T>) -> Result<Vec<Prediction>> {
        let probs = self.probabilities(images)?;
        Ok(probs
            .data()
            .chunks_exact(self.cfg.num_classes)
            .map(argmax_prediction)
            .collect())
    }

    /// Values of every parameter, in registry order.
    pub fn snapshot(&self) -> Vec<Tensor<T>> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.push(p.value.clone()));
        out
    }

    pub fn restore(&mut self, values: &[Tensor<T>]) -> Result<()> {
        let mut count = 0;
        self.visit_params(&mut |_| count += 1);
        if count != values.len() {
            return Err(Error::precondition(
                "restore",
                format!("expected {count} parameter tensors, got {}", values.len()),
            ));
        }
        let mut i = 0;
        let mut bad = None;
        self.visit_params_mut(&mut |p| {
            if p.value.shape() == values[i].shape() {
                p.value = values[i].clone();
            } else if bad.is_none() {
                bad = Some(p.name.clone());
            }
            i += 1;
        });
        match bad {
            Some(name) => Err(Error::precondition("restore", format!("shape mismatch for `{name}`"))),
            None => Ok(()),
        }
    }

    /// The same model in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut out = build_model::<U>(&self.cfg, 0).expect("config already validated");
        let values: Vec<Tensor<U>> = self.snapshot().iter().map(Tensor::cast).collect();
        out.restore(&values).expect("same architecture");
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |p| names.push(p.name.clone()));
        names
    }
}

pub(crate) fn argmax_prediction<T: Scalar>(row: &[T]) -> Prediction {
    let mut best = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = i;
        }
    }
    Prediction {
        class: best,
        confidence: row[best].to_f64_lossy(),
    }
}

impl<T> Parameterized<T> for Model<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.stem_conv.visit_params(f);
        self.stem_bn.visit_params(f);
        self.block1.visit_params(f);
        self.block2.visit_params(f);
        self.block3.visit_params(f);
        for layer in &self.hidden {
            layer.dense.visit_params(f);
        }
        self.classifier.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.stem_conv.visit_params_mut(f);
        self.stem_bn.visit_params_mut(f);
        self.block1.visit_params_mut(f);
        self.block2.visit_params_mut(f);
        self.block3.visit_params_mut(f);
        for layer in &mut self.hidden {
            layer.dense.visit_params_mut(f);
        }
        self.classifier.visit_params_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::rand_tensor;

    fn tiny() -> ModelConfig {
        ModelConfig {
            input_size: 16,
            channel_plan: vec![4, 4, 8, 16],
            fc_plan: vec![8, 8],
            num_classes: 5,
            se_reduction: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn shape_ladder_at_224() {
        let mut model = build_model::<f32>(&ModelConfig::default(), 1).unwrap();
        let x = rand_tensor::<f32>(&[2, 224, 224, 3], 2).map(|v| 0.5 + 0.5 * v);
        let (logits, probes) = model.forward_probed(&x, Mode::Infer).unwrap();
        assert_eq!(logits.shape(), &[2, 15]);
        let shape_of = |name: &str| probes.iter().find(|p| p.layer == name).unwrap().shape.clone();
        assert_eq!(shape_of("stem.pool"), [2, 112, 112, 32]);
        assert_eq!(shape_of("block1"), [2, 112, 112, 32]);
        assert_eq!(shape_of("block2.pool"), [2, 56, 56, 64]);
        assert_eq!(shape_of("block3.pool"), [2, 28, 28, 128]);
        assert_eq!(shape_of("head.gap"), [2, 128]);
    }

    #[test]
    fn wrong_input_size_is_a_shape_error() {
        let mut model = build_model::<f32>(&tiny(), 1).unwrap();
        let x = Tensor::zeros(&[1, 24, 24, 3]);
        assert!(matches!(
            model.forward(&x, Mode::Infer),
            Err(Error::DimensionMismatch { axis: "height", expected: 16, actual: 24, .. })
        ));
    }

    #[test]
    fn same_seed_same_init_and_outputs() {
        let mut a = build_model::<f32>(&tiny(), 9).unwrap();
        let mut b = build_model::<f32>(&tiny(), 9).unwrap();
        assert_eq!(a.snapshot(), b.snapshot());
        let c = build_model::<f32>(&tiny(), 10).unwrap();
        assert_ne!(a.snapshot(), c.snapshot());
        let x = rand_tensor::<f32>(&[3, 16, 16, 3], 4);
        assert_eq!(a.forward(&x, Mode::Train).unwrap(), b.forward(&x, Mode::Train).unwrap());
    }

    #[test]
    fn duplicate_images_give_identical_rows_in_infer_mode() {
        let mut model = build_model::<f32>(&tiny(), 3).unwrap();
        let img = rand_tensor::<f32>(&[16, 16, 3], 5);
        let x = Tensor::stack(&[img.clone(), img]).unwrap();
        let logits = model.forward(&x, Mode::Infer).unwrap();
        let (r0, r1) = logits.data().split_at(5);
        for (a, b) in r0.iter().zip(r1) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn predictions_are_argmax_with_max_probability() {
        let mut model = build_model::<f64>(&tiny(), 3).unwrap();
        let x = rand_tensor::<f64>(&[4, 16, 16, 3], 6);
        let probs = model.probabilities(&x).unwrap();
        let preds = model.predict(&x).unwrap();
        for (row, pred) in probs.data().chunks(5).zip(&preds) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            let max = row.iter().copied().fold(f64::MIN, f64::max);
            assert_eq!(pred.confidence, max);
            assert_eq!(row.iter().position(|&p| p == max).unwrap(), pred.class);
        }
        assert_eq!(argmax_prediction(&[0.25f64, 0.5, 0.5]).class, 1);
    }

    #[test]
    fn parameter_names_are_unique() {
        let model = build_model::<f32>(&ModelConfig::default(), 0).unwrap();
        let names = model.param_names();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert_eq!(names.first().unwrap(), "stem.conv.weight");
        assert_eq!(names.last().unwrap(), "classifier.bias");
    }

    #[test]
    fn count_is_independent_of_mode_and_batch() {
        let mut model = build_model::<f32>(&tiny(), 0).unwrap();
        let before = count_parameters(&model);
        model.forward(&rand_tensor(&[3, 16, 16, 3], 1), Mode::Train).unwrap();
        model.forward(&rand_tensor(&[1, 16, 16, 3], 1), Mode::Infer).unwrap();
        assert_eq!(count_parameters(&model), before);
    }
}
