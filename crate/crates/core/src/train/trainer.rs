use std::path::Path;

use serde::Serialize;

use super::loss::cross_entropy_loss;
use super::optim::Optimizer;
use super::TrainConfig;
use crate::data::{AugmentConfig, BatchIterator, Sample, Split};
use crate::error::{Error, Result};
use crate::layers::{Mode, Parameterized};
use crate::model::{argmax_prediction, Model};
use crate::tensor::softmax;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub valid_loss: f64,
    pub valid_acc: f64,
}

/// One row per completed epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainingCurve {
    pub rows: Vec<CurveRow>,
}

/// Inference-mode pass over a sample list.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub classes: usize,
    pub labels: Vec<usize>,
    pub predicted: Vec<usize>,
    /// Row-major `N x C` softmax probabilities.
    pub probabilities: Vec<f64>,
    pub loss: f64,
    pub accuracy: f64,
}

/// Evaluates in inference mode; parameters and running statistics are not
/// modified.
pub fn evaluate(model: &mut Model<f32>, root: &Path, samples: &[Sample], batch_size: usize) -> Result<Evaluation> {
    let classes = model.config().num_classes;
    let size = model.config().input_size;
    let mut out = Evaluation {
        classes,
        labels: Vec::with_capacity(samples.len()),
        predicted: Vec::with_capacity(samples.len()),
        probabilities: Vec::with_capacity(samples.len() * classes),
        loss: 0.0,
        accuracy: 0.0,
    };
    let mut loss_sum = 0.0;
    for batch in BatchIterator::sequential(root, samples, size, batch_size)? {
        let batch = batch?;
        let probs = softmax(&model.forward(&batch.images, Mode::Infer)?)?;
        let (loss, _) = cross_entropy_loss(&probs, &batch.labels)?;
        loss_sum += loss as f64 * batch.labels.len() as f64;
        for row in probs.data().chunks_exact(classes) {
            out.predicted.push(argmax_prediction(row).class);
            out.probabilities.extend(row.iter().map(|&p| p as f64));
        }
        out.labels.extend_from_slice(&batch.labels);
    }
    let n = out.labels.len() as f64;
    out.loss = loss_sum / n;
    out.accuracy = out.labels.iter().zip(&out.predicted).filter(|(a, b)| a == b).count() as f64 / n;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EpochLimit,
    Patience,
    TargetReached,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights after the final epoch.
    pub last: Model<f32>,
    /// Weights from the epoch with the highest validation accuracy
    /// (earliest on ties).
    pub best: Model<f32>,
    pub best_epoch: usize,
    pub best_valid_accuracy: f64,
    pub curve: TrainingCurve,
    pub stop_reason: StopReason,
}

/// Mini-batch training with per-epoch evaluation of the train and valid
/// parts. `on_epoch` sees each curve row as soon as it is complete.
pub fn train(
    mut model: Model<f32>,
    root: &Path,
    split: &Split,
    cfg: &TrainConfig,
    augment: Option<&AugmentConfig>,
    on_epoch: &mut dyn FnMut(&CurveRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if let Some(a) = augment {
        a.validate()?;
    }
    if split.train.is_empty() || split.valid.is_empty() {
        return Err(Error::Data("training needs non-empty train and valid parts".into()));
    }
    let size = model.config().input_size;
    model.reseed_dropout(cfg.seed);
    let mut optimizer = Optimizer::new(cfg.optimizer_settings());
    let mut curve = TrainingCurve::default();
    let mut best: Option<(usize, f64, Model<f32>)> = None;
    let mut since_best = 0;
    let mut stop_reason = StopReason::EpochLimit;

    for epoch in 1..=cfg.epochs {
        let batches = BatchIterator::training(root, &split.train, size, cfg.batch_size, cfg.seed, epoch as u64, augment)?;
        for (b, batch) in batches.enumerate() {
            let batch = batch?;
            let probs = softmax(&model.forward(&batch.images, Mode::Train)?)?;
            let (loss, grad) = cross_entropy_loss(&probs, &batch.labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b + 1,
                    learning_rate: cfg.learning_rate,
                });
            }
            model.zero_grad();
            model.backward(&grad)?;
            optimizer.step(&mut model);
        }

        let tr = evaluate(&mut model, root, &split.train, cfg.batch_size)?;
        let va = evaluate(&mut model, root, &split.valid, cfg.batch_size)?;
        if !tr.loss.is_finite() || !va.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: 0,
                learning_rate: cfg.learning_rate,
            });
        }
        let row = CurveRow {
            epoch,
            train_loss: tr.loss,
            train_acc: tr.accuracy,
            valid_loss: va.loss,
            valid_acc: va.accuracy,
        };
        curve.rows.push(row);
        on_epoch(&row);

        if best.as_ref().is_none_or(|(_, acc, _)| va.accuracy > *acc) {
            best = Some((epoch, va.accuracy, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if cfg.target_train_accuracy.is_some_and(|t| tr.accuracy >= t) {
            stop_reason = StopReason::TargetReached;
            break;
        }
        if cfg.patience.is_some_and(|p| since_best >= p) {
            stop_reason = StopReason::Patience;
            break;
        }
    }
    let (best_epoch, best_valid_accuracy, best) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        last: model,
        best,
        best_epoch,
        best_valid_accuracy,
        curve,
        stop_reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_dataset, scan_dataset, split_dataset, SynthOptions};
    use crate::model::{build_model, ModelConfig};
    use crate::tensor::Tensor;

    fn tiny_cfg(classes: usize) -> ModelConfig {
        ModelConfig {
            input_size: 16,
            channel_plan: vec![4, 4, 8, 16],
            fc_plan: vec![16],
            num_classes: classes,
            se_reduction: 4,
            dropout: 0.2,
            ..ModelConfig::default()
        }
    }

    fn synth(dir: &Path) -> Split {
        let opts = SynthOptions {
            num_classes: 3,
            per_class: 10,
            image_size: 16,
            noise: 0.05,
        };
        generate_synthetic_dataset(&opts, 3, dir).unwrap();
        split_dataset(&scan_dataset(dir).unwrap(), 3).unwrap()
    }

    fn trainable(m: &Model<f32>) -> Vec<Tensor<f32>> {
        let mut out = Vec::new();
        m.visit_params(&mut |p| {
            if p.trainable {
                out.push(p.value.clone());
            }
        });
        out
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_leaves_weights_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let split = synth(dir.path());
        let model = build_model::<f32>(&tiny_cfg(3), 1).unwrap();
        let before = trainable(&model);
        let c = TrainConfig { learning_rate: 0.0, ..cfg(1) };
        let out = train(model, dir.path(), &split, &c, Some(&AugmentConfig::default()), &mut |_| {}).unwrap();
        assert_eq!(trainable(&out.last), before);
    }

    #[test]
    fn same_seed_gives_identical_curves_and_weights() {
        let dir = tempfile::tempdir().unwrap();
        let split = synth(dir.path());
        let run = || {
            let model = build_model::<f32>(&tiny_cfg(3), 1).unwrap();
            train(model, dir.path(), &split, &cfg(2), Some(&AugmentConfig::default()), &mut |_| {}).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.last.snapshot(), b.last.snapshot());
        assert_eq!(a.curve.rows.iter().map(|r| r.epoch).collect::<Vec<_>>(), [1, 2]);
        assert!(a.curve.rows.iter().all(|r| (0.0..=1.0).contains(&r.train_acc)));
    }

    #[test]
    fn evaluation_does_not_mutate_the_model() {
        let dir = tempfile::tempdir().unwrap();
        let split = synth(dir.path());
        let mut model = build_model::<f32>(&tiny_cfg(3), 1).unwrap();
        let x = Tensor::from_fn(&[4, 16, 16, 3], |i| (i % 13) as f32 / 13.0);
        model.forward(&x, Mode::Train).unwrap();
        let before = model.snapshot();
        let ev = evaluate(&mut model, dir.path(), &split.valid, 4).unwrap();
        assert_eq!(model.snapshot(), before);
        assert_eq!(ev.labels.len(), split.valid.len());
        assert_eq!(ev.probabilities.len(), 3 * split.valid.len());
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let split = synth(dir.path());
        let mut model = build_model::<f32>(&tiny_cfg(3), 1).unwrap();
        model.visit_params_mut(&mut |p| {
            if p.name == "classifier.bias" {
                p.value.data_mut()[1] = f32::NAN;
            }
        });
        match train(model, dir.path(), &split, &cfg(3), None, &mut |_| {}) {
            Err(Error::NonFiniteLoss { epoch, batch, learning_rate }) => {
                assert_eq!((epoch, batch), (1, 1));
                assert_eq!(learning_rate, 1e-3);
            }
            other => panic!("expected a non-finite loss abort, got {:?}", other.map(|o| o.curve)),
        }
    }

    #[test]
    fn label_beyond_model_classes_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let split = synth(dir.path());
        let model = build_model::<f32>(&tiny_cfg(2), 1).unwrap();
        assert!(matches!(
            train(model, dir.path(), &split, &cfg(1), None, &mut |_| {}),
            Err(Error::LabelOutOfRange { classes: 2, .. })
        ));
    }
}
