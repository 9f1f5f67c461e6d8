//! Loss, optimizers, the training loop and evaluation metrics.

mod config;
mod gradcheck;
mod loss;
mod metrics;
mod optim;
mod report;
mod trainer;

pub use config::TrainConfig;
pub use gradcheck::{gradient_check, layer_kind, relative_error, GradCheckOptions, GradReport, GradSample, REL_ERROR_FLOOR};
pub use loss::{cross_entropy_loss, LOG_CLAMP};
pub use metrics::{
    confusion_matrix, metrics_from_confusion, pairwise_auc, roc_curve, roc_one_vs_rest, ClassMetrics, ConfusionMatrix,
    Metrics, RocCurve, RocReport,
};
pub use optim::{Optimizer, OptimizerKind, OptimizerSettings};
pub use report::{
    build_report, sanitize, write_confusion_csv, write_curves_csv, write_metrics_json, write_roc_csvs, ClassReport,
    EvalReport,
};
pub use trainer::{evaluate, train, CurveRow, Evaluation, StopReason, TrainOutcome, TrainingCurve};
