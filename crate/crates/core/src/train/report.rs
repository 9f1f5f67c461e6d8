use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::metrics::{confusion_matrix, metrics_from_confusion, roc_one_vs_rest, ConfusionMatrix, RocReport};
use super::trainer::{Evaluation, TrainingCurve};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub class: String,
    pub support: u64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
    /// `None` when the class had no positives or no negatives.
    pub auc: Option<f64>,
}

/// Every scalar metric of one evaluated partition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub partition: String,
    pub samples: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub macro_accuracy: f64,
    pub macro_sensitivity: f64,
    pub macro_specificity: f64,
    pub macro_precision: f64,
    pub macro_f1: f64,
    pub macro_auc: f64,
    pub per_class: Vec<ClassReport>,
    pub warnings: Vec<String>,
}

/// Confusion matrix, metrics and ROC curves of an evaluation.
pub fn build_report(
    eval: &Evaluation,
    class_names: &[String],
    partition: &str,
    exclude_empty: bool,
) -> Result<(EvalReport, ConfusionMatrix, RocReport)> {
    if class_names.len() != eval.classes {
        return Err(Error::DimensionMismatch {
            op: "build_report",
            axis: "classes",
            expected: eval.classes,
            actual: class_names.len(),
        });
    }
    let cm = confusion_matrix(&eval.labels, &eval.predicted, eval.classes)?;
    let m = metrics_from_confusion(&cm, exclude_empty)?;
    let roc = roc_one_vs_rest(&eval.probabilities, &eval.labels, eval.classes)?;
    let per_class = m
        .per_class
        .iter()
        .zip(&roc.per_class)
        .zip(class_names)
        .map(|((c, r), name)| ClassReport {
            class: name.clone(),
            support: c.support,
            accuracy: c.accuracy,
            sensitivity: c.sensitivity,
            specificity: c.specificity,
            precision: c.precision,
            f1: c.f1,
            auc: r.as_ref().map(|r| r.auc),
        })
        .collect();
    let mut warnings = m.warnings.clone();
    warnings.extend(roc.warnings.iter().cloned());
    let report = EvalReport {
        partition: partition.to_string(),
        samples: eval.labels.len(),
        loss: eval.loss,
        accuracy: m.accuracy,
        macro_accuracy: m.macro_accuracy,
        macro_sensitivity: m.macro_sensitivity,
        macro_specificity: m.macro_specificity,
        macro_precision: m.macro_precision,
        macro_f1: m.macro_f1,
        macro_auc: roc.macro_auc,
        per_class,
        warnings,
    };
    Ok((report, cm, roc))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_curves_csv(curve: &TrainingCurve, path: &Path) -> Result<()> {
    let mut s = String::from("epoch,train_loss,train_acc,valid_loss,valid_acc\n");
    for r in &curve.rows {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6},{:.6}",
            r.epoch, r.train_loss, r.train_acc, r.valid_loss, r.valid_acc
        );
    }
    write(path, &s)
}

/// Rows are true classes, columns predictions; both labelled by name.
pub fn write_confusion_csv(cm: &ConfusionMatrix, class_names: &[String], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["true\\predicted".to_string()];
    header.extend(class_names.iter().cloned());
    let rows = std::iter::once(header).chain(
        cm.counts
            .iter()
            .zip(class_names)
            .map(|(row, name)| std::iter::once(name.clone()).chain(row.iter().map(u64::to_string)).collect()),
    );
    for rec in rows {
        w.write_record(&rec).map_err(|e| Error::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// File-name-safe form of a class name.
pub fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes `roc_<class>.csv` (`fpr,tpr`) for every evaluated class and
/// returns the paths.
pub fn write_roc_csvs(roc: &RocReport, class_names: &[String], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for (curve, name) in roc.per_class.iter().zip(class_names) {
        let Some(curve) = curve else { continue };
        let mut s = String::from("fpr,tpr\n");
        for (fpr, tpr) in &curve.points {
            let _ = writeln!(s, "{fpr:.6},{tpr:.6}");
        }
        let path = dir.join(format!("roc_{}.csv", sanitize(name)));
        write(&path, &s)?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn write_metrics_json(report: &EvalReport, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    write(path, &text)
}
