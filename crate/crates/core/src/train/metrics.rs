use serde::Serialize;

use crate::error::{Error, Result};

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|k| self.counts[k][k]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }
}

pub fn confusion_matrix(labels: &[usize], predicted: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if labels.len() != predicted.len() {
        return Err(Error::DimensionMismatch {
            op: "confusion_matrix",
            axis: "samples",
            expected: labels.len(),
            actual: predicted.len(),
        });
    }
    let mut counts = vec![vec![0u64; classes]; classes];
    for (&t, &p) in labels.iter().zip(predicted) {
        for l in [t, p] {
            if l >= classes {
                return Err(Error::LabelOutOfRange { label: l, classes });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// One-vs-rest figures for a single class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub support: u64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    /// Trace over total.
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_accuracy: f64,
    pub macro_sensitivity: f64,
    pub macro_specificity: f64,
    pub macro_precision: f64,
    pub macro_f1: f64,
    /// Zero-denominator cases; the affected metric is reported as 0.
    pub warnings: Vec<String>,
}

fn ratio(num: u64, den: u64, what: &str, class: usize, warnings: &mut Vec<String>) -> f64 {
    if den == 0 {
        warnings.push(format!("class {class}: {what} undefined (zero denominator), reported as 0"));
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class and macro (unweighted mean) metrics. With `exclude_empty`,
/// classes without true samples are left out of the macro averages.
pub fn metrics_from_confusion(confusion: &ConfusionMatrix, exclude_empty: bool) -> Result<Metrics> {
    let c = confusion.classes();
    let total = confusion.total();
    if c == 0 || total == 0 || confusion.counts.iter().any(|r| r.len() != c) {
        return Err(Error::precondition("metrics_from_confusion", "confusion matrix is empty or not square"));
    }
    let mut warnings = Vec::new();
    let rows = confusion.row_sums();
    let mut per_class = Vec::with_capacity(c);
    for k in 0..c {
        let tp = confusion.counts[k][k];
        let fn_ = rows[k] - tp;
        let fp = (0..c).map(|r| confusion.counts[r][k]).sum::<u64>() - tp;
        let tn = total - tp - fn_ - fp;
        let sensitivity = ratio(tp, tp + fn_, "sensitivity", k, &mut warnings);
        let specificity = ratio(tn, tn + fp, "specificity", k, &mut warnings);
        let precision = ratio(tp, tp + fp, "precision", k, &mut warnings);
        let f1 = if precision + sensitivity > 0.0 {
            2.0 * precision * sensitivity / (precision + sensitivity)
        } else {
            0.0
        };
        per_class.push(ClassMetrics {
            support: rows[k],
            accuracy: (tp + tn) as f64 / total as f64,
            sensitivity,
            specificity,
            precision,
            f1,
        });
    }
    let included: Vec<&ClassMetrics> = per_class.iter().filter(|m| !exclude_empty || m.support > 0).collect();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if included.is_empty() {
            0.0
        } else {
            included.iter().map(|m| f(m)).sum::<f64>() / included.len() as f64
        }
    };
    Ok(Metrics {
        accuracy: confusion.trace() as f64 / total as f64,
        macro_accuracy: mean(|m| m.accuracy),
        macro_sensitivity: mean(|m| m.sensitivity),
        macro_specificity: mean(|m| m.specificity),
        macro_precision: mean(|m| m.precision),
        macro_f1: mean(|m| m.f1),
        per_class,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    /// (FPR, TPR) from (0, 0) to (1, 1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC of `scores` for the binary labels `positive`, sweeping the threshold
/// down through the distinct scores. `None` when either class is absent.
///
/// The trapezoidal area is accumulated on integer counts, which makes it
/// equal, bit for bit, to the pairwise-ordering probability.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Option<RocCurve> {
    assert_eq!(scores.len(), positive.len(), "one label per score");
    let p = positive.iter().filter(|&&b| b).count() as u128;
    let n = positive.len() as u128 - p;
    if p == 0 || n == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u128, 0u128);
    let mut twice_area = 0u128;
    let mut i = 0;
    while i < order.len() {
        let (tp0, fp0) = (tp, fp);
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += (fp - fp0) * (tp + tp0);
        points.push((fp as f64 / n as f64, tp as f64 / p as f64));
    }
    Some(RocCurve {
        points,
        auc: twice_area as f64 / (2 * p * n) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocReport {
    /// One-vs-rest curve per class; `None` for classes that were skipped.
    pub per_class: Vec<Option<RocCurve>>,
    /// Mean over the evaluated classes.
    pub macro_auc: f64,
    pub warnings: Vec<String>,
}

/// One-vs-rest ROC on row-major `N x C` probabilities.
pub fn roc_one_vs_rest(probabilities: &[f64], labels: &[usize], classes: usize) -> Result<RocReport> {
    if labels.is_empty() || probabilities.len() != labels.len() * classes {
        return Err(Error::precondition(
            "roc_one_vs_rest",
            format!("{} scores for {} samples x {classes} classes", probabilities.len(), labels.len()),
        ));
    }
    let mut per_class = Vec::with_capacity(classes);
    let mut warnings = Vec::new();
    for k in 0..classes {
        let scores: Vec<f64> = probabilities.iter().skip(k).step_by(classes).copied().collect();
        let positive: Vec<bool> = labels.iter().map(|&l| l == k).collect();
        let curve = roc_curve(&scores, &positive);
        if curve.is_none() {
            warnings.push(format!("class {k}: ROC skipped, needs at least one positive and one negative sample"));
        }
        per_class.push(curve);
    }
    let aucs: Vec<f64> = per_class.iter().flatten().map(|c| c.auc).collect();
    let macro_auc = if aucs.is_empty() { 0.0 } else { aucs.iter().sum::<f64>() / aucs.len() as f64 };
    Ok(RocReport {
        per_class,
        macro_auc,
        warnings,
    })
}

/// Fraction of (positive, negative) pairs ordered correctly, ties counting
/// one half. Quadratic; intended as a reference.
pub fn pairwise_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let (mut twice_correct, mut pairs) = (0u128, 0u128);
    for (i, &si) in scores.iter().enumerate() {
        if !positive[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if positive[j] {
                continue;
            }
            pairs += 1;
            twice_correct += match si.partial_cmp(&sj) {
                Some(std::cmp::Ordering::Greater) => 2,
                Some(std::cmp::Ordering::Equal) => 1,
                _ => 0,
            };
        }
    }
    (pairs > 0).then(|| twice_correct as f64 / (2 * pairs) as f64)
}
