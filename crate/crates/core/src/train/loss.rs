use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Smallest probability fed to the logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// Mean negative log-likelihood of `labels` under row-wise `probabilities`,
/// with the gradient of the softmax-composed loss w.r.t. the logits,
/// `(p - onehot) / N`.
pub fn cross_entropy_loss<T: Scalar>(probabilities: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let (n, c) = probabilities.matrix("cross_entropy_loss")?;
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            op: "cross_entropy_loss",
            axis: "batch",
            expected: n,
            actual: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::LabelOutOfRange { label: bad, classes: c });
    }
    let inv_n = T::one() / T::from_f64_lossy(n as f64);
    let clamp = T::from_f64_lossy(LOG_CLAMP);
    let mut loss = T::zero();
    let mut grad = probabilities.clone();
    for (row, &label) in grad.data_mut().chunks_exact_mut(c).zip(labels) {
        let p = row[label];
        // NaN must survive the clamp so divergence is detectable
        loss -= if p.is_nan() { p } else { p.max(clamp).ln() };
        row[label] -= T::one();
        for g in row.iter_mut() {
            *g *= inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}
