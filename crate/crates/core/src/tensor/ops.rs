use super::scalar::{gemm, MatRef};
use super::{check_finite, Scalar, Tensor};
use crate::error::{Error, Result};

/// `input · weights + bias` for an N×D_in input and D_in×D_out weights.
pub fn dense_affine<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d_in) = input.matrix("dense_affine")?;
    let (w_in, d_out) = weights.matrix("dense_affine")?;
    if w_in != d_in {
        return Err(Error::DimensionMismatch {
            op: "dense_affine",
            axis: "inner",
            expected: w_in,
            actual: d_in,
        });
    }
    if bias.len() != d_out {
        return Err(Error::DimensionMismatch {
            op: "dense_affine",
            axis: "bias",
            expected: d_out,
            actual: bias.len(),
        });
    }
    let mut out: Vec<T> = bias.data().iter().copied().cycle().take(n * d_out).collect();
    gemm(
        MatRef::new(input.data(), n, d_in),
        MatRef::new(weights.data(), d_in, d_out),
        T::one(),
        &mut out,
    );
    let out = Tensor::new(&[n, d_out], out)?;
    check_finite("dense_affine", &out);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_affine_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let (n, d_in) = input.matrix("dense_affine_backward")?;
    let (_, d_out) = weights.matrix("dense_affine_backward")?;
    if grad_out.shape() != [n, d_out] {
        return Err(Error::precondition(
            "dense_affine_backward",
            format!("grad_out shape {:?}, expected [{n}, {d_out}]", grad_out.shape()),
        ));
    }
    let x = MatRef::new(input.data(), n, d_in);
    let w = MatRef::new(weights.data(), d_in, d_out);
    let dy = MatRef::new(grad_out.data(), n, d_out);
    let mut gx = vec![T::zero(); n * d_in];
    gemm(dy, w.t(), T::zero(), &mut gx);
    let mut gw = vec![T::zero(); d_in * d_out];
    gemm(x.t(), dy, T::zero(), &mut gw);
    let mut gb = vec![T::zero(); d_out];
    for row in grad_out.data().chunks_exact(d_out) {
        for (b, &g) in gb.iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok(DenseGrads {
        input: Tensor::new(&[n, d_in], gx)?,
        weights: Tensor::new(&[d_in, d_out], gw)?,
        bias: Tensor::new(&[d_out], gb)?,
    })
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// ReLU'(0) is taken as 0.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

/// Logistic function, clamped so outputs stay strictly inside (0, 1) even
/// where the exact value rounds to an endpoint.
pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let two = T::one() + T::one();
    let hi = T::one() - T::epsilon() / two;
    let lo = T::min_positive_value();
    x.map(|v| {
        // branch keeps exp() argument non-positive
        let s = if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        };
        s.max(lo).min(hi)
    })
}

/// Takes the sigmoid *output* `s`; derivative is `s·(1−s)`.
pub fn sigmoid_backward<T: Scalar>(s: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = s
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect();
    Tensor::new(s.shape(), data).expect("same shape")
}

/// Row-wise softmax over an N×C tensor, computed with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c) = logits.matrix("softmax")?;
    if c < 2 {
        return Err(Error::precondition("softmax", format!("need at least 2 classes, got {c}")));
    }
    let mut out = logits.data().to_vec();
    for row in out.chunks_exact_mut(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    Tensor::new(logits.shape(), out)
}
