use super::{check_finite, Scalar, Tensor};
use crate::error::{Error, Result};

/// Flat input offsets of the winning element of every pooling window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_shape: Vec<usize>,
    pub argmax: Vec<usize>,
}

/// Non-overlapping `window`×`window` max pooling with stride equal to the
/// window. Spatial extents must divide evenly; there is no implicit padding.
pub fn maxpool2d<T: Scalar>(input: &Tensor<T>, window: usize) -> Result<(Tensor<T>, PoolIndices)> {
    let (n, h, w, c) = input.nhwc("maxpool2d")?;
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(Error::precondition(
            "maxpool2d",
            format!("spatial extent {h}x{w} is not divisible by window {window}"),
        ));
    }
    let (oh, ow) = (h / window, w / window);
    let x = input.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut argmax = Vec::with_capacity(n * oh * ow * c);
    for s in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best_idx = ((s * h + oy * window) * w + ox * window) * c + ch;
                    let mut best = x[best_idx];
                    for dy in 0..window {
                        for dx in 0..window {
                            let idx = ((s * h + oy * window + dy) * w + ox * window + dx) * c + ch;
                            // first maximum in scan order wins ties
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    let out = Tensor::new(&[n, oh, ow, c], out)?;
    check_finite("maxpool2d", &out);
    Ok((
        out,
        PoolIndices {
            input_shape: input.shape().to_vec(),
            argmax,
        },
    ))
}

/// Routes each output gradient to the input position that won its window.
pub fn maxpool2d_backward<T: Scalar>(grad_out: &Tensor<T>, indices: &PoolIndices) -> Result<Tensor<T>> {
    if grad_out.len() != indices.argmax.len() {
        return Err(Error::DimensionMismatch {
            op: "maxpool2d_backward",
            axis: "grad_out",
            expected: indices.argmax.len(),
            actual: grad_out.len(),
        });
    }
    let mut grad = Tensor::zeros(&indices.input_shape);
    let g = grad.data_mut();
    for (&idx, &v) in indices.argmax.iter().zip(grad_out.data()) {
        g[idx] += v;
    }
    Ok(grad)
}

/// Per-channel spatial mean: N×H×W×C → N×C.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, h, w, c) = input.nhwc("global_avg_pool")?;
    let hw = h * w;
    let scale = T::one() / T::from_usize(hw).expect("extent fits");
    let mut out = vec![T::zero(); n * c];
    for s in 0..n {
        let acc = &mut out[s * c..(s + 1) * c];
        for px in input.data()[s * hw * c..(s + 1) * hw * c].chunks_exact(c) {
            for (a, &v) in acc.iter_mut().zip(px) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a *= scale);
    }
    let out = Tensor::new(&[n, c], out)?;
    check_finite("global_avg_pool", &out);
    Ok(out)
}

/// Spreads each channel gradient uniformly over the H×W positions it averaged.
pub fn global_avg_pool_backward<T: Scalar>(grad_out: &Tensor<T>, input_shape: &[usize]) -> Result<Tensor<T>> {
    let [n, h, w, c] = input_shape[..] else {
        return Err(Error::precondition("global_avg_pool_backward", "input shape must be rank 4"));
    };
    if grad_out.shape() != [n, c] {
        return Err(Error::precondition(
            "global_avg_pool_backward",
            format!("grad_out shape {:?}, expected [{n}, {c}]", grad_out.shape()),
        ));
    }
    let scale = T::one() / T::from_usize(h * w).expect("extent fits");
    let mut data = Vec::with_capacity(n * h * w * c);
    for s in 0..n {
        let g = &grad_out.data()[s * c..(s + 1) * c];
        for _ in 0..h * w {
            data.extend(g.iter().map(|&v| v * scale));
        }
    }
    Tensor::new(input_shape, data)
}
