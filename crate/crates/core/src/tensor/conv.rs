use std::cell::Cell;

use super::scalar::{gemm, MatRef};
use super::{check_finite, Scalar, Tensor};
use crate::error::{Error, Result};

/// Geometry of a 2-D convolution with zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    /// Square kernel, stride 1, "same" padding for odd kernels.
    pub fn same(kernel: usize, in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            kernel: (kernel, kernel),
            stride: 1,
            padding: kernel / 2,
            in_channels,
            out_channels,
        }
    }

    /// `floor((extent - k + 2p) / s) + 1`, or `None` when the window does not fit.
    pub fn output_extent(&self, extent: usize, kernel: usize) -> Option<usize> {
        if self.stride == 0 || extent + 2 * self.padding < kernel {
            return None;
        }
        Some((extent + 2 * self.padding - kernel) / self.stride + 1)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = self.output_extent(h, self.kernel.0);
        let ow = self.output_extent(w, self.kernel.1);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::precondition(
                "conv2d",
                format!("kernel {:?} with padding {} and stride {} does not fit a {h}x{w} input",
                    self.kernel, self.padding, self.stride),
            )),
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.kernel.0, self.kernel.1, self.in_channels, self.out_channels]
    }

    fn patch_len(&self) -> usize {
        self.kernel.0 * self.kernel.1 * self.in_channels
    }
}

thread_local! {
    static WEIGHT_GRAD_FAULT: Cell<bool> = const { Cell::new(false) };
}

/// Test fixture: when enabled on the current thread, the weight gradient of
/// every convolution is computed with its padding offset by one pixel.
#[doc(hidden)]
pub fn inject_conv_weight_grad_fault(enabled: bool) {
    WEIGHT_GRAD_FAULT.with(|f| f.set(enabled));
}

fn check_operands<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<(usize, usize, usize, usize)> {
    let (n, h, w, c) = input.nhwc("conv2d")?;
    if spec.stride == 0 {
        return Err(Error::precondition("conv2d", "stride must be >= 1"));
    }
    if c != spec.in_channels {
        return Err(Error::DimensionMismatch {
            op: "conv2d",
            axis: "input channels",
            expected: spec.in_channels,
            actual: c,
        });
    }
    let ws = spec.weight_shape();
    let axes = ["kernel height", "kernel width", "weight in_channels", "weight out_channels"];
    if weights.rank() != 4 {
        return Err(Error::precondition(
            "conv2d",
            format!("weights must be rank 4, got {:?}", weights.shape()),
        ));
    }
    for ((&want, &got), axis) in ws.iter().zip(weights.shape()).zip(axes) {
        if want != got {
            return Err(Error::DimensionMismatch {
                op: "conv2d",
                axis,
                expected: want,
                actual: got,
            });
        }
    }
    if bias.len() != spec.out_channels {
        return Err(Error::DimensionMismatch {
            op: "conv2d",
            axis: "bias",
            expected: spec.out_channels,
            actual: bias.len(),
        });
    }
    Ok((n, h, w, c))
}

/// Unfolds one H×W×C sample into rows of `kh*kw*c` patch values, one row per
/// output position. `shift` offsets the sampling origin (fault injection only).
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    src: &[T],
    h: usize,
    w: usize,
    spec: &ConvSpec,
    oh: usize,
    ow: usize,
    shift: isize,
    cols: &mut [T],
) {
    let c = spec.in_channels;
    let (kh, kw) = spec.kernel;
    let row_len = spec.patch_len();
    let pad = spec.padding as isize - shift;
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &mut cols[(oy * ow + ox) * row_len..(oy * ow + ox + 1) * row_len];
            for ky in 0..kh {
                let iy = (oy * spec.stride + ky) as isize - pad;
                let dst = &mut row[ky * kw * c..(ky + 1) * kw * c];
                if iy < 0 || iy >= h as isize {
                    dst.fill(T::zero());
                    continue;
                }
                let iy = iy as usize;
                for kx in 0..kw {
                    let ix = (ox * spec.stride + kx) as isize - pad;
                    let d = &mut dst[kx * c..(kx + 1) * c];
                    if ix < 0 || ix >= w as isize {
                        d.fill(T::zero());
                    } else {
                        let s = (iy * w + ix as usize) * c;
                        d.copy_from_slice(&src[s..s + c]);
                    }
                }
            }
        }
    }
}

/// Adds patch-row gradients back onto the H×W×C sample they were unfolded from.
fn col2im<T: Scalar>(
    cols: &[T],
    h: usize,
    w: usize,
    spec: &ConvSpec,
    oh: usize,
    ow: usize,
    dst: &mut [T],
) {
    let c = spec.in_channels;
    let (kh, kw) = spec.kernel;
    let row_len = spec.patch_len();
    let pad = spec.padding as isize;
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &cols[(oy * ow + ox) * row_len..(oy * ow + ox + 1) * row_len];
            for ky in 0..kh {
                let iy = (oy * spec.stride + ky) as isize - pad;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * spec.stride + kx) as isize - pad;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let s = (iy as usize * w + ix as usize) * c;
                    let g = &row[(ky * kw + kx) * c..(ky * kw + kx + 1) * c];
                    for (d, &v) in dst[s..s + c].iter_mut().zip(g) {
                        *d += v;
                    }
                }
            }
        }
    }
}

fn is_pointwise(spec: &ConvSpec) -> bool {
    spec.kernel == (1, 1) && spec.stride == 1 && spec.padding == 0
}

/// Zero-padded cross-correlation plus bias, via im2col and a matrix multiply.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let (n, h, w, c) = check_operands(input, weights, bias, spec)?;
    let (oh, ow) = spec.output_hw(h, w)?;
    let co = spec.out_channels;
    let k = spec.patch_len();
    let mut out = vec![T::zero(); n * oh * ow * co];
    for (o, b) in out.chunks_exact_mut(co).zip(std::iter::repeat(bias.data())) {
        o.copy_from_slice(b);
    }
    let wmat = MatRef::new(weights.data(), k, co);
    let mut cols = if is_pointwise(spec) {
        Vec::new()
    } else {
        vec![T::zero(); oh * ow * k]
    };
    for s in 0..n {
        let src = &input.data()[s * h * w * c..(s + 1) * h * w * c];
        let dst = &mut out[s * oh * ow * co..(s + 1) * oh * ow * co];
        if is_pointwise(spec) {
            gemm(MatRef::new(src, h * w, c), wmat, T::one(), dst);
        } else {
            im2col(src, h, w, spec, oh, ow, 0, &mut cols);
            gemm(MatRef::new(&cols, oh * ow, k), wmat, T::one(), dst);
        }
    }
    let out = Tensor::new(&[n, oh, ow, co], out)?;
    check_finite("conv2d", &out);
    Ok(out)
}

/// Reference convolution by direct summation; defines correctness for [`conv2d`].
pub fn conv2d_direct<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let (n, h, w, c) = check_operands(input, weights, bias, spec)?;
    let (oh, ow) = spec.output_hw(h, w)?;
    let (kh, kw) = spec.kernel;
    let co = spec.out_channels;
    let x = input.data();
    let wt = weights.data();
    let mut out = vec![T::zero(); n * oh * ow * co];
    for s in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for o in 0..co {
                    let mut acc = bias.data()[o];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                            let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for i in 0..c {
                                let xv = x[((s * h + iy as usize) * w + ix as usize) * c + i];
                                let wv = wt[((ky * kw + kx) * c + i) * co + o];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((s * oh + oy) * ow + ox) * co + o] = acc;
                }
            }
        }
    }
    Tensor::new(&[n, oh, ow, co], out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of [`conv2d`] with respect to input, weights and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<ConvGrads<T>> {
    let bias = Tensor::zeros(&[spec.out_channels]);
    let (n, h, w, c) = check_operands(input, weights, &bias, spec)?;
    let (oh, ow) = spec.output_hw(h, w)?;
    let co = spec.out_channels;
    let expected = [n, oh, ow, co];
    if grad_out.shape() != expected {
        return Err(Error::precondition(
            "conv2d_backward",
            format!("grad_out shape {:?}, expected {expected:?}", grad_out.shape()),
        ));
    }
    let k = spec.patch_len();
    let shift = if WEIGHT_GRAD_FAULT.with(Cell::get) { 1 } else { 0 };
    let pointwise = is_pointwise(spec) && shift == 0;

    let mut grad_w = vec![T::zero(); k * co];
    let mut grad_b = vec![T::zero(); co];
    let mut grad_x = vec![T::zero(); n * h * w * c];
    let mut cols = vec![T::zero(); if pointwise { 0 } else { oh * ow * k }];
    let wmat = MatRef::new(weights.data(), k, co);

    for row in grad_out.data().chunks_exact(co) {
        for (b, &g) in grad_b.iter_mut().zip(row) {
            *b += g;
        }
    }
    for s in 0..n {
        let src = &input.data()[s * h * w * c..(s + 1) * h * w * c];
        let dy = MatRef::new(
            &grad_out.data()[s * oh * ow * co..(s + 1) * oh * ow * co],
            oh * ow,
            co,
        );
        let dx = &mut grad_x[s * h * w * c..(s + 1) * h * w * c];
        if pointwise {
            gemm(MatRef::new(src, h * w, c).t(), dy, T::one(), &mut grad_w);
            gemm(dy, wmat.t(), T::one(), dx);
        } else {
            im2col(src, h, w, spec, oh, ow, shift, &mut cols);
            gemm(MatRef::new(&cols, oh * ow, k).t(), dy, T::one(), &mut grad_w);
            gemm(dy, wmat.t(), T::zero(), &mut cols);
            col2im(&cols, h, w, spec, oh, ow, dx);
        }
    }
    let grads = ConvGrads {
        input: Tensor::new(input.shape(), grad_x)?,
        weights: Tensor::new(weights.shape(), grad_w)?,
        bias: Tensor::new(&[co], grad_b)?,
    };
    check_finite("conv2d_backward", &grads.input);
    Ok(grads)
}
