//! Forward and backward kernels. Convolutions lower to im2col + GEMM and use
//! the cross-correlation convention (no kernel flip) with zero padding.

use super::{gemm, Scalar, Shape, Tensor};
use crate::error::{shape_err, Result};

/// Stride and zero padding shared by both spatial axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub const fn new(stride: usize, padding: usize) -> Self {
        ConvGeometry { stride, padding }
    }

    /// Stride 1 with `floor(k/2)` padding: spatial extent is preserved for odd `k`.
    pub const fn same(kernel: usize) -> Self {
        ConvGeometry {
            stride: 1,
            padding: kernel / 2,
        }
    }

    fn conv_out(&self, size: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 {
            return Err(shape_err!("stride must be positive"));
        }
        if kernel > size + 2 * self.padding {
            return Err(shape_err!(
                "kernel {kernel} larger than padded extent {}",
                size + 2 * self.padding
            ));
        }
        Ok((size + 2 * self.padding - kernel) / self.stride + 1)
    }

    fn transposed_out(&self, size: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 {
            return Err(shape_err!("stride must be positive"));
        }
        let full = (size - 1) * self.stride + kernel;
        if full <= 2 * self.padding {
            return Err(shape_err!(
                "padding {} crops the whole {full}-wide transposed output",
                self.padding
            ));
        }
        Ok(full - 2 * self.padding)
    }
}

/// Gradients of [`conv2d`].
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

/// Gradients of [`transposed_conv2d`].
#[derive(Clone, Debug)]
pub struct TransposedConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
}

fn ensure_nonempty<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<()> {
    if t.is_empty() {
        return Err(shape_err!("{what} has a zero extent: {}", t.shape()));
    }
    Ok(())
}

struct Patch {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    out_h: usize,
    out_w: usize,
    geom: ConvGeometry,
}

impl Patch {
    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Identity lowering: the image itself is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.geom.stride == 1 && self.geom.padding == 0
    }

    /// Output columns `lo..hi` whose tap `kx` lands inside the input row.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let (s, p) = (self.geom.stride, self.geom.padding);
        // ox·s + kx − p ∈ [0, width)
        let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
        let hi = if self.width + p > kx {
            ((self.width + p - kx - 1) / s + 1).min(self.out_w)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    fn im2col<T: Scalar>(&self, image: &[T], cols: &mut [T]) {
        let (k, s, p) = (self.kernel, self.geom.stride, self.geom.padding as isize);
        let n = self.cols();
        for c in 0..self.channels {
            let plane = &image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..self.out_h {
                        let iy = (oy * s + ky) as isize - p;
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if iy < 0 || iy >= self.height as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        let (lo, hi) = self.valid_cols(kx);
                        line[..lo].fill(T::zero());
                        line[hi..].fill(T::zero());
                        if lo < hi {
                            let start = lo * s + kx - p as usize;
                            if s == 1 {
                                line[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                            } else {
                                for (v, &x) in line[lo..hi].iter_mut().zip(src[start..].iter().step_by(s)) {
                                    *v = x;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a column matrix back onto an image (adjoint of `im2col`).
    fn col2im<T: Scalar>(&self, cols: &[T], image: &mut [T]) {
        let (k, s, p) = (self.kernel, self.geom.stride, self.geom.padding as isize);
        let n = self.cols();
        for c in 0..self.channels {
            let plane = &mut image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * n..(row + 1) * n];
                    for oy in 0..self.out_h {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        let line = &src[oy * self.out_w..(oy + 1) * self.out_w];
                        let (lo, hi) = self.valid_cols(kx);
                        if lo < hi {
                            let start = lo * s + kx - p as usize;
                            for (d, &v) in dst[start..].iter_mut().step_by(s).zip(&line[lo..hi]) {
                                *d += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_patch<T: Scalar>(input: Shape, weight: &Tensor<T>, geom: ConvGeometry) -> Result<(Patch, usize)> {
    let w = weight.shape();
    if w.height != w.width {
        return Err(shape_err!("kernel must be square, got {w}"));
    }
    if w.channels != input.channels {
        return Err(shape_err!(
            "weight {w} expects {} input channels, input is {input}",
            w.channels
        ));
    }
    let out_h = geom.conv_out(input.height, w.height)?;
    let out_w = geom.conv_out(input.width, w.width)?;
    Ok((
        Patch {
            channels: input.channels,
            height: input.height,
            width: input.width,
            kernel: w.height,
            out_h,
            out_w,
            geom,
        },
        w.batch,
    ))
}

/// Cross-correlates `input[N,Cin,H,W]` with `weight[F,Cin,k,k]` and adds `bias[F]`.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &[T], geom: ConvGeometry) -> Result<Tensor<T>> {
    ensure_nonempty(input, "conv2d input")?;
    ensure_nonempty(weight, "conv2d weight")?;
    let shape = input.shape();
    let (patch, filters) = conv_patch(shape, weight, geom)?;
    if bias.len() != filters {
        return Err(shape_err!("bias has {} entries for {filters} filters", bias.len()));
    }
    let mut out = Tensor::zeros([shape.batch, filters, patch.out_h, patch.out_w]);
    let plane = patch.cols();
    let mut cols = if patch.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); patch.rows() * plane]
    };
    for n in 0..shape.batch {
        let dst = out.item_mut(n);
        for (f, &b) in bias.iter().enumerate() {
            dst[f * plane..(f + 1) * plane].fill(b);
        }
        let rhs = if patch.is_pointwise() {
            input.item(n)
        } else {
            patch.im2col(input.item(n), &mut cols);
            &cols
        };
        gemm(
            false,
            false,
            filters,
            patch.rows(),
            plane,
            weight.data(),
            rhs,
            T::one(),
            dst,
        );
    }
    Ok(out)
}

/// Gradients of [`conv2d`] given the upstream gradient `grad_out`.
///
/// The input gradient is only formed when `want_input` is set.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    geom: ConvGeometry,
    want_input: bool,
) -> Result<ConvGrads<T>> {
    let shape = input.shape();
    let (patch, filters) = conv_patch(shape, weight, geom)?;
    let expect = Shape::new(shape.batch, filters, patch.out_h, patch.out_w);
    if grad_out.shape() != expect {
        return Err(shape_err!(
            "conv2d grad has shape {}, expected {expect}",
            grad_out.shape()
        ));
    }
    let plane = patch.cols();
    let rows = patch.rows();
    let mut grad_w = Tensor::zeros(weight.shape());
    let mut grad_b = vec![T::zero(); filters];
    let mut grad_in = want_input.then(|| Tensor::zeros(shape));
    let mut cols = vec![T::zero(); if patch.is_pointwise() { 0 } else { rows * plane }];
    let mut dcols = vec![T::zero(); if want_input { rows * plane } else { 0 }];

    for n in 0..shape.batch {
        let g = grad_out.item(n);
        for (f, gb) in grad_b.iter_mut().enumerate() {
            *gb += g[f * plane..(f + 1) * plane].iter().copied().sum::<T>();
        }
        let lowered = if patch.is_pointwise() {
            input.item(n)
        } else {
            patch.im2col(input.item(n), &mut cols);
            &cols
        };
        gemm(
            false,
            true,
            filters,
            plane,
            rows,
            g,
            lowered,
            T::one(),
            grad_w.data_mut(),
        );
        if let Some(gi) = grad_in.as_mut() {
            if patch.is_pointwise() {
                gemm(
                    true,
                    false,
                    rows,
                    filters,
                    plane,
                    weight.data(),
                    g,
                    T::zero(),
                    gi.item_mut(n),
                );
            } else {
                gemm(
                    true,
                    false,
                    rows,
                    filters,
                    plane,
                    weight.data(),
                    g,
                    T::zero(),
                    &mut dcols,
                );
                patch.col2im(&dcols, gi.item_mut(n));
            }
        }
    }
    Ok(ConvGrads {
        input: grad_in,
        weight: grad_w,
        bias: grad_b,
    })
}

fn transposed_patch<T: Scalar>(input: Shape, weight: &Tensor<T>, geom: ConvGeometry) -> Result<(Patch, usize)> {
    let w = weight.shape();
    if w.height != w.width {
        return Err(shape_err!("kernel must be square, got {w}"));
    }
    if w.batch != input.channels {
        return Err(shape_err!(
            "transposed weight {w} expects {} input channels, input is {input}",
            w.batch
        ));
    }
    let out_h = geom.transposed_out(input.height, w.height)?;
    let out_w = geom.transposed_out(input.width, w.width)?;
    // The transposed op is the adjoint of a conv from the output grid back to
    // the input grid; it must land exactly on the input extent.
    if geom.conv_out(out_h, w.height)? != input.height || geom.conv_out(out_w, w.width)? != input.width {
        return Err(shape_err!("inconsistent transposed geometry for {input}"));
    }
    Ok((
        Patch {
            channels: w.channels,
            height: out_h,
            width: out_w,
            kernel: w.height,
            out_h: input.height,
            out_w: input.width,
            geom,
        },
        w.channels,
    ))
}

/// Fractionally strided convolution of `input[N,C,H,W]` with `weight[C,F,k,k]`.
///
/// Output extent is `(H-1)·stride + k − 2·padding`. This is exactly the
/// input-gradient of [`conv2d`] with the same weight and geometry.
pub fn transposed_conv2d<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, geom: ConvGeometry) -> Result<Tensor<T>> {
    ensure_nonempty(input, "transposed_conv2d input")?;
    ensure_nonempty(weight, "transposed_conv2d weight")?;
    let shape = input.shape();
    let (patch, filters) = transposed_patch(shape, weight, geom)?;
    let mut out = Tensor::zeros([shape.batch, filters, patch.height, patch.width]);
    let mut cols = vec![T::zero(); patch.rows() * patch.cols()];
    for n in 0..shape.batch {
        gemm(
            true,
            false,
            patch.rows(),
            shape.channels,
            patch.cols(),
            weight.data(),
            input.item(n),
            T::zero(),
            &mut cols,
        );
        patch.col2im(&cols, out.item_mut(n));
    }
    Ok(out)
}

pub fn transposed_conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    geom: ConvGeometry,
    want_input: bool,
) -> Result<TransposedConvGrads<T>> {
    let shape = input.shape();
    let (patch, filters) = transposed_patch(shape, weight, geom)?;
    let expect = Shape::new(shape.batch, filters, patch.height, patch.width);
    if grad_out.shape() != expect {
        return Err(shape_err!(
            "transposed_conv2d grad has shape {}, expected {expect}",
            grad_out.shape()
        ));
    }
    let mut grad_w = Tensor::zeros(weight.shape());
    let mut grad_in = want_input.then(|| Tensor::zeros(shape));
    let mut cols = vec![T::zero(); patch.rows() * patch.cols()];
    for n in 0..shape.batch {
        patch.im2col(grad_out.item(n), &mut cols);
        gemm(
            false,
            true,
            shape.channels,
            patch.cols(),
            patch.rows(),
            input.item(n),
            &cols,
            T::one(),
            grad_w.data_mut(),
        );
        if let Some(gi) = grad_in.as_mut() {
            gemm(
                false,
                false,
                shape.channels,
                patch.rows(),
                patch.cols(),
                weight.data(),
                &cols,
                T::zero(),
                gi.item_mut(n),
            );
        }
    }
    Ok(TransposedConvGrads {
        input: grad_in,
        weight: grad_w,
    })
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `grad` where the forward output was positive; the subgradient at 0 is 0.
pub fn relu_backward<T: Scalar>(output: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with(
        output,
        grad,
        "relu_backward",
        |y, g| if y > T::zero() { g } else { T::zero() },
    )
}

/// Hadamard product.
pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with(a, b, "mul", |x, y| x * y)
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with(a, b, "add", |x, y| x + y)
}

fn zip_with<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(shape_err!("{what}: {} vs {}", a.shape(), b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data)
}
