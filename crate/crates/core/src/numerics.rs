//! Dense row-major tensors and the handful of kernels the networks need:
//! matrix products, 2-D cross-correlation, average pooling and their
//! adjoints.
//!
//! Everything is generic over [`Real`] so the same simulator can run in
//! `f32` for training and in `f64` when a finite-difference oracle needs the
//! extra precision.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Scalar type for all tensor arithmetic.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to every Real")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("invalid configuration for {op}: {detail}")]
    Config { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
}

/// Row-major dense tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<R = f32> {
    shape: Vec<usize>,
    data: Vec<R>,
}

impl<R: Real> Tensor<R> {
    pub fn new(shape: Vec<usize>, data: Vec<R>) -> Result<Self, NumericsError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(NumericsError::Dimension {
                op: "tensor",
                detail: format!("extents must be positive, got {shape:?}"),
            });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NumericsError::Dimension {
                op: "tensor",
                detail: format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            });
        }
        check_finite("tensor", &data)?;
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![R::zero(); len] }
    }

    pub fn filled(shape: &[usize], value: R) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; len] }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = R::one();
        }
        t
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> R) -> Self {
        let len: usize = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..len).map(&mut f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    /// Mutable access to the storage. Callers are responsible for keeping
    /// the values finite.
    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<R> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, NumericsError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(NumericsError::Dimension { op: "reshape", detail: format!("{:?} -> {shape:?}", self.shape) });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(R) -> R) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add(&self, other: &Self) -> Result<Self, NumericsError> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, NumericsError> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self, NumericsError> {
        self.zip_with("mul", other, |a, b| a * b)
    }

    pub fn scale(&self, k: R) -> Self {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> R {
        self.data.iter().copied().sum()
    }

    pub fn convert<S: Real>(&self) -> Tensor<S> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| S::from_f64_lossy(v.as_f64())).collect() }
    }

    fn zip_with(&self, op: &'static str, other: &Self, f: impl Fn(R, R) -> R) -> Result<Self, NumericsError> {
        if self.shape != other.shape {
            return Err(NumericsError::Dimension { op, detail: format!("{:?} vs {:?}", self.shape, other.shape) });
        }
        let data: Vec<R> = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        check_finite(op, &data)?;
        Ok(Self { shape: self.shape.clone(), data })
    }
}

pub fn check_finite<R: Real>(op: &'static str, data: &[R]) -> Result<(), NumericsError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::NonFinite { op })
    }
}

/// `a[m×k] · b[k×n]`.
pub fn matmul<R: Real>(a: &Tensor<R>, b: &Tensor<R>) -> Result<Tensor<R>, NumericsError> {
    let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
        return Err(NumericsError::Dimension {
            op: "matmul",
            detail: format!("expected rank-2 operands, got {:?} and {:?}", a.shape(), b.shape()),
        });
    };
    if k != k2 {
        return Err(NumericsError::Dimension { op: "matmul", detail: format!("inner dimensions {k} and {k2} differ") });
    }
    let mut out = vec![R::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == R::zero() {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    check_finite("matmul", &out)?;
    Ok(Tensor { shape: vec![m, n], data: out })
}

/// `out = W·x` for a row-major `W[rows×cols]`.
pub fn matvec<R: Real>(w: &[R], x: &[R], out: &mut [R]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o = row.iter().zip(x).map(|(&a, &b)| a * b).sum();
    }
}

/// `out += Wᵀ·y`.
pub fn matvec_transposed_acc<R: Real>(w: &[R], y: &[R], out: &mut [R]) {
    let cols = out.len();
    debug_assert_eq!(w.len(), y.len() * cols);
    for (&yv, row) in y.iter().zip(w.chunks_exact(cols)) {
        if yv == R::zero() {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += yv * wv;
        }
    }
}

/// `acc += y ⊗ x` where `acc` is `[y.len() × x.len()]`.
pub fn outer_acc<R: Real>(y: &[R], x: &[R], acc: &mut [R]) {
    let cols = x.len();
    for (&yv, row) in y.iter().zip(acc.chunks_exact_mut(cols)) {
        if yv == R::zero() {
            continue;
        }
        for (a, &xv) in row.iter_mut().zip(x) {
            *a += yv * xv;
        }
    }
}

/// Shape bookkeeping for a bias-free 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        input: [usize; 3],
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self, NumericsError> {
        let [in_channels, in_h, in_w] = input;
        let bad = |detail: String| NumericsError::Config { op: "conv2d", detail };
        if kernel == 0 || stride == 0 || out_channels == 0 || in_channels == 0 {
            return Err(bad("kernel, stride and channel counts must be positive".into()));
        }
        let extent = |size: usize| -> Result<usize, NumericsError> {
            let padded = size + 2 * padding;
            if padded < kernel || !(padded - kernel).is_multiple_of(stride) {
                return Err(bad(format!("({size} + 2*{padding} - {kernel}) / {stride} + 1 is not a positive integer")));
            }
            Ok((padded - kernel) / stride + 1)
        };
        Ok(Self {
            in_channels,
            in_h,
            in_w,
            out_channels,
            kernel,
            stride,
            padding,
            out_h: extent(in_h)?,
            out_w: extent(in_w)?,
        })
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.in_h * self.in_w
    }

    pub fn output_len(&self) -> usize {
        self.out_channels * self.out_h * self.out_w
    }

    pub fn kernel_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    /// Input coordinate hit by output row/col `o` at kernel offset `k`, if
    /// it is not in the zero padding.
    #[inline]
    fn source(&self, o: usize, k: usize, size: usize) -> Option<usize> {
        let pos = (o * self.stride + k).checked_sub(self.padding)?;
        (pos < size).then_some(pos)
    }

    /// Visit every (output index, kernel index, input index) triple of the
    /// cross-correlation, skipping padded taps.
    #[inline]
    pub fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let k = self.kernel;
        for co in 0..self.out_channels {
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let o = (co * self.out_h + oy) * self.out_w + ox;
                    for ci in 0..self.in_channels {
                        for ky in 0..k {
                            let Some(iy) = self.source(oy, ky, self.in_h) else { continue };
                            for kx in 0..k {
                                let Some(ix) = self.source(ox, kx, self.in_w) else { continue };
                                let wi = ((co * self.in_channels + ci) * k + ky) * k + kx;
                                let ii = (ci * self.in_h + iy) * self.in_w + ix;
                                f(o, wi, ii);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation with zero padding and no bias, on flat buffers.
pub fn conv2d_into<R: Real>(geom: &ConvGeometry, input: &[R], kernel: &[R], out: &mut [R]) {
    debug_assert_eq!(input.len(), geom.input_len());
    debug_assert_eq!(kernel.len(), geom.kernel_len());
    debug_assert_eq!(out.len(), geom.output_len());
    let k = geom.kernel;
    let plane = geom.out_h * geom.out_w;
    for co in 0..geom.out_channels {
        let out_plane = &mut out[co * plane..(co + 1) * plane];
        out_plane.iter_mut().for_each(|v| *v = R::zero());
        for ci in 0..geom.in_channels {
            let in_plane = &input[ci * geom.in_h * geom.in_w..(ci + 1) * geom.in_h * geom.in_w];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = kernel[((co * geom.in_channels + ci) * k + ky) * k + kx];
                    if wv == R::zero() {
                        continue;
                    }
                    for oy in 0..geom.out_h {
                        let Some(iy) = geom.source(oy, ky, geom.in_h) else { continue };
                        let row = &in_plane[iy * geom.in_w..(iy + 1) * geom.in_w];
                        let orow = &mut out_plane[oy * geom.out_w..(oy + 1) * geom.out_w];
                        for (ox, o) in orow.iter_mut().enumerate() {
                            if let Some(ix) = geom.source(ox, kx, geom.in_w) {
                                *o += wv * row[ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `grad_input += convᵀ(grad_out)`.
pub fn conv2d_backward_input_acc<R: Real>(geom: &ConvGeometry, grad_out: &[R], kernel: &[R], grad_input: &mut [R]) {
    geom.for_each_tap(|o, wi, ii| {
        let g = grad_out[o];
        if g != R::zero() {
            grad_input[ii] += g * kernel[wi];
        }
    });
}

/// `grad_kernel += Σ grad_out · input` over all taps.
pub fn conv2d_backward_kernel_acc<R: Real>(geom: &ConvGeometry, grad_out: &[R], input: &[R], grad_kernel: &mut [R]) {
    geom.for_each_tap(|o, wi, ii| {
        let g = grad_out[o];
        if g != R::zero() {
            grad_kernel[wi] += g * input[ii];
        }
    });
}

/// Tensor-level convolution: `input[C_i×H×W]`, `kernel[C_o×C_i×k×k]`.
pub fn conv2d<R: Real>(
    input: &Tensor<R>,
    kernel: &Tensor<R>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<R>, NumericsError> {
    let (&[ci, h, w], &[co, ki, k, k2]) = (input.shape(), kernel.shape()) else {
        return Err(NumericsError::Dimension {
            op: "conv2d",
            detail: format!("expected [C,H,W] and [C_o,C_i,k,k], got {:?} and {:?}", input.shape(), kernel.shape()),
        });
    };
    if ci != ki || k != k2 {
        return Err(NumericsError::Dimension {
            op: "conv2d",
            detail: format!("input channels {ci} vs kernel {ki}, kernel {k}x{k2}"),
        });
    }
    let geom = ConvGeometry::new([ci, h, w], co, k, stride, padding)?;
    let mut out = vec![R::zero(); geom.output_len()];
    conv2d_into(&geom, input.data(), kernel.data(), &mut out);
    check_finite("conv2d", &out)?;
    Ok(Tensor { shape: vec![co, geom.out_h, geom.out_w], data: out })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolGeometry {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub window: usize,
}

impl PoolGeometry {
    pub fn new(input: [usize; 3], window: usize) -> Result<Self, NumericsError> {
        let [channels, in_h, in_w] = input;
        if window == 0 || in_h % window != 0 || in_w % window != 0 {
            return Err(NumericsError::Config {
                op: "avgpool2d",
                detail: format!("{in_h}x{in_w} is not divisible by window {window}"),
            });
        }
        Ok(Self { channels, in_h, in_w, window })
    }

    pub fn out_h(&self) -> usize {
        self.in_h / self.window
    }

    pub fn out_w(&self) -> usize {
        self.in_w / self.window
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.in_h * self.in_w
    }

    pub fn output_len(&self) -> usize {
        self.channels * self.out_h() * self.out_w()
    }

    /// Visit (output index, input index) for every cell of every window.
    #[inline]
    pub fn for_each_cell(&self, mut f: impl FnMut(usize, usize)) {
        let (oh, ow, win) = (self.out_h(), self.out_w(), self.window);
        for c in 0..self.channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let o = (c * oh + oy) * ow + ox;
                    for dy in 0..win {
                        for dx in 0..win {
                            let i = (c * self.in_h + oy * win + dy) * self.in_w + ox * win + dx;
                            f(o, i);
                        }
                    }
                }
            }
        }
    }
}

/// Window sum scaled by `scale`; `scale = 1/window²` gives the average.
pub fn pool_sum_into<R: Real>(geom: &PoolGeometry, input: &[R], scale: R, out: &mut [R]) {
    out.iter_mut().for_each(|v| *v = R::zero());
    geom.for_each_cell(|o, i| out[o] += input[i]);
    if scale != R::one() {
        out.iter_mut().for_each(|v| *v *= scale);
    }
}

pub fn avgpool2d_into<R: Real>(geom: &PoolGeometry, input: &[R], out: &mut [R]) {
    let area = R::from_usize(geom.window * geom.window).unwrap();
    pool_sum_into(geom, input, R::one() / area, out);
}

/// `grad_input += avgpoolᵀ(grad_out)`.
pub fn avgpool2d_backward_acc<R: Real>(geom: &PoolGeometry, grad_out: &[R], grad_input: &mut [R]) {
    let inv = R::one() / R::from_usize(geom.window * geom.window).unwrap();
    geom.for_each_cell(|o, i| grad_input[i] += grad_out[o] * inv);
}

pub fn avgpool2d<R: Real>(input: &Tensor<R>, window: usize) -> Result<Tensor<R>, NumericsError> {
    let &[c, h, w] = input.shape() else {
        return Err(NumericsError::Dimension {
            op: "avgpool2d",
            detail: format!("expected [C,H,W], got {:?}", input.shape()),
        });
    };
    let geom = PoolGeometry::new([c, h, w], window)?;
    let mut out = vec![R::zero(); geom.output_len()];
    avgpool2d_into(&geom, input.data(), &mut out);
    check_finite("avgpool2d", &out)?;
    Ok(Tensor { shape: vec![c, geom.out_h(), geom.out_w()], data: out })
}

/// Seeded generator used for every stochastic component.
pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream seed from a base seed and stream labels
/// (splitmix64 finaliser over the mixed words).
pub fn derive_seed(base: u64, labels: &[u64]) -> u64 {
    let mut z = base;
    for &l in labels {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(l.wrapping_mul(0xD1B5_4A32_D192_ED03));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Fan-in scaled uniform initialisation: `U(-√(3/fan_in), √(3/fan_in))`.
pub fn variance_scaling_uniform<R: Real>(shape: &[usize], fan_in: usize, rng: &mut SimRng) -> Tensor<R> {
    let limit = (3.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| R::from_f64_lossy(rng.random_range(-limit..limit)))
}
