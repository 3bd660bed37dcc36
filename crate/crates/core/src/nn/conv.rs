//! 3D convolution and transposed convolution with "same" zero padding.
//!
//! Both operators share one geometry: a large domain (the convolution input,
//! the transposed-convolution output) and a small domain of size
//! `ceil(n / stride)` per axis. Output voxel `o` of the convolution reads input
//! voxels `o * stride + t - k / 2` for taps `t` in `0..k`. The transposed
//! convolution is the exact adjoint of that map and uses the same kernel
//! tensor, so a transposed layer with `C_in` inputs and `C_out` outputs stores
//! a kernel with `c_in = C_out` and `c_out = C_in`.
//!
//! Kernels are laid out `[kx][ky][kz][c_in][c_out]`. The work is done with
//! im2col followed by a dense matrix product, chunked over output voxels so
//! large blocks do not allocate huge column buffers.

use crate::error::{Error, Result};
use crate::tensor::Tensor4D;

/// Upper bound on the im2col buffer, in elements.
const MAX_COLUMN_ELEMENTS: usize = 1 << 21;

/// Exponent clamp for [`Activation::Exp`]; keeps predicted scales finite.
pub const EXP_CLAMP: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Sigmoid,
    Exp,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::None => v,
            Activation::Relu => v.max(0.0),
            Activation::Sigmoid => sigmoid(v),
            Activation::Exp => v.min(EXP_CLAMP).exp(),
        }
    }

    /// Derivative given the pre-activation and the activated value.
    #[inline]
    pub fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::None => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => out * (1.0 - out),
            Activation::Exp => {
                if pre < EXP_CLAMP {
                    out
                } else {
                    0.0
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Convolution kernel, `size`³ taps by `c_in` by `c_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub size: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub data: Vec<f64>,
}

impl Kernel {
    pub fn zeros(size: usize, c_in: usize, c_out: usize) -> Self {
        Kernel {
            size,
            c_in,
            c_out,
            data: vec![0.0; size * size * size * c_in * c_out],
        }
    }

    pub fn new(size: usize, c_in: usize, c_out: usize, data: Vec<f64>) -> Result<Self> {
        if size % 2 == 0 || c_in == 0 || c_out == 0 {
            return Err(Error::Shape(format!(
                "kernel {size}^3 x {c_in} x {c_out} must have odd size and channels"
            )));
        }
        if data.len() != size * size * size * c_in * c_out {
            return Err(Error::Shape(format!(
                "{} kernel values for {size}^3 x {c_in} x {c_out}",
                data.len()
            )));
        }
        Ok(Kernel {
            size,
            c_in,
            c_out,
            data,
        })
    }

    /// Kernel whose centre tap is the identity map.
    pub fn identity(size: usize, channels: usize) -> Self {
        let mut k = Kernel::zeros(size, channels, channels);
        let centre = size / 2;
        let tap = (centre * size + centre) * size + centre;
        for c in 0..channels {
            k.data[(tap * channels + c) * channels + c] = 1.0;
        }
        k
    }

    fn rows(&self) -> usize {
        self.size * self.size * self.size * self.c_in
    }

    #[inline]
    pub fn at(&self, kx: usize, ky: usize, kz: usize, ci: usize, co: usize) -> f64 {
        let s = self.size;
        self.data[(((kx * s + ky) * s + kz) * self.c_in + ci) * self.c_out + co]
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    large: [usize; 3],
    small: [usize; 3],
    size: usize,
    stride: usize,
}

impl Geometry {
    fn from_large(large: [usize; 3], size: usize, stride: usize) -> Self {
        Geometry {
            large,
            small: large.map(|n| n.div_ceil(stride)),
            size,
            stride,
        }
    }

    fn small_voxels(&self) -> usize {
        self.small.iter().product()
    }

    fn chunk_rows(&self, channels: usize) -> usize {
        let per_row = self.size.pow(3) * channels;
        (MAX_COLUMN_ELEMENTS / per_row.max(1)).max(1)
    }

    /// Fills `cols` with im2col rows for small-domain voxels `first..first + rows`.
    fn im2col(&self, large: &[f64], channels: usize, first: usize, rows: usize, cols: &mut [f64]) {
        let k = self.size;
        let pad = (k / 2) as isize;
        let row_len = k * k * k * channels;
        let [_, sh, sd] = self.small;
        let [lw, lh, ld] = self.large;
        for r in 0..rows {
            let o = first + r;
            let (ox, oy, oz) = (o / (sh * sd), (o / sd) % sh, o % sd);
            let row = &mut cols[r * row_len..(r + 1) * row_len];
            let mut dst = 0;
            for kx in 0..k {
                let ix = (ox * self.stride) as isize + kx as isize - pad;
                for ky in 0..k {
                    let iy = (oy * self.stride) as isize + ky as isize - pad;
                    for kz in 0..k {
                        let iz = (oz * self.stride) as isize + kz as isize - pad;
                        let slot = &mut row[dst..dst + channels];
                        if ix < 0
                            || iy < 0
                            || iz < 0
                            || ix >= lw as isize
                            || iy >= lh as isize
                            || iz >= ld as isize
                        {
                            slot.fill(0.0);
                        } else {
                            let src =
                                ((ix as usize * lh + iy as usize) * ld + iz as usize) * channels;
                            slot.copy_from_slice(&large[src..src + channels]);
                        }
                        dst += channels;
                    }
                }
            }
        }
    }

    /// Scatter-adds im2col rows back into the large domain.
    fn col2im(&self, cols: &[f64], channels: usize, first: usize, rows: usize, large: &mut [f64]) {
        let k = self.size;
        let pad = (k / 2) as isize;
        let row_len = k * k * k * channels;
        let [_, sh, sd] = self.small;
        let [lw, lh, ld] = self.large;
        for r in 0..rows {
            let o = first + r;
            let (ox, oy, oz) = (o / (sh * sd), (o / sd) % sh, o % sd);
            let row = &cols[r * row_len..(r + 1) * row_len];
            let mut src = 0;
            for kx in 0..k {
                let ix = (ox * self.stride) as isize + kx as isize - pad;
                for ky in 0..k {
                    let iy = (oy * self.stride) as isize + ky as isize - pad;
                    for kz in 0..k {
                        let iz = (oz * self.stride) as isize + kz as isize - pad;
                        if ix >= 0
                            && iy >= 0
                            && iz >= 0
                            && ix < lw as isize
                            && iy < lh as isize
                            && iz < ld as isize
                        {
                            let dst =
                                ((ix as usize * lh + iy as usize) * ld + iz as usize) * channels;
                            for (d, s) in large[dst..dst + channels]
                                .iter_mut()
                                .zip(&row[src..src + channels])
                            {
                                *d += s;
                            }
                        }
                        src += channels;
                    }
                }
            }
        }
    }
}

/// `c[m x n] = beta * c + a[m x k] * b[k x n]`, all row-major, optionally transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_transposed {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_transposed {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the slices hold exactly the m*k, k*n and m*n elements addressed
    // by the strides above, as asserted in debug builds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Small-domain tensor `im2col(large) * kernel`, without bias.
fn gather(large: &Tensor4D, kernel: &Kernel, stride: usize) -> Tensor4D {
    let geo = Geometry::from_large(large.spatial(), kernel.size, stride);
    let [sw, sh, sd] = geo.small;
    let mut out = Tensor4D::zeros([sw, sh, sd, kernel.c_out]);
    let rows_total = geo.small_voxels();
    let chunk = geo.chunk_rows(kernel.c_in);
    let mut cols = vec![0.0; chunk.min(rows_total) * kernel.rows()];
    let mut first = 0;
    while first < rows_total {
        let rows = chunk.min(rows_total - first);
        let cols = &mut cols[..rows * kernel.rows()];
        geo.im2col(large.data(), kernel.c_in, first, rows, cols);
        let dst = &mut out.data_mut()[first * kernel.c_out..(first + rows) * kernel.c_out];
        gemm(
            rows,
            kernel.rows(),
            kernel.c_out,
            cols,
            false,
            &kernel.data,
            false,
            0.0,
            dst,
        );
        first += rows;
    }
    out
}

/// Large-domain tensor `col2im(small * kernel^T)`.
fn scatter(small: &Tensor4D, kernel: &Kernel, stride: usize, large: [usize; 3]) -> Tensor4D {
    let geo = Geometry::from_large(large, kernel.size, stride);
    let mut out = Tensor4D::zeros([large[0], large[1], large[2], kernel.c_in]);
    let rows_total = geo.small_voxels();
    let chunk = geo.chunk_rows(kernel.c_in);
    let mut cols = vec![0.0; chunk.min(rows_total) * kernel.rows()];
    let mut first = 0;
    while first < rows_total {
        let rows = chunk.min(rows_total - first);
        let cols = &mut cols[..rows * kernel.rows()];
        let src = &small.data()[first * kernel.c_out..(first + rows) * kernel.c_out];
        gemm(
            rows,
            kernel.c_out,
            kernel.rows(),
            src,
            false,
            &kernel.data,
            true,
            0.0,
            cols,
        );
        geo.col2im(cols, kernel.c_in, first, rows, out.data_mut());
        first += rows;
    }
    out
}

/// Kernel-shaped `im2col(large)^T * small`.
fn kernel_gradient(large: &Tensor4D, small: &Tensor4D, size: usize, stride: usize) -> Kernel {
    let c_in = large.channels();
    let c_out = small.channels();
    let geo = Geometry::from_large(large.spatial(), size, stride);
    let mut grad = Kernel::zeros(size, c_in, c_out);
    let rows_total = geo.small_voxels();
    let chunk = geo.chunk_rows(c_in);
    let mut cols = vec![0.0; chunk.min(rows_total) * grad.rows()];
    let mut first = 0;
    while first < rows_total {
        let rows = chunk.min(rows_total - first);
        let cols = &mut cols[..rows * grad.rows()];
        geo.im2col(large.data(), c_in, first, rows, cols);
        let src = &small.data()[first * c_out..(first + rows) * c_out];
        let k_rows = grad.rows();
        gemm(
            k_rows,
            rows,
            c_out,
            cols,
            true,
            src,
            false,
            1.0,
            &mut grad.data,
        );
        first += rows;
    }
    grad
}

fn add_bias(t: &mut Tensor4D, bias: &[f64]) {
    let c = t.channels();
    for chunk in t.data_mut().chunks_exact_mut(c) {
        for (v, b) in chunk.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn bias_gradient(dpre: &Tensor4D) -> Vec<f64> {
    let c = dpre.channels();
    let mut g = vec![0.0; c];
    for chunk in dpre.data().chunks_exact(c) {
        for (acc, v) in g.iter_mut().zip(chunk) {
            *acc += v;
        }
    }
    g
}

fn check_stride(stride: usize) -> Result<()> {
    if stride == 0 || stride > 2 {
        return Err(Error::Shape(format!("stride {stride} not in {{1, 2}}")));
    }
    Ok(())
}

/// Convolution pre-activation (bias included).
pub fn conv3d_pre(
    input: &Tensor4D,
    kernel: &Kernel,
    bias: &[f64],
    stride: usize,
) -> Result<Tensor4D> {
    check_stride(stride)?;
    if input.channels() != kernel.c_in || bias.len() != kernel.c_out {
        return Err(Error::Shape(format!(
            "conv input has {} channels, kernel expects {} in / {} out, bias has {}",
            input.channels(),
            kernel.c_in,
            kernel.c_out,
            bias.len()
        )));
    }
    let mut out = gather(input, kernel, stride);
    add_bias(&mut out, bias);
    Ok(out)
}

/// Transposed convolution pre-activation (bias included).
pub fn conv3d_transpose_pre(
    input: &Tensor4D,
    kernel: &Kernel,
    bias: &[f64],
    stride: usize,
) -> Result<Tensor4D> {
    check_stride(stride)?;
    if input.channels() != kernel.c_out || bias.len() != kernel.c_in {
        return Err(Error::Shape(format!(
            "transposed conv input has {} channels, kernel expects {} in / {} out, bias has {}",
            input.channels(),
            kernel.c_out,
            kernel.c_in,
            bias.len()
        )));
    }
    let large = input.spatial().map(|n| n * stride);
    let mut out = scatter(input, kernel, stride, large);
    add_bias(&mut out, bias);
    Ok(out)
}

/// 3D convolution with "same" padding; output size `ceil(n / stride)`.
pub fn conv3d(
    input: &Tensor4D,
    kernel: &Kernel,
    bias: &[f64],
    stride: usize,
    activation: Activation,
) -> Result<Tensor4D> {
    Ok(conv3d_pre(input, kernel, bias, stride)?.map(|v| activation.apply(v)))
}

/// Transposed 3D convolution; output size `n * stride`.
pub fn conv3d_transpose(
    input: &Tensor4D,
    kernel: &Kernel,
    bias: &[f64],
    stride: usize,
    activation: Activation,
) -> Result<Tensor4D> {
    Ok(conv3d_transpose_pre(input, kernel, bias, stride)?.map(|v| activation.apply(v)))
}

/// Gradients of a convolution layer.
#[derive(Debug, Clone)]
pub struct ConvGradients {
    pub input: Tensor4D,
    pub kernel: Kernel,
    pub bias: Vec<f64>,
}

/// Backward pass of [`conv3d_pre`] given the gradient of its output.
pub fn conv3d_backward(
    input: &Tensor4D,
    kernel: &Kernel,
    stride: usize,
    dpre: &Tensor4D,
) -> ConvGradients {
    ConvGradients {
        input: scatter(dpre, kernel, stride, input.spatial()),
        kernel: kernel_gradient(input, dpre, kernel.size, stride),
        bias: bias_gradient(dpre),
    }
}

/// Backward pass of [`conv3d_transpose_pre`] given the gradient of its output.
pub fn conv3d_transpose_backward(
    input: &Tensor4D,
    kernel: &Kernel,
    stride: usize,
    dpre: &Tensor4D,
) -> ConvGradients {
    ConvGradients {
        input: gather(dpre, kernel, stride),
        kernel: kernel_gradient(dpre, input, kernel.size, stride),
        bias: bias_gradient(dpre),
    }
}
