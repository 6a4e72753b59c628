use super::Tensor;
use crate::error::{Error, Result};

/// Stride and zero-padding of a square-kernel convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn new(stride: usize, pad: usize) -> Self {
        ConvSpec { stride, pad }
    }
}

/// Output extent along one spatial axis.
pub fn conv_output_extent(input: usize, kernel: usize, spec: ConvSpec) -> usize {
    (input + 2 * spec.pad - kernel) / spec.stride + 1
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    /// `None` when the caller did not ask for the input gradient.
    pub input: Option<Tensor>,
    pub weights: Tensor,
    pub bias: Tensor,
}

struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    h_out: usize,
    w_out: usize,
}

fn geometry(input: &Tensor, weights: &Tensor, bias: &Tensor, spec: ConvSpec) -> Result<Geometry> {
    input.expect_rank(3, "conv2d input")?;
    weights.expect_rank(4, "conv2d weights")?;
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let ws = weights.shape();
    let (c_out, k) = (ws[0], ws[2]);
    if ws[1] != c_in {
        return Err(Error::contract(format!(
            "conv2d: input has {c_in} channels but weights expect {}",
            ws[1]
        )));
    }
    if ws[3] != k {
        return Err(Error::contract(format!(
            "conv2d: kernel must be square, got {k}x{}",
            ws[3]
        )));
    }
    bias.expect_shape(&[c_out], "conv2d bias")?;
    if spec.stride == 0 {
        return Err(Error::contract("conv2d: stride must be at least 1"));
    }
    if k > h + 2 * spec.pad || k > w + 2 * spec.pad {
        return Err(Error::contract(format!(
            "conv2d: kernel {k} larger than padded input {h}x{w} (pad {})",
            spec.pad
        )));
    }
    Ok(Geometry {
        c_in,
        h,
        w,
        c_out,
        k,
        h_out: conv_output_extent(h, k, spec),
        w_out: conv_output_extent(w, k, spec),
    })
}

/// Unrolls receptive fields into a `[c_in*k*k, h_out*w_out]` matrix.
fn im2col(input: &[f32], g: &Geometry, spec: ConvSpec) -> Vec<f32> {
    let spatial = g.h_out * g.w_out;
    let mut cols = vec![0.0f32; g.c_in * g.k * g.k * spatial];
    for c in 0..g.c_in {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * spatial..(row + 1) * spatial];
                for oy in 0..g.h_out {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.w_out {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[oy * g.w_out + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f32], g: &Geometry, spec: ConvSpec) -> Vec<f32> {
    let spatial = g.h_out * g.w_out;
    let mut out = vec![0.0f32; g.c_in * g.h * g.w];
    for c in 0..g.c_in {
        let plane = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * spatial..(row + 1) * spatial];
                for oy in 0..g.h_out {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.w_out {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.w_out + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Strided view of a row-major or transposed matrix operand.
#[derive(Clone, Copy)]
struct Operand<'a> {
    data: &'a [f32],
    row_stride: isize,
    col_stride: isize,
}

/// `c = a * b + beta * c` with `a: m x k`, `b: k x n`, `c: m x n` row-major.
fn gemm(m: usize, k: usize, n: usize, a: Operand, b: Operand, beta: f32, c: &mut [f32]) {
    assert!(c.len() >= m * n);
    // SAFETY: strides describe in-bounds views; every operand built in this
    // module spans exactly m*k, k*n and m*n elements respectively.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// 2-D cross-correlation of a `[c_in, h, w]` input with `[c_out, c_in, k, k]`
/// weights, zero padding on all sides.
pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &Tensor, spec: ConvSpec) -> Result<Tensor> {
    let g = geometry(input, weights, bias, spec)?;
    let spatial = g.h_out * g.w_out;
    let patch = g.c_in * g.k * g.k;
    let cols = im2col(input.data(), &g, spec);

    let mut out = vec![0.0f32; g.c_out * spatial];
    for (o, row) in out.chunks_exact_mut(spatial).enumerate() {
        row.fill(bias.data()[o]);
    }
    gemm(
        g.c_out,
        patch,
        spatial,
        Operand {
            data: weights.data(),
            row_stride: patch as isize,
            col_stride: 1,
        },
        Operand {
            data: &cols,
            row_stride: spatial as isize,
            col_stride: 1,
        },
        1.0,
        &mut out,
    );
    Tensor::from_vec(&[g.c_out, g.h_out, g.w_out], out)
}

/// Gradients of [`conv2d`] given the upstream gradient of its output.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    spec: ConvSpec,
    grad_out: &Tensor,
    want_input_grad: bool,
) -> Result<ConvGrads> {
    let g = geometry(input, weights, bias, spec)?;
    grad_out.expect_shape(&[g.c_out, g.h_out, g.w_out], "conv2d_backward grad_out")?;
    let spatial = g.h_out * g.w_out;
    let patch = g.c_in * g.k * g.k;
    let cols = im2col(input.data(), &g, spec);
    let go = grad_out.data();

    let mut gw = vec![0.0f32; g.c_out * patch];
    gemm(
        g.c_out,
        spatial,
        patch,
        Operand {
            data: go,
            row_stride: spatial as isize,
            col_stride: 1,
        },
        Operand {
            data: &cols,
            row_stride: 1,
            col_stride: spatial as isize,
        },
        0.0,
        &mut gw,
    );

    let gb: Vec<f32> = go.chunks_exact(spatial).map(|r| r.iter().sum()).collect();

    let input_grad = if want_input_grad {
        let mut gcols = vec![0.0f32; patch * spatial];
        gemm(
            patch,
            g.c_out,
            spatial,
            Operand {
                data: weights.data(),
                row_stride: 1,
                col_stride: patch as isize,
            },
            Operand {
                data: go,
                row_stride: spatial as isize,
                col_stride: 1,
            },
            0.0,
            &mut gcols,
        );
        Some(Tensor::from_vec(
            &[g.c_in, g.h, g.w],
            col2im(&gcols, &g, spec),
        )?)
    } else {
        None
    };

    Ok(ConvGrads {
        input: input_grad,
        weights: Tensor::from_vec(weights.shape(), gw)?,
        bias: Tensor::from_vec(&[g.c_out], gb)?,
    })
}
