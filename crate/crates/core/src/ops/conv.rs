use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gemm::sgemm;
use super::{KernelGrads, LayerParams};
use crate::error::{FfError, Result};
use crate::tensor::{Shape, Tensor};

/// Spatial zero padding for a square kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Output keeps the input size at stride 1. Even kernels pad one extra
    /// row/column at the bottom/right.
    Same,
    /// Symmetric padding on every side.
    Explicit(usize),
}

impl Padding {
    /// `(before, after)` padding for kernel size `k`.
    pub fn amounts(self, k: usize) -> (usize, usize) {
        match self {
            Padding::Same => {
                let lo = (k - 1) / 2;
                (lo, k - 1 - lo)
            }
            Padding::Explicit(p) => (p, p),
        }
    }
}

/// `floor((size + pad_lo + pad_hi - k) / stride) + 1`, or a configuration error
/// when the kernel does not fit the padded input.
pub fn conv_output_dim(size: usize, k: usize, stride: usize, padding: Padding) -> Result<usize> {
    if stride == 0 {
        return Err(FfError::Config("conv stride must be >= 1".into()));
    }
    let (lo, hi) = padding.amounts(k);
    let padded = size + lo + hi;
    if k == 0 || k > padded {
        return Err(FfError::Config(format!("kernel {k} larger than padded input {padded}")));
    }
    Ok((padded - k) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(x: Shape, p: &LayerParams, stride: usize, padding: Padding) -> Result<Self> {
        let ws = p.weights.shape();
        if ws.h != ws.w {
            return Err(FfError::Shape(format!("conv kernel must be square, got {ws}")));
        }
        if ws.c != x.c {
            return Err(FfError::Shape(format!("conv input {x} has {} channels but weights are {ws}", x.c)));
        }
        if p.bias.len() != ws.n {
            return Err(FfError::Shape(format!("conv bias length {} != output channels {}", p.bias.len(), ws.n)));
        }
        let k = ws.h;
        let ho = conv_output_dim(x.h, k, stride, padding)?;
        let wo = conv_output_dim(x.w, k, stride, padding)?;
        Ok(Geometry { cin: x.c, h: x.h, w: x.w, cout: ws.n, k, stride, pad: padding.amounts(k).0, ho, wo })
    }

    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Unfold one sample into a `(Cin*K*K) x (Ho*Wo)` matrix.
    fn im2col(&self, x: &[f32], cols: &mut [f32]) {
        let ncol = self.col_cols();
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for kh in 0..self.k {
                for kw in 0..self.k {
                    let row = (ci * self.k + kh) * self.k + kw;
                    let dst = &mut cols[row * ncol..(row + 1) * ncol];
                    for oh in 0..self.ho {
                        let ih = (oh * self.stride + kh) as isize - self.pad as isize;
                        let line = &mut dst[oh * self.wo..(oh + 1) * self.wo];
                        if ih < 0 || ih >= self.h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[ih as usize * self.w..(ih as usize + 1) * self.w];
                        for (ow, v) in line.iter_mut().enumerate() {
                            let iw = (ow * self.stride + kw) as isize - self.pad as isize;
                            *v = if iw < 0 || iw >= self.w as isize { 0.0 } else { src[iw as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add a column matrix back into one sample's input gradient.
    fn col2im(&self, cols: &[f32], gx: &mut [f32]) {
        let ncol = self.col_cols();
        for ci in 0..self.cin {
            for kh in 0..self.k {
                for kw in 0..self.k {
                    let row = (ci * self.k + kh) * self.k + kw;
                    let src = &cols[row * ncol..(row + 1) * ncol];
                    for oh in 0..self.ho {
                        let ih = (oh * self.stride + kh) as isize - self.pad as isize;
                        if ih < 0 || ih >= self.h as isize {
                            continue;
                        }
                        let base = (ci * self.h + ih as usize) * self.w;
                        for ow in 0..self.wo {
                            let iw = (ow * self.stride + kw) as isize - self.pad as isize;
                            if iw >= 0 && iw < self.w as isize {
                                gx[base + iw as usize] += src[oh * self.wo + ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

// Weight-gradient partials are summed over blocks of this many samples, then
// reduced in block order.
const GRAD_BLOCK: usize = 8;

/// Cross-correlation with bias.
pub fn conv2d_forward(x: &Tensor, p: &LayerParams, stride: usize, padding: Padding) -> Result<Tensor> {
    let g = Geometry::new(x.shape(), p, stride, padding)?;
    let out_shape = Shape::new(x.shape().n, g.cout, g.ho, g.wo);
    let mut out = vec![0.0f32; out_shape.numel()];
    let in_len = x.shape().sample_len();
    let out_len = out_shape.sample_len();
    let hw = g.col_cols();
    out.par_chunks_mut(out_len).zip(x.data().par_chunks(in_len)).for_each_init(
        || vec![0.0f32; g.col_rows() * g.col_cols()],
        |cols, (o, xs)| {
            for (c, b) in p.bias.iter().enumerate() {
                o[c * hw..(c + 1) * hw].fill(*b);
            }
            g.im2col(xs, cols);
            sgemm(g.cout, g.col_rows(), hw, p.weights.data(), false, cols, false, 1.0, o);
        },
    );
    Tensor::from_vec(out_shape, out)
}

fn backward_impl(
    x: &Tensor,
    p: &LayerParams,
    grad_out: &Tensor,
    stride: usize,
    padding: Padding,
    want_input: bool,
) -> Result<(Option<Tensor>, Tensor, Vec<f32>)> {
    let g = Geometry::new(x.shape(), p, stride, padding)?;
    let n = x.shape().n;
    let expect = Shape::new(n, g.cout, g.ho, g.wo);
    if grad_out.shape() != expect {
        return Err(FfError::Shape(format!("conv backward: grad_out {} != expected {expect}", grad_out.shape())));
    }
    let in_len = x.shape().sample_len();
    let out_len = expect.sample_len();
    let hw = g.col_cols();
    let wlen = p.weights.len();

    let partials: Vec<(Vec<f32>, Vec<f32>)> = (0..n.div_ceil(GRAD_BLOCK))
        .into_par_iter()
        .map(|block| {
            let mut gw = vec![0.0f32; wlen];
            let mut gb = vec![0.0f32; g.cout];
            let mut cols = vec![0.0f32; g.col_rows() * hw];
            for s in block * GRAD_BLOCK..((block + 1) * GRAD_BLOCK).min(n) {
                let go = &grad_out.data()[s * out_len..(s + 1) * out_len];
                g.im2col(&x.data()[s * in_len..(s + 1) * in_len], &mut cols);
                sgemm(g.cout, hw, g.col_rows(), go, false, &cols, true, 1.0, &mut gw);
                for (c, acc) in gb.iter_mut().enumerate() {
                    *acc += go[c * hw..(c + 1) * hw].iter().sum::<f32>();
                }
            }
            (gw, gb)
        })
        .collect();
    let mut gw = vec![0.0f32; wlen];
    let mut gb = vec![0.0f32; g.cout];
    for (pw, pb) in &partials {
        for (a, v) in gw.iter_mut().zip(pw) {
            *a += v;
        }
        for (a, v) in gb.iter_mut().zip(pb) {
            *a += v;
        }
    }

    let gx = if want_input {
        let mut gx = vec![0.0f32; x.len()];
        gx.par_chunks_mut(in_len).zip(grad_out.data().par_chunks(out_len)).for_each_init(
            || vec![0.0f32; g.col_rows() * hw],
            |cols, (gxs, go)| {
                sgemm(g.col_rows(), g.cout, hw, p.weights.data(), true, go, false, 0.0, cols);
                g.col2im(cols, gxs);
            },
        );
        Some(Tensor::from_vec(x.shape(), gx)?)
    } else {
        None
    };
    Ok((gx, Tensor::from_vec(p.weights.shape(), gw)?, gb))
}

/// Exact gradients of [`conv2d_forward`].
pub fn conv2d_backward(
    x: &Tensor,
    p: &LayerParams,
    grad_out: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<KernelGrads> {
    let (gx, weights, bias) = backward_impl(x, p, grad_out, stride, padding, true)?;
    Ok(KernelGrads { input: gx.expect("input gradient requested"), weights, bias })
}

/// Weight and bias gradients only.
pub fn conv2d_param_grads(
    x: &Tensor,
    p: &LayerParams,
    grad_out: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor, Vec<f32>)> {
    let (_, w, b) = backward_impl(x, p, grad_out, stride, padding, false)?;
    Ok((w, b))
}
