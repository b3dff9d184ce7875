use super::gemm::sgemm;
use super::{KernelGrads, LayerParams};
use crate::error::{FfError, Result};
use crate::tensor::{Shape, Tensor};

fn linear_dims(x: &Tensor, p: &LayerParams) -> Result<(usize, usize, usize)> {
    let ws = p.weights.shape();
    let (n, fin) = (x.shape().n, x.shape().sample_len());
    if ws.h != 1 || ws.w != 1 || ws.n != fin {
        return Err(FfError::Shape(format!(
            "linear layer: input {} has {fin} features but weights are {ws}",
            x.shape()
        )));
    }
    if p.bias.len() != ws.c {
        return Err(FfError::Shape(format!("linear layer: bias length {} != output features {}", p.bias.len(), ws.c)));
    }
    Ok((n, fin, ws.c))
}

/// `out[n, j] = sum_i x[n, i] * W[i, j] + b[j]`. Inputs of rank 4 are flattened
/// per sample.
pub fn matmul_forward(x: &Tensor, p: &LayerParams) -> Result<Tensor> {
    let (n, fin, fout) = linear_dims(x, p)?;
    let mut out = Vec::with_capacity(n * fout);
    for _ in 0..n {
        out.extend_from_slice(&p.bias);
    }
    sgemm(n, fin, fout, x.data(), false, p.weights.data(), false, 1.0, &mut out);
    Tensor::from_vec(Shape::matrix(n, fout), out)
}

fn grads_impl(
    x: &Tensor,
    p: &LayerParams,
    grad_out: &Tensor,
    want_input: bool,
) -> Result<(Option<Tensor>, Tensor, Vec<f32>)> {
    let (n, fin, fout) = linear_dims(x, p)?;
    if grad_out.shape() != Shape::matrix(n, fout) {
        return Err(FfError::Shape(format!(
            "linear backward: grad_out {} != expected {}",
            grad_out.shape(),
            Shape::matrix(n, fout)
        )));
    }
    let g = grad_out.data();
    let mut gw = vec![0.0; fin * fout];
    sgemm(fin, n, fout, x.data(), true, g, false, 0.0, &mut gw);
    let mut gb = vec![0.0f32; fout];
    for row in g.chunks_exact(fout) {
        for (acc, v) in gb.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let gx = if want_input {
        let mut gx = vec![0.0; n * fin];
        sgemm(n, fout, fin, g, false, p.weights.data(), true, 0.0, &mut gx);
        Some(Tensor::from_vec(x.shape(), gx)?)
    } else {
        None
    };
    Ok((gx, Tensor::from_vec(p.weights.shape(), gw)?, gb))
}

/// Exact gradients of [`matmul_forward`]; `input` has the shape of `x`.
pub fn matmul_backward(x: &Tensor, p: &LayerParams, grad_out: &Tensor) -> Result<KernelGrads> {
    let (gx, weights, bias) = grads_impl(x, p, grad_out, true)?;
    Ok(KernelGrads { input: gx.expect("input gradient requested"), weights, bias })
}

/// Weight and bias gradients only, for layers whose input is detached.
pub fn matmul_param_grads(x: &Tensor, p: &LayerParams, grad_out: &Tensor) -> Result<(Tensor, Vec<f32>)> {
    let (_, w, b) = grads_impl(x, p, grad_out, false)?;
    Ok((w, b))
}
