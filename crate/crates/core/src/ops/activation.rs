use crate::error::{FfError, Result};
use crate::tensor::Tensor;

pub const L2_EPS: f32 = 1e-8;

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient is passed where `x > 0`; the subgradient at zero is zero.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if x.shape() != grad_out.shape() {
        return Err(FfError::Shape(format!("relu backward: x {} vs grad_out {}", x.shape(), grad_out.shape())));
    }
    let data = x.data().iter().zip(grad_out.data()).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect();
    Tensor::from_vec(x.shape(), data)
}

fn norm(v: &[f32]) -> f32 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt() as f32
}

/// Divide each sample's flattened features by `||x||_2 + eps`.
pub fn l2_normalize_forward(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for n in 0..x.shape().n {
        let row = out.sample_mut(n);
        let d = norm(row) + L2_EPS;
        for v in row.iter_mut() {
            *v /= d;
        }
    }
    out
}

/// `dx = g / d - x (x . g) / (r d^2)` with `r = ||x||`, `d = r + eps`.
pub fn l2_normalize_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if x.shape() != grad_out.shape() {
        return Err(FfError::Shape(format!("l2_normalize backward: x {} vs grad_out {}", x.shape(), grad_out.shape())));
    }
    let mut gx = Tensor::zeros(x.shape());
    for n in 0..x.shape().n {
        let xs = x.sample(n);
        let gs = grad_out.sample(n);
        let r = norm(xs) as f64;
        let d = r + L2_EPS as f64;
        let dot: f64 = xs.iter().zip(gs).map(|(&a, &b)| a as f64 * b as f64).sum();
        let coef = if r > 0.0 { dot / (r * d * d) } else { 0.0 };
        for ((o, &a), &g) in gx.sample_mut(n).iter_mut().zip(xs).zip(gs) {
            *o = (g as f64 / d - a as f64 * coef) as f32;
        }
    }
    Ok(gx)
}
