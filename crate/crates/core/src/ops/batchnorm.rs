use crate::error::{FfError, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

/// Per-channel affine parameters and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

impl BatchNormParams {
    pub fn new(channels: usize) -> Self {
        BatchNormParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Clone, Debug)]
pub struct BatchNormCache {
    x_hat: Tensor,
    inv_std: Vec<f32>,
    training: bool,
}

#[derive(Clone, Debug)]
pub struct BatchNormForward {
    pub output: Tensor,
    pub cache: BatchNormCache,
    /// Updated running statistics (unchanged copies in eval mode).
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads {
    pub input: Tensor,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

/// Batch normalisation over `(N, H, W)` per channel.
///
/// Training mode normalises with biased batch variance and blends the unbiased
/// variance into the running estimate; eval mode uses the running statistics.
pub fn batchnorm_forward(
    x: &Tensor,
    bn: &BatchNormParams,
    training: bool,
    momentum: f32,
    eps: f32,
) -> Result<BatchNormForward> {
    let s = x.shape();
    if bn.channels() != s.c || bn.beta.len() != s.c || bn.running_mean.len() != s.c || bn.running_var.len() != s.c {
        return Err(FfError::Shape(format!(
            "batchnorm: input {s} has {} channels, parameters have {}",
            s.c,
            bn.channels()
        )));
    }
    let plane = s.plane();
    let count = s.n * plane;
    let data = x.data();
    let mut mean = vec![0.0f32; s.c];
    let mut var = vec![0.0f32; s.c];
    let mut running_mean = bn.running_mean.clone();
    let mut running_var = bn.running_var.clone();
    if training {
        for c in 0..s.c {
            let mut sum = 0.0f64;
            for n in 0..s.n {
                let off = (n * s.c + c) * plane;
                sum += data[off..off + plane].iter().map(|&v| v as f64).sum::<f64>();
            }
            let m = sum / count as f64;
            let mut sq = 0.0f64;
            for n in 0..s.n {
                let off = (n * s.c + c) * plane;
                sq += data[off..off + plane].iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>();
            }
            let biased = sq / count as f64;
            let unbiased = if count > 1 { sq / (count - 1) as f64 } else { biased };
            mean[c] = m as f32;
            var[c] = biased as f32;
            running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * m as f32;
            running_var[c] = (1.0 - momentum) * running_var[c] + momentum * unbiased as f32;
        }
    } else {
        mean.copy_from_slice(&bn.running_mean);
        var.copy_from_slice(&bn.running_var);
    }
    let inv_std: Vec<f32> = var.iter().map(|&v| 1.0 / (v.max(0.0) + eps).sqrt()).collect();
    let mut x_hat = Tensor::zeros(s);
    let mut out = Tensor::zeros(s);
    {
        let xh = x_hat.data_mut();
        let o = out.data_mut();
        for n in 0..s.n {
            for c in 0..s.c {
                let off = (n * s.c + c) * plane;
                for i in off..off + plane {
                    let v = (data[i] - mean[c]) * inv_std[c];
                    xh[i] = v;
                    o[i] = bn.gamma[c] * v + bn.beta[c];
                }
            }
        }
    }
    Ok(BatchNormForward { output: out, cache: BatchNormCache { x_hat, inv_std, training }, running_mean, running_var })
}

pub fn batchnorm_backward(cache: &BatchNormCache, gamma: &[f32], grad_out: &Tensor) -> Result<BatchNormGrads> {
    let s = cache.x_hat.shape();
    if grad_out.shape() != s || gamma.len() != s.c {
        return Err(FfError::Shape(format!("batchnorm backward: grad_out {} vs cached {s}", grad_out.shape())));
    }
    let plane = s.plane();
    let count = (s.n * plane) as f64;
    let g = grad_out.data();
    let xh = cache.x_hat.data();
    let mut dgamma = vec![0.0f32; s.c];
    let mut dbeta = vec![0.0f32; s.c];
    let mut sum_g = vec![0.0f64; s.c];
    let mut sum_gx = vec![0.0f64; s.c];
    for n in 0..s.n {
        for c in 0..s.c {
            let off = (n * s.c + c) * plane;
            for i in off..off + plane {
                sum_g[c] += g[i] as f64;
                sum_gx[c] += g[i] as f64 * xh[i] as f64;
            }
        }
    }
    for c in 0..s.c {
        dgamma[c] = sum_gx[c] as f32;
        dbeta[c] = sum_g[c] as f32;
    }
    let mut gx = Tensor::zeros(s);
    let out = gx.data_mut();
    for n in 0..s.n {
        for c in 0..s.c {
            let off = (n * s.c + c) * plane;
            let scale = gamma[c] * cache.inv_std[c];
            if cache.training {
                let mg = (sum_g[c] / count) as f32;
                let mgx = (sum_gx[c] / count) as f32;
                for i in off..off + plane {
                    out[i] = scale * (g[i] - mg - xh[i] * mgx);
                }
            } else {
                for i in off..off + plane {
                    out[i] = scale * g[i];
                }
            }
        }
    }
    Ok(BatchNormGrads { input: gx, gamma: dgamma, beta: dbeta })
}
