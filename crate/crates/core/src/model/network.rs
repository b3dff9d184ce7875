use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{LayerKind, ModelMode, ModelSpec};
use crate::error::{FfError, Result};
use crate::ops::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, conv2d_param_grads, l2_normalize_backward,
    l2_normalize_forward, matmul_backward, matmul_forward, matmul_param_grads, maxpool2x2_backward, maxpool2x2_forward,
    relu_backward, relu_forward, BatchNormCache, BatchNormParams, LayerParams, MaxPoolIndices, BN_EPS, BN_MOMENTUM,
};
use crate::tensor::{Shape, Tensor};

/// Updated batchnorm running (mean, var).
pub type RunningStats = (Vec<f32>, Vec<f32>);

/// Intermediate values of one training-mode layer forward.
#[derive(Clone, Debug)]
pub struct LayerCache {
    /// What the layer received (after any inter-layer normalisation).
    pub input: Tensor,
    bn: Option<(BatchNormCache, Tensor)>,
    pre: Tensor,
    pool: Option<MaxPoolIndices>,
    /// Post-ReLU (and post-pool) activity; goodness is measured here.
    pub output: Tensor,
}

/// Gradients for every trainable tensor of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weights: Tensor,
    pub bias: Vec<f32>,
    pub gamma: Option<Vec<f32>>,
    pub beta: Option<Vec<f32>>,
}

impl LayerGrads {
    pub fn zeros_like(p: &LayerParams) -> Self {
        let c = p.batchnorm.as_ref().map(|bn| bn.channels());
        LayerGrads {
            weights: Tensor::zeros(p.weights.shape()),
            bias: vec![0.0; p.bias.len()],
            gamma: c.map(|c| vec![0.0; c]),
            beta: c.map(|c| vec![0.0; c]),
        }
    }

    pub fn add_assign(&mut self, other: &LayerGrads) {
        fn add(a: &mut [f32], b: &[f32]) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        add(self.weights.data_mut(), other.weights.data());
        add(&mut self.bias, &other.bias);
        if let (Some(a), Some(b)) = (&mut self.gamma, &other.gamma) {
            add(a, b);
        }
        if let (Some(a), Some(b)) = (&mut self.beta, &other.beta) {
            add(a, b);
        }
    }

    /// Views in the fixed order weights, bias, gamma, beta.
    pub fn slots(&self) -> Vec<&[f32]> {
        let mut v: Vec<&[f32]> = vec![self.weights.data(), &self.bias];
        if let Some(g) = &self.gamma {
            v.push(g);
        }
        if let Some(b) = &self.beta {
            v.push(b);
        }
        v
    }

    pub fn slots_mut(&mut self) -> Vec<&mut [f32]> {
        let mut v: Vec<&mut [f32]> = vec![self.weights.data_mut(), &mut self.bias];
        if let Some(g) = &mut self.gamma {
            v.push(g);
        }
        if let Some(b) = &mut self.beta {
            v.push(b);
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.slots().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.slots().iter().flat_map(|s| s.iter()).map(|&v| v as f64 * v as f64).sum::<f64>().sqrt()
    }
}

/// Trainable parameter views of a layer in the order used by [`LayerGrads::slots`].
pub fn param_slots_mut(p: &mut LayerParams) -> Vec<&mut [f32]> {
    let mut v: Vec<&mut [f32]> = vec![p.weights.data_mut(), &mut p.bias];
    if let Some(bn) = &mut p.batchnorm {
        v.push(&mut bn.gamma);
        v.push(&mut bn.beta);
    }
    v
}

/// A built network: spec, parameters and a forward-pass counter.
#[derive(Debug)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<LayerParams>,
    passes: AtomicU64,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Model { spec: self.spec.clone(), layers: self.layers.clone(), passes: AtomicU64::new(self.passes()) }
    }
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.layers == other.layers
    }
}

impl Model {
    /// He-uniform weights (`U(-b, b)`, `b = sqrt(6 / fan_in)`), zero biases,
    /// identity batchnorm. Draws come from one ChaCha8 stream in layer order.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let shapes = spec.trace()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.depth());
        for (l, input) in spec.layers.iter().zip(&shapes) {
            let wshape = match l.kind {
                LayerKind::Linear => Shape::matrix(l.in_channels, l.out_channels),
                LayerKind::Conv => Shape::new(l.out_channels, l.in_channels, l.kernel, l.kernel),
            };
            let bound = (6.0 / l.fan_in() as f64).sqrt() as f32;
            let weights = Tensor::from_fn(wshape, |_| rng.random_range(-bound..bound));
            layers.push(LayerParams {
                weights,
                bias: vec![0.0; l.out_channels],
                batchnorm: l.batchnorm_before.then(|| BatchNormParams::new(input.c)),
            });
        }
        Ok(Model { spec: spec.clone(), layers, passes: AtomicU64::new(0) })
    }

    /// Assemble a model from explicit parameters, checking them against `spec`.
    pub fn from_parts(spec: ModelSpec, layers: Vec<LayerParams>) -> Result<Self> {
        let shapes = spec.trace()?;
        if layers.len() != spec.depth() {
            return Err(FfError::Shape(format!("{} parameter sets for a {}-layer spec", layers.len(), spec.depth())));
        }
        for (i, ((l, p), input)) in spec.layers.iter().zip(&layers).zip(&shapes).enumerate() {
            let expect = match l.kind {
                LayerKind::Linear => Shape::matrix(l.in_channels, l.out_channels),
                LayerKind::Conv => Shape::new(l.out_channels, l.in_channels, l.kernel, l.kernel),
            };
            let bn_ok = match (&p.batchnorm, l.batchnorm_before) {
                (None, false) => true,
                (Some(bn), true) => {
                    bn.channels() == input.c
                        && bn.beta.len() == input.c
                        && bn.running_mean.len() == input.c
                        && bn.running_var.len() == input.c
                }
                _ => false,
            };
            if p.weights.shape() != expect || p.bias.len() != l.out_channels || !bn_ok {
                return Err(FfError::Shape(format!(
                    "layer {i}: parameters {} / bias {} do not match spec (expected {expect})",
                    p.weights.shape(),
                    p.bias.len()
                )));
            }
        }
        Ok(Model { spec, layers, passes: AtomicU64::new(0) })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn mode(&self) -> ModelMode {
        self.spec.mode
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<LayerParams> {
        self.layers
    }

    /// Number of full-network forward passes run through [`Model::forward_eval`].
    pub fn passes(&self) -> u64 {
        self.passes.load(Ordering::Relaxed)
    }

    pub fn reset_passes(&self) {
        self.passes.store(0, Ordering::Relaxed);
    }

    /// FNV-1a over every parameter's bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |vals: &[f32]| {
            for v in vals {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        };
        for p in &self.layers {
            eat(p.weights.data());
            eat(&p.bias);
            if let Some(bn) = &p.batchnorm {
                eat(&bn.gamma);
                eat(&bn.beta);
                eat(&bn.running_mean);
                eat(&bn.running_var);
            }
        }
        h
    }

    /// Input handed to the layer after one producing `output`: L2-normalised in
    /// overlay mode, unchanged in grouped mode.
    pub fn next_input(&self, output: &Tensor) -> Tensor {
        match self.spec.mode {
            ModelMode::OriginalOverlay => l2_normalize_forward(output),
            ModelMode::Grouped => output.clone(),
        }
    }

    /// Gradient through [`Model::next_input`].
    pub fn next_input_backward(&self, output: &Tensor, grad: &Tensor) -> Result<Tensor> {
        match self.spec.mode {
            ModelMode::OriginalOverlay => l2_normalize_backward(output, grad),
            ModelMode::Grouped => Ok(grad.clone()),
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        if [s.c, s.h, s.w] != self.spec.input_shape {
            return Err(FfError::Shape(format!(
                "model '{}' expects samples of {:?}, got {s}",
                self.spec.name, self.spec.input_shape
            )));
        }
        Ok(())
    }

    fn kernel_forward(&self, l: usize, x: &Tensor) -> Result<Tensor> {
        let spec = &self.spec.layers[l];
        let p = &self.layers[l];
        match spec.kind {
            LayerKind::Linear => matmul_forward(x, p),
            LayerKind::Conv => conv2d_forward(x, p, 1, spec.padding),
        }
    }

    /// Training-mode forward of layer `l`. Returns the cache and, when the
    /// layer has batchnorm, its updated running statistics.
    pub fn layer_forward(&self, l: usize, input: Tensor) -> Result<(LayerCache, Option<RunningStats>)> {
        let spec = &self.spec.layers[l];
        let (bn, running) = match &self.layers[l].batchnorm {
            Some(params) => {
                let f = batchnorm_forward(&input, params, true, BN_MOMENTUM, BN_EPS)?;
                (Some((f.cache, f.output)), Some((f.running_mean, f.running_var)))
            }
            None => (None, None),
        };
        let kin = bn.as_ref().map_or(&input, |(_, out)| out);
        let pre = self.kernel_forward(l, kin)?;
        let act = relu_forward(&pre);
        let (output, pool) = if spec.maxpool_after {
            let (o, idx) = maxpool2x2_forward(&act)?;
            (o, Some(idx))
        } else {
            (act, None)
        };
        Ok((LayerCache { input, bn, pre, pool, output }, running))
    }

    /// Backward of layer `l` from a gradient on its output. The input gradient
    /// is only computed when `want_input` is set.
    pub fn layer_backward(
        &self,
        l: usize,
        cache: &LayerCache,
        grad_output: &Tensor,
        want_input: bool,
    ) -> Result<(LayerGrads, Option<Tensor>)> {
        let spec = &self.spec.layers[l];
        let p = &self.layers[l];
        let g = match &cache.pool {
            Some(idx) => maxpool2x2_backward(idx, grad_output)?,
            None => grad_output.clone(),
        };
        let g = relu_backward(&cache.pre, &g)?;
        let kin = cache.bn.as_ref().map_or(&cache.input, |(_, out)| out);
        let need_kernel_input = want_input || cache.bn.is_some();
        let (gw, gb, gk) = match (spec.kind, need_kernel_input) {
            (LayerKind::Linear, true) => {
                let k = matmul_backward(kin, p, &g)?;
                (k.weights, k.bias, Some(k.input))
            }
            (LayerKind::Linear, false) => {
                let (w, b) = matmul_param_grads(kin, p, &g)?;
                (w, b, None)
            }
            (LayerKind::Conv, true) => {
                let k = conv2d_backward(kin, p, &g, 1, spec.padding)?;
                (k.weights, k.bias, Some(k.input))
            }
            (LayerKind::Conv, false) => {
                let (w, b) = conv2d_param_grads(kin, p, &g, 1, spec.padding)?;
                (w, b, None)
            }
        };
        let mut grads = LayerGrads { weights: gw, bias: gb, gamma: None, beta: None };
        let gx = match (&cache.bn, gk) {
            (Some((bn_cache, _)), Some(gk)) => {
                let gamma = &p.batchnorm.as_ref().expect("batchnorm params").gamma;
                let b = batchnorm_backward(bn_cache, gamma, &gk)?;
                grads.gamma = Some(b.gamma);
                grads.beta = Some(b.beta);
                want_input.then_some(b.input)
            }
            (None, gk) => gk.filter(|_| want_input),
            (Some(_), None) => unreachable!("kernel input gradient is computed when batchnorm is present"),
        };
        Ok((grads, gx))
    }

    /// Training-mode forward of every layer; batchnorm running statistics are
    /// updated in place.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<Vec<LayerCache>> {
        self.check_input(x)?;
        let mut caches: Vec<LayerCache> = Vec::with_capacity(self.depth());
        for l in 0..self.depth() {
            let input = match caches.last() {
                None => x.clone(),
                Some(prev) => self.next_input(&prev.output),
            };
            let (cache, running) = self.layer_forward(l, input)?;
            if let (Some((mean, var)), Some(bn)) = (running, &mut self.layers[l].batchnorm) {
                bn.running_mean = mean;
                bn.running_var = var;
            }
            caches.push(cache);
        }
        Ok(caches)
    }

    /// Eval-mode forward returning every layer's output activity. Counts as one
    /// pass.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(x)?;
        self.passes.fetch_add(1, Ordering::Relaxed);
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.depth());
        for l in 0..self.depth() {
            let normalized;
            let input = match outputs.last() {
                None => x,
                Some(prev) => match self.spec.mode {
                    ModelMode::OriginalOverlay => {
                        normalized = l2_normalize_forward(prev);
                        &normalized
                    }
                    ModelMode::Grouped => prev,
                },
            };
            let bn_out = match &self.layers[l].batchnorm {
                Some(params) => Some(batchnorm_forward(input, params, false, BN_MOMENTUM, BN_EPS)?.output),
                None => None,
            };
            let pre = self.kernel_forward(l, bn_out.as_ref().unwrap_or(input))?;
            let act = relu_forward(&pre);
            let out = if self.spec.layers[l].maxpool_after { maxpool2x2_forward(&act)?.0 } else { act };
            outputs.push(out);
        }
        Ok(outputs)
    }
}
