//! Small models, inputs, and a hand-chained end-to-end backward pass used as
//! the reference for full-chunk training.

use ff_core::datasets::{make_negative, make_positive, Dataset, OneHot};
use ff_core::goodness::{grouped_goodness, grouped_goodness_backward, layer_goodness, GroupSpec};
use ff_core::losses::{channel_wise_loss, ff_loss, LossGrad};
use ff_core::model::{LayerGrads, LayerSpec, ModelMode, ModelSpec};
use ff_core::ops::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, l2_normalize_backward,
    l2_normalize_forward, matmul_backward, matmul_forward, maxpool2x2_backward, maxpool2x2_forward, relu_backward,
    relu_forward, LayerParams, BN_EPS, BN_MOMENTUM,
};
use ff_core::trainer::Target;
use ff_core::{Shape, Tensor};
use rand::Rng;

use super::rng;

pub fn overlay_mlp() -> ModelSpec {
    ModelSpec {
        name: "mlp3".into(),
        mode: ModelMode::OriginalOverlay,
        num_classes: 2,
        input_shape: [1, 4, 4],
        layers: vec![LayerSpec::linear(16, 8), LayerSpec::linear(8, 6), LayerSpec::linear(6, 4)],
    }
}

pub fn grouped_cnn(depth: usize) -> ModelSpec {
    let mut layers = vec![LayerSpec::conv(1, 4, 3).normalized()];
    for i in 1..depth {
        let mut l = LayerSpec::conv(4, if i + 1 == depth { 6 } else { 4 }, 3).normalized();
        l.maxpool_after = i == 1;
        layers.push(l);
    }
    ModelSpec { name: "cnn".into(), mode: ModelMode::Grouped, num_classes: 2, input_shape: [1, 4, 4], layers }
}

pub fn toy_dataset(n: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let mut images = Tensor::zeros(Shape::new(n, 1, 4, 4));
    for (i, &y) in labels.iter().enumerate() {
        for (p, v) in images.sample_mut(i).iter_mut().enumerate() {
            let right = p % 4 >= 2;
            let lit = (right as usize) == y && p >= 4;
            *v = if lit { 0.8 } else { 0.1 } + r.random_range(0.0..0.1);
        }
    }
    Dataset::new(images, labels, 2).unwrap()
}

pub fn pair_input(ds: &Dataset, seed: u64) -> (Tensor, Target) {
    let idx: Vec<usize> = (0..ds.len()).collect();
    let batch = ds.batch(&idx).unwrap();
    let pos = make_positive(&batch, 1.0).unwrap();
    let (neg, _) = make_negative(&batch, 1.0, &mut rng(seed)).unwrap();
    (Tensor::concat(&[&pos, &neg]).unwrap(), Target::Pair { positives: ds.len() })
}

pub fn grouped_input(ds: &Dataset) -> (Tensor, Target) {
    (ds.images.clone(), Target::Grouped(OneHot::from_labels(&ds.labels, 2).unwrap()))
}

pub fn rel_close(a: &[f32], b: &[f32], tol: f32) -> bool {
    let scale = b.iter().fold(1.0f32, |m, v| m.max(v.abs()));
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
}

pub fn grads_close(a: &LayerGrads, b: &LayerGrads, tol: f32) -> bool {
    a.slots().iter().zip(b.slots()).all(|(x, y)| rel_close(x, y, tol)) && a.slots().len() == b.slots().len()
}

/// Hand-chained end-to-end backward of the last layer's FF loss through an
/// overlay MLP (linear, ReLU, L2 normalisation between layers).
pub fn mlp_monolithic(layers: &[LayerParams], x: &Tensor, positives: usize) -> Vec<LayerGrads> {
    let mut inputs = vec![x.clone()];
    let mut pres = Vec::new();
    let mut acts: Vec<Tensor> = Vec::new();
    for (i, p) in layers.iter().enumerate() {
        let pre = matmul_forward(&inputs[i], p).unwrap();
        let a = relu_forward(&pre);
        pres.push(pre);
        if i + 1 < layers.len() {
            inputs.push(l2_normalize_forward(&a));
        }
        acts.push(a);
    }
    let top = acts.last().unwrap();
    let g = layer_goodness(top);
    let out = ff_loss(&g[..positives], &g[positives..], 2.0).unwrap();
    let (dp, dn) = out.pair_grads().unwrap();
    let dg: Vec<f32> = dp.iter().chain(dn).copied().collect();
    let mut grad = top.clone();
    for (n, d) in dg.iter().enumerate() {
        grad.sample_mut(n).iter_mut().for_each(|v| *v *= 2.0 * d);
    }
    let mut out = Vec::new();
    for i in (0..layers.len()).rev() {
        let gz = relu_backward(&pres[i], &grad).unwrap();
        let k = matmul_backward(&inputs[i], &layers[i], &gz).unwrap();
        out.push(LayerGrads { weights: k.weights, bias: k.bias, gamma: None, beta: None });
        if i > 0 {
            grad = l2_normalize_backward(&acts[i - 1], &k.input).unwrap();
        }
    }
    out.reverse();
    out
}

/// Same for a grouped CNN (batchnorm, conv, ReLU, optional maxpool) under the
/// channel-wise loss.
pub fn cnn_monolithic(spec: &ModelSpec, layers: &[LayerParams], x: &Tensor, labels: &[usize]) -> Vec<LayerGrads> {
    struct Step {
        input: Tensor,
        bn: ff_core::ops::BatchNormCache,
        normed: Tensor,
        pre: Tensor,
        pool: Option<ff_core::ops::MaxPoolIndices>,
    }
    let mut cur = x.clone();
    let mut steps = Vec::new();
    for (l, p) in spec.layers.iter().zip(layers) {
        let bn = batchnorm_forward(&cur, p.batchnorm.as_ref().unwrap(), true, BN_MOMENTUM, BN_EPS).unwrap();
        let pre = conv2d_forward(&bn.output, p, 1, l.padding).unwrap();
        let a = relu_forward(&pre);
        let (out, pool) = if l.maxpool_after {
            let (o, i) = maxpool2x2_forward(&a).unwrap();
            (o, Some(i))
        } else {
            (a, None)
        };
        steps.push(Step { input: cur, bn: bn.cache, normed: bn.output, pre, pool });
        cur = out;
    }
    let gspec = GroupSpec::new(cur.shape().c, 2).unwrap();
    let g = grouped_goodness(&cur, &gspec).unwrap();
    let loss = channel_wise_loss(&g, &OneHot::from_labels(labels, 2).unwrap()).unwrap();
    let LossGrad::Matrix(gg) = loss.grad else { panic!() };
    let mut grad = grouped_goodness_backward(&cur, &gspec, &gg).unwrap();
    let mut out = Vec::new();
    for (i, s) in steps.iter().enumerate().rev() {
        if let Some(idx) = &s.pool {
            grad = maxpool2x2_backward(idx, &grad).unwrap();
        }
        let gz = relu_backward(&s.pre, &grad).unwrap();
        let k = conv2d_backward(&s.normed, &layers[i], &gz, 1, spec.layers[i].padding).unwrap();
        let b = batchnorm_backward(&s.bn, &layers[i].batchnorm.as_ref().unwrap().gamma, &k.input).unwrap();
        assert_eq!(b.input.shape(), s.input.shape());
        out.push(LayerGrads { weights: k.weights, bias: k.bias, gamma: Some(b.gamma), beta: Some(b.beta) });
        grad = b.input;
    }
    out.reverse();
    out
}
