//! Finite-difference checks of every backward kernel on random small instances.
//!
//! Each check scalarises the kernel output with a fixed random projection and
//! compares the analytic gradient of that projection with central differences.
//! Inputs that sit within the perturbation of a kink (ReLU at 0, pooling ties,
//! the margin hinge) are moved away by construction.

use ff_core::datasets::OneHot;
use ff_core::goodness::{grouped_goodness, grouped_goodness_backward, GroupGoodness, GroupSpec};
use ff_core::gradcheck::{check, projection, FD_EPS};
use ff_core::losses::{channel_wise_loss, ff_loss, margin_loss_oriented, symba_loss_oriented, LossGrad, LossOutput};
use ff_core::ops::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, l2_normalize_backward,
    l2_normalize_forward, matmul_backward, matmul_forward, maxpool2x2_backward, maxpool2x2_forward, relu_backward,
    relu_forward, BatchNormParams, LayerParams, Padding, BN_EPS, BN_MOMENTUM,
};
use ff_core::{Shape, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{rand_tensor, rand_vec, rng};

#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub name: &'static str,
    pub instances: usize,
    pub worst: f64,
}

impl SuiteResult {
    pub fn passes(&self, tol: f64) -> bool {
        self.worst < tol
    }
}

fn worst(errs: impl IntoIterator<Item = f64>) -> f64 {
    errs.into_iter().fold(0.0, f64::max)
}

fn linear_instance(r: &mut ChaCha8Rng) -> f64 {
    let (n, fin, fout) = (r.random_range(1..4), r.random_range(1..6), r.random_range(1..6));
    let x = rand_tensor(r, Shape::matrix(n, fin), -1.0, 1.0);
    let p = LayerParams {
        weights: rand_tensor(r, Shape::matrix(fin, fout), -1.0, 1.0),
        bias: rand_vec(r, fout, -1.0, 1.0),
        batchnorm: None,
    };
    let proj = rand_vec(r, n * fout, -1.0, 1.0);
    let go = Tensor::matrix(n, fout, proj.clone()).unwrap();
    let g = matmul_backward(&x, &p, &go).unwrap();
    let ex = check(x.data(), g.input.data(), FD_EPS, |v| {
        let xt = Tensor::from_vec(x.shape(), v.to_vec()).unwrap();
        projection(matmul_forward(&xt, &p).unwrap().data(), &proj)
    });
    let ew = check(p.weights.data(), g.weights.data(), FD_EPS, |v| {
        let mut q = p.clone();
        q.weights = Tensor::from_vec(p.weights.shape(), v.to_vec()).unwrap();
        projection(matmul_forward(&x, &q).unwrap().data(), &proj)
    });
    let eb = check(&p.bias, &g.bias, FD_EPS, |v| {
        let mut q = p.clone();
        q.bias = v.to_vec();
        projection(matmul_forward(&x, &q).unwrap().data(), &proj)
    });
    worst([ex.rel_err, ew.rel_err, eb.rel_err])
}

fn conv_instance(r: &mut ChaCha8Rng) -> f64 {
    let n = r.random_range(1..3);
    let cin = r.random_range(1..4);
    let cout = r.random_range(1..4);
    let k = r.random_range(1..5);
    let h = r.random_range(k.max(2)..7);
    let w = r.random_range(k.max(2)..7);
    let padding = if r.random_bool(0.5) { Padding::Same } else { Padding::Explicit(r.random_range(0..2)) };
    let x = rand_tensor(r, Shape::new(n, cin, h, w), -1.0, 1.0);
    let p = LayerParams {
        weights: rand_tensor(r, Shape::new(cout, cin, k, k), -1.0, 1.0),
        bias: rand_vec(r, cout, -1.0, 1.0),
        batchnorm: None,
    };
    let out = conv2d_forward(&x, &p, 1, padding).unwrap();
    let proj = rand_vec(r, out.len(), -1.0, 1.0);
    let go = Tensor::from_vec(out.shape(), proj.clone()).unwrap();
    let g = conv2d_backward(&x, &p, &go, 1, padding).unwrap();
    let f = |xt: &Tensor, q: &LayerParams| projection(conv2d_forward(xt, q, 1, padding).unwrap().data(), &proj);
    let ex = check(x.data(), g.input.data(), FD_EPS, |v| f(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap(), &p));
    let ew = check(p.weights.data(), g.weights.data(), FD_EPS, |v| {
        let mut q = p.clone();
        q.weights = Tensor::from_vec(p.weights.shape(), v.to_vec()).unwrap();
        f(&x, &q)
    });
    let eb = check(&p.bias, &g.bias, FD_EPS, |v| {
        let mut q = p.clone();
        q.bias = v.to_vec();
        f(&x, &q)
    });
    worst([ex.rel_err, ew.rel_err, eb.rel_err])
}

/// Distinct values at least 0.01 apart so no window has a near tie.
fn spread_tensor(r: &mut ChaCha8Rng, shape: Shape) -> Tensor {
    let mut vals: Vec<f32> = (0..shape.numel()).map(|i| -1.0 + 0.01 * i as f32).collect();
    vals.shuffle(r);
    Tensor::from_vec(shape, vals).unwrap()
}

fn maxpool_instance(r: &mut ChaCha8Rng) -> f64 {
    let shape =
        Shape::new(r.random_range(1..3), r.random_range(1..3), 2 * r.random_range(1..4), 2 * r.random_range(1..4));
    let x = spread_tensor(r, shape);
    let (out, idx) = maxpool2x2_forward(&x).unwrap();
    let proj = rand_vec(r, out.len(), -1.0, 1.0);
    let gx = maxpool2x2_backward(&idx, &Tensor::from_vec(out.shape(), proj.clone()).unwrap()).unwrap();
    check(x.data(), gx.data(), FD_EPS, |v| {
        let xt = Tensor::from_vec(shape, v.to_vec()).unwrap();
        projection(maxpool2x2_forward(&xt).unwrap().0.data(), &proj)
    })
    .rel_err
}

fn batchnorm_instance(r: &mut ChaCha8Rng, training: bool) -> f64 {
    // At least 4 values per channel keeps the batch variance away from the
    // zero-variance singularity.
    let shape = Shape::new(r.random_range(2..4), r.random_range(1..4), r.random_range(2..4), r.random_range(1..4));
    let x = rand_tensor(r, shape, -1.0, 1.0);
    let c = shape.c;
    let mut bn = BatchNormParams::new(c);
    bn.gamma = rand_vec(r, c, 0.5, 1.5);
    bn.beta = rand_vec(r, c, -0.5, 0.5);
    bn.running_mean = rand_vec(r, c, -0.2, 0.2);
    bn.running_var = rand_vec(r, c, 0.5, 1.5);
    let f = batchnorm_forward(&x, &bn, training, BN_MOMENTUM, BN_EPS).unwrap();
    let proj = rand_vec(r, x.len(), -1.0, 1.0);
    let g = batchnorm_backward(&f.cache, &bn.gamma, &Tensor::from_vec(shape, proj.clone()).unwrap()).unwrap();
    let run = |xt: &Tensor, p: &BatchNormParams| {
        projection(batchnorm_forward(xt, p, training, BN_MOMENTUM, BN_EPS).unwrap().output.data(), &proj)
    };
    let ex = check(x.data(), g.input.data(), FD_EPS, |v| run(&Tensor::from_vec(shape, v.to_vec()).unwrap(), &bn));
    let eg = check(&bn.gamma, &g.gamma, FD_EPS, |v| {
        let mut p = bn.clone();
        p.gamma = v.to_vec();
        run(&x, &p)
    });
    let eb = check(&bn.beta, &g.beta, FD_EPS, |v| {
        let mut p = bn.clone();
        p.beta = v.to_vec();
        run(&x, &p)
    });
    worst([ex.rel_err, eg.rel_err, eb.rel_err])
}

fn relu_instance(r: &mut ChaCha8Rng) -> f64 {
    let shape = Shape::new(r.random_range(1..4), r.random_range(1..4), 2, 2);
    // |x| >= 0.1 keeps every probe on one side of the kink.
    let x = Tensor::from_fn(shape, |_| {
        let m = r.random_range(0.1f32..1.0);
        if r.random_bool(0.5) {
            m
        } else {
            -m
        }
    });
    let proj = rand_vec(r, x.len(), -1.0, 1.0);
    let gx = relu_backward(&x, &Tensor::from_vec(shape, proj.clone()).unwrap()).unwrap();
    check(x.data(), gx.data(), FD_EPS, |v| {
        projection(relu_forward(&Tensor::from_vec(shape, v.to_vec()).unwrap()).data(), &proj)
    })
    .rel_err
}

fn l2_instance(r: &mut ChaCha8Rng) -> f64 {
    let shape = Shape::new(r.random_range(1..4), r.random_range(1..5), r.random_range(1..3), 2);
    let x = rand_tensor(r, shape, -1.0, 1.0);
    let proj = rand_vec(r, x.len(), -1.0, 1.0);
    let gx = l2_normalize_backward(&x, &Tensor::from_vec(shape, proj.clone()).unwrap()).unwrap();
    check(x.data(), gx.data(), FD_EPS, |v| {
        projection(l2_normalize_forward(&Tensor::from_vec(shape, v.to_vec()).unwrap()).data(), &proj)
    })
    .rel_err
}

fn grouped_instance(r: &mut ChaCha8Rng) -> f64 {
    let classes = r.random_range(1..4);
    let s = r.random_range(1..3);
    let shape = Shape::new(r.random_range(1..4), classes * s, r.random_range(1..4), r.random_range(1..4));
    let spec = GroupSpec::new(shape.c, classes).unwrap();
    let y = rand_tensor(r, shape, -1.0, 1.0);
    let proj = rand_vec(r, shape.n * classes, -1.0, 1.0);
    let grad = GroupGoodness::from_raw(shape.n, classes, proj.clone()).unwrap();
    let gy = grouped_goodness_backward(&y, &spec, &grad).unwrap();
    check(y.data(), gy.data(), FD_EPS, |v| {
        let yt = Tensor::from_vec(shape, v.to_vec()).unwrap();
        projection(grouped_goodness(&yt, &spec).unwrap().data(), &proj)
    })
    .rel_err
}

fn pair_check(
    r: &mut ChaCha8Rng,
    gen: impl Fn(&mut ChaCha8Rng) -> (f32, f32),
    loss: impl Fn(&[f32], &[f32]) -> LossOutput,
) -> f64 {
    let n = r.random_range(1..6);
    let (pos, neg): (Vec<f32>, Vec<f32>) = (0..n).map(|_| gen(r)).unzip();
    let out = loss(&pos, &neg);
    let (dp, dn) = out.pair_grads().unwrap();
    let analytic: Vec<f32> = dp.iter().chain(dn).copied().collect();
    let x: Vec<f32> = pos.iter().chain(&neg).copied().collect();
    check(&x, &analytic, FD_EPS, |v| {
        let (p, q) = v.split_at(n);
        loss(p, q).value
    })
    .rel_err
}

fn any_pair(r: &mut ChaCha8Rng) -> (f32, f32) {
    (r.random_range(0.0..4.0), r.random_range(0.0..4.0))
}

fn ff_instance(r: &mut ChaCha8Rng) -> f64 {
    pair_check(r, any_pair, |p, q| ff_loss(p, q, 2.0).unwrap())
}

fn symba_instance(r: &mut ChaCha8Rng) -> f64 {
    let printed = r.random_bool(0.5);
    pair_check(r, any_pair, |p, q| symba_loss_oriented(p, q, printed).unwrap())
}

fn margin_instance(r: &mut ChaCha8Rng) -> f64 {
    let printed = r.random_bool(0.5);
    let sign = if printed { -1.0 } else { 1.0 };
    // Keep the hinge argument at least 0.05 away from zero.
    let gen = move |r: &mut ChaCha8Rng| loop {
        let (p, q) = any_pair(r);
        if (1.0 + sign * (q - p)).abs() > 0.05 {
            return (p, q);
        }
    };
    pair_check(r, gen, |p, q| margin_loss_oriented(p, q, 1.0, 0.03, printed).unwrap())
}

fn channel_wise_instance(r: &mut ChaCha8Rng) -> f64 {
    let n = r.random_range(1..5);
    let classes = r.random_range(2..11);
    let g = rand_vec(r, n * classes, 0.0, 3.0);
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
    let z = OneHot::from_labels(&labels, classes).unwrap();
    let out = channel_wise_loss(&GroupGoodness::from_raw(n, classes, g.clone()).unwrap(), &z).unwrap();
    let LossGrad::Matrix(grad) = out.grad else { panic!("matrix gradient expected") };
    check(&g, grad.data(), FD_EPS, |v| {
        channel_wise_loss(&GroupGoodness::from_raw(n, classes, v.to_vec()).unwrap(), &z).unwrap().value
    })
    .rel_err
}

/// Run every check on `instances` random instances.
pub fn run_all(instances: usize, seed: u64) -> Vec<SuiteResult> {
    type Check = fn(&mut ChaCha8Rng) -> f64;
    let checks: [(&'static str, Check); 13] = [
        ("matmul", linear_instance),
        ("conv2d", conv_instance),
        ("maxpool", maxpool_instance),
        ("batchnorm_train", |r| batchnorm_instance(r, true)),
        ("batchnorm_eval", |r| batchnorm_instance(r, false)),
        ("relu", relu_instance),
        ("l2_normalize", l2_instance),
        ("grouped_goodness", grouped_instance),
        ("ff_loss", ff_instance),
        ("symba_loss", symba_instance),
        ("margin_loss", margin_instance),
        ("channel_wise_loss", channel_wise_instance),
        ("ff_loss_wide", |r| {
            pair_check(
                r,
                |r| (r.random_range(-20.0..20.0), r.random_range(-20.0..20.0)),
                |p, q| ff_loss(p, q, 2.0).unwrap(),
            )
        }),
    ];
    checks
        .iter()
        .enumerate()
        .map(|(i, (name, f))| {
            let mut r = rng(seed.wrapping_add(i as u64));
            SuiteResult { name, instances, worst: worst((0..instances).map(|_| f(&mut r))) }
        })
        .collect()
}
