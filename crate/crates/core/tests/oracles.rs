mod common;

use common::oracles;
use common::{rand_tensor, rand_vec, rng};
use ff_core::datasets::OneHot;
use ff_core::goodness::{grouped_goodness, layer_goodness, split_pos_neg, GroupGoodness, GroupSpec};
use ff_core::ops::{
    conv2d_backward, conv2d_forward, matmul_backward, matmul_forward, maxpool2x2_backward, maxpool2x2_forward,
    LayerParams, Padding,
};
use ff_core::{Shape, Tensor};
use rand::Rng;

#[test]
fn matmul_matches_triple_loop() {
    let mut r = rng(1);
    let x = rand_tensor(&mut r, Shape::matrix(3, 4), -1.0, 1.0);
    let p = LayerParams {
        weights: rand_tensor(&mut r, Shape::matrix(4, 5), -1.0, 1.0),
        bias: rand_vec(&mut r, 5, -1.0, 1.0),
        batchnorm: None,
    };
    let out = matmul_forward(&x, &p).unwrap();
    let want = oracles::matmul(x.data(), 3, 4, p.weights.data(), 5, &p.bias);
    assert!(oracles::max_abs_diff(out.data(), &want) < 1e-6);
}

#[allow(clippy::too_many_arguments)]
fn conv_case(r: &mut impl Rng, n: usize, cin: usize, h: usize, w: usize, cout: usize, k: usize, padding: Padding) {
    let mut cr = rng(r.random());
    let x = rand_tensor(&mut cr, Shape::new(n, cin, h, w), -1.0, 1.0);
    let p = LayerParams {
        weights: rand_tensor(&mut cr, Shape::new(cout, cin, k, k), -1.0, 1.0),
        bias: rand_vec(&mut cr, cout, -1.0, 1.0),
        batchnorm: None,
    };
    let out = conv2d_forward(&x, &p, 1, padding).unwrap();
    let (lo, hi) = padding.amounts(k);
    let (want, ho, wo) = oracles::conv2d(x.data(), (n, cin, h, w), p.weights.data(), (cout, k), &p.bias, lo, hi);
    assert_eq!(out.shape(), Shape::new(n, cout, ho, wo));
    let diff = oracles::max_abs_diff(out.data(), &want);
    assert!(diff < 1e-5, "{n}x{cin}x{h}x{w} k={k} {padding:?}: {diff}");
}

#[test]
fn conv_matches_six_loop_oracle() {
    let mut r = rng(2);
    conv_case(&mut r, 2, 3, 8, 8, 4, 3, Padding::Explicit(0));
    conv_case(&mut r, 2, 3, 8, 8, 4, 3, Padding::Same);
    conv_case(&mut r, 1, 2, 7, 5, 3, 4, Padding::Same);
    conv_case(&mut r, 4, 8, 16, 16, 4, 5, Padding::Same);
    for _ in 0..20 {
        let k = r.random_range(1..5);
        let pad = if r.random_bool(0.5) { Padding::Same } else { Padding::Explicit(r.random_range(0..3)) };
        let h = r.random_range(k..17);
        let w = r.random_range(k..17);
        let (n, cin, cout) = (r.random_range(1..5), r.random_range(1..9), r.random_range(1..5));
        conv_case(&mut r, n, cin, h, w, cout, k, pad);
    }
}

#[test]
fn one_by_one_conv_backward_reduces_to_matmul() {
    let mut r = rng(3);
    let (n, cin, h, w, cout) = (2, 3, 4, 5, 4);
    let x = rand_tensor(&mut r, Shape::new(n, cin, h, w), -1.0, 1.0);
    let conv = LayerParams {
        weights: rand_tensor(&mut r, Shape::new(cout, cin, 1, 1), -1.0, 1.0),
        bias: rand_vec(&mut r, cout, -1.0, 1.0),
        batchnorm: None,
    };
    let go = rand_tensor(&mut r, Shape::new(n, cout, h, w), -1.0, 1.0);
    let cg = conv2d_backward(&x, &conv, &go, 1, Padding::Explicit(0)).unwrap();

    // Rows are spatial positions, columns channels.
    let rows = n * h * w;
    let to_rows = |t: &Tensor, c: usize| {
        let mut m = vec![0.0f32; rows * c];
        for s in 0..n {
            for ch in 0..c {
                for p in 0..h * w {
                    m[(s * h * w + p) * c + ch] = t.data()[(s * c + ch) * h * w + p];
                }
            }
        }
        Tensor::matrix(rows, c, m).unwrap()
    };
    let mut wt = vec![0.0f32; cin * cout];
    for co in 0..cout {
        for ci in 0..cin {
            wt[ci * cout + co] = conv.weights.data()[co * cin + ci];
        }
    }
    let lin = LayerParams { weights: Tensor::matrix(cin, cout, wt).unwrap(), bias: conv.bias.clone(), batchnorm: None };
    let mg = matmul_backward(&to_rows(&x, cin), &lin, &to_rows(&go, cout)).unwrap();
    assert!(to_rows(&cg.input, cin).max_abs_diff(&mg.input) < 1e-6);
    for co in 0..cout {
        for ci in 0..cin {
            let a = cg.weights.data()[co * cin + ci];
            let b = mg.weights.data()[ci * cout + co];
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }
    for (a, b) in cg.bias.iter().zip(&mg.bias) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn grouped_goodness_matches_triple_loop() {
    let mut r = rng(4);
    for _ in 0..50 {
        let n = r.random_range(1..5);
        let c = 10 * r.random_range(1..5);
        let (h, w) = (r.random_range(1..7), r.random_range(1..7));
        let y = rand_tensor(&mut r, Shape::new(n, c, h, w), -2.0, 2.0);
        let g = grouped_goodness(&y, &GroupSpec::new(c, 10).unwrap()).unwrap();
        let want = oracles::grouped_goodness(y.data(), (n, c, h, w), 10);
        assert!(oracles::max_abs_diff(g.data(), &want) < 1e-6);
    }
}

#[test]
fn layer_goodness_matches_flat_loop() {
    let mut r = rng(5);
    let a = rand_tensor(&mut r, Shape::new(4, 3, 5, 5), -1.0, 1.0);
    let want = oracles::layer_goodness(a.data(), 4);
    assert!(oracles::max_abs_diff(&layer_goodness(&a), &want) < 1e-5);
    assert_eq!(layer_goodness(&Tensor::zeros(Shape::matrix(2, 7))), vec![0.0, 0.0]);
}

#[test]
fn split_matches_loop() {
    let mut r = rng(6);
    let (n, j) = (6, 10);
    let g = rand_vec(&mut r, n * j, 0.0, 2.0);
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..j)).collect();
    let pair =
        split_pos_neg(&GroupGoodness::from_raw(n, j, g.clone()).unwrap(), &OneHot::from_labels(&labels, j).unwrap())
            .unwrap();
    let (pos, neg) = oracles::split(&g, &labels, j);
    assert!(oracles::max_abs_diff(&pair.g_pos, &pos) < 1e-6);
    assert!(oracles::max_abs_diff(&pair.g_neg, &neg) < 1e-5);
}

#[test]
fn maxpool_matches_window_scan() {
    let mut r = rng(7);
    for _ in 0..10 {
        let dims = (r.random_range(1..4), r.random_range(1..4), 2 * r.random_range(1..6), 2 * r.random_range(1..6));
        let shape = Shape::new(dims.0, dims.1, dims.2, dims.3);
        // Coarse values produce plenty of ties.
        let x = Tensor::from_fn(shape, |_| r.random_range(0..4) as f32);
        let (out, idx) = maxpool2x2_forward(&x).unwrap();
        let (want, arg) = oracles::maxpool(x.data(), dims);
        assert_eq!(out.data(), &want[..]);
        assert_eq!(idx.argmax, arg);
    }
}

#[test]
fn maxpool_examples() {
    let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let (out, idx) = maxpool2x2_forward(&x).unwrap();
    assert_eq!(out.data(), &[4.0]);
    let g = maxpool2x2_backward(&idx, &Tensor::filled(out.shape(), 1.0)).unwrap();
    assert_eq!(g.data(), &[0.0, 0.0, 0.0, 1.0]);

    let c = Tensor::filled(Shape::new(1, 1, 2, 2), 5.0);
    let (out, idx) = maxpool2x2_forward(&c).unwrap();
    assert_eq!(out.data(), &[5.0]);
    let g = maxpool2x2_backward(&idx, &Tensor::filled(out.shape(), 1.0)).unwrap();
    assert_eq!(g.data(), &[1.0, 0.0, 0.0, 0.0]);
}
