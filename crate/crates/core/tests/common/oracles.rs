//! Literal loop implementations, accumulated in f64, used as references.

/// `out[n][j] = sum_i x[n][i] * w[i][j] + b[j]`.
pub fn matmul(x: &[f32], n: usize, fin: usize, w: &[f32], fout: usize, b: &[f32]) -> Vec<f64> {
    let mut out = vec![0.0; n * fout];
    for r in 0..n {
        for j in 0..fout {
            let mut acc = b[j] as f64;
            for i in 0..fin {
                acc += x[r * fin + i] as f64 * w[i * fout + j] as f64;
            }
            out[r * fout + j] = acc;
        }
    }
    out
}

/// Direct cross-correlation, stride 1, zero padding `lo` before and `hi` after.
/// Returns the output and its `(Ho, Wo)`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f32],
    (n, cin, h, w): (usize, usize, usize, usize),
    wt: &[f32],
    (cout, k): (usize, usize),
    b: &[f32],
    lo: usize,
    hi: usize,
) -> (Vec<f64>, usize, usize) {
    let ho = h + lo + hi - k + 1;
    let wo = w + lo + hi - k + 1;
    let mut out = vec![0.0; n * cout * ho * wo];
    for s in 0..n {
        for co in 0..cout {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = b[co] as f64;
                    for ci in 0..cin {
                        for kh in 0..k {
                            for kw in 0..k {
                                let ih = oh as isize + kh as isize - lo as isize;
                                let iw = ow as isize + kw as isize - lo as isize;
                                if ih < 0 || iw < 0 || ih >= h as isize || iw >= w as isize {
                                    continue;
                                }
                                let xv = x[((s * cin + ci) * h + ih as usize) * w + iw as usize];
                                let wv = wt[((co * cin + ci) * k + kh) * k + kw];
                                acc += xv as f64 * wv as f64;
                            }
                        }
                    }
                    out[((s * cout + co) * ho + oh) * wo + ow] = acc;
                }
            }
        }
    }
    (out, ho, wo)
}

/// `G[n][j] = 1/(S*H*W) * sum_{s,h,w} y[n, j*S + s, h, w]^2`.
pub fn grouped_goodness(y: &[f32], (n, c, h, w): (usize, usize, usize, usize), classes: usize) -> Vec<f64> {
    let s_len = c / classes;
    let mut g = vec![0.0; n * classes];
    for i in 0..n {
        for j in 0..classes {
            let mut acc = 0.0;
            for s in 0..s_len {
                for r in 0..h {
                    for q in 0..w {
                        let v = y[((i * c + j * s_len + s) * h + r) * w + q] as f64;
                        acc += v * v;
                    }
                }
            }
            g[i * classes + j] = acc / (s_len * h * w) as f64;
        }
    }
    g
}

pub fn layer_goodness(a: &[f32], n: usize) -> Vec<f64> {
    let per = a.len() / n;
    (0..n).map(|i| a[i * per..(i + 1) * per].iter().map(|&v| v as f64 * v as f64).sum()).collect()
}

/// `(g_pos, g_neg)` by looping over classes.
pub fn split(g: &[f32], labels: &[usize], classes: usize) -> (Vec<f64>, Vec<f64>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (n, &y) in labels.iter().enumerate() {
        let mut p = 0.0;
        let mut q = 0.0;
        for j in 0..classes {
            let v = g[n * classes + j] as f64;
            if j == y {
                p += v;
            } else {
                q += v;
            }
        }
        pos.push(p);
        neg.push(q);
    }
    (pos, neg)
}

/// Scan every 2x2 window; returns maxima and the flat index of the first
/// maximal element in row-major window order.
pub fn maxpool(x: &[f32], (n, c, h, w): (usize, usize, usize, usize)) -> (Vec<f32>, Vec<usize>) {
    let mut out = Vec::new();
    let mut arg = Vec::new();
    for s in 0..n {
        for ch in 0..c {
            for oh in 0..h / 2 {
                for ow in 0..w / 2 {
                    let cells =
                        [(2 * oh, 2 * ow), (2 * oh, 2 * ow + 1), (2 * oh + 1, 2 * ow), (2 * oh + 1, 2 * ow + 1)];
                    let mut best = f32::NEG_INFINITY;
                    let mut at = 0;
                    for (r, q) in cells {
                        let idx = ((s * c + ch) * h + r) * w + q;
                        if x[idx] > best {
                            best = x[idx];
                            at = idx;
                        }
                    }
                    out.push(best);
                    arg.push(at);
                }
            }
        }
    }
    (out, arg)
}

pub fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y).abs()).fold(0.0, f64::max)
}
