//! Layer goodness: sum of squares for overlay training and the per-class
//! grouped mean-of-squares matrix for channel-grouped training.
//!
//! Class `j` owns the contiguous channel block `[j*S, (j+1)*S)` with `S = C/J`.

use crate::datasets::OneHot;
use crate::error::{FfError, Result};
use crate::tensor::Tensor;

/// Sum of squared activations per sample.
pub fn layer_goodness(a: &Tensor) -> Vec<f32> {
    (0..a.shape().n).map(|n| a.sample(n).iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() as f32).collect()
}

/// Channel-to-class partition of a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupSpec {
    channels: usize,
    classes: usize,
}

impl GroupSpec {
    pub fn new(channels: usize, classes: usize) -> Result<Self> {
        if classes == 0 || channels == 0 || !channels.is_multiple_of(classes) {
            return Err(FfError::Config(format!(
                "{channels} channels cannot be split evenly into {classes} class groups"
            )));
        }
        Ok(GroupSpec { channels, classes })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn group_size(&self) -> usize {
        self.channels / self.classes
    }
}

/// `N x J` matrix of per-class goodness values, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupGoodness {
    n: usize,
    classes: usize,
    g: Vec<f32>,
}

impl GroupGoodness {
    pub fn from_raw(n: usize, classes: usize, g: Vec<f32>) -> Result<Self> {
        if g.len() != n * classes {
            return Err(FfError::Shape(format!("goodness buffer of {} values for {n}x{classes}", g.len())));
        }
        Ok(GroupGoodness { n, classes, g })
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, n: usize) -> &[f32] {
        &self.g[n * self.classes..(n + 1) * self.classes]
    }

    pub fn data(&self) -> &[f32] {
        &self.g
    }

    /// Elementwise sum, used to accumulate goodness over several layers.
    pub fn add_assign(&mut self, other: &GroupGoodness) -> Result<()> {
        if (self.n, self.classes) != (other.n, other.classes) {
            return Err(FfError::Shape("goodness matrices differ in shape".into()));
        }
        for (a, b) in self.g.iter_mut().zip(&other.g) {
            *a += b;
        }
        Ok(())
    }

    /// Row argmax with ties resolved to the lowest class index.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.n).map(|n| argmax(self.row(n))).collect()
    }
}

pub(crate) fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn check_spec(y: &Tensor, spec: &GroupSpec) -> Result<()> {
    if y.shape().c != spec.channels {
        return Err(FfError::Shape(format!(
            "grouped goodness: activations {} have {} channels, group spec expects {}",
            y.shape(),
            y.shape().c,
            spec.channels
        )));
    }
    Ok(())
}

/// `G[n, j] = 1/(S*H*W) * sum over block j of y^2`.
pub fn grouped_goodness(y: &Tensor, spec: &GroupSpec) -> Result<GroupGoodness> {
    check_spec(y, spec)?;
    let s = y.shape();
    let block = spec.group_size() * s.plane();
    let denom = block as f64;
    let g = (0..s.n)
        .flat_map(|n| {
            y.sample(n)
                .chunks_exact(block)
                .map(move |b| (b.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / denom) as f32)
        })
        .collect();
    GroupGoodness::from_raw(s.n, spec.classes, g)
}

/// `grad_y = 2 y / (S*H*W) * grad_G[n, block(y)]`.
pub fn grouped_goodness_backward(y: &Tensor, spec: &GroupSpec, grad: &GroupGoodness) -> Result<Tensor> {
    check_spec(y, spec)?;
    let s = y.shape();
    if grad.rows() != s.n || grad.classes() != spec.classes {
        return Err(FfError::Shape(format!(
            "grouped goodness backward: grad is {}x{}, activations {}",
            grad.rows(),
            grad.classes(),
            s
        )));
    }
    let block = spec.group_size() * s.plane();
    let scale = 2.0 / block as f32;
    let mut gy = Tensor::zeros(s);
    for n in 0..s.n {
        let gr = grad.row(n);
        let src = y.sample(n);
        let dst = gy.sample_mut(n);
        for (j, (d, v)) in dst.chunks_exact_mut(block).zip(src.chunks_exact(block)).enumerate() {
            let k = scale * gr[j];
            for (o, &a) in d.iter_mut().zip(v) {
                *o = k * a;
            }
        }
    }
    Ok(gy)
}

/// Positive goodness `g_pos` and the summed wrong-class goodness `g_neg`.
#[derive(Clone, Debug, PartialEq)]
pub struct GoodnessPair {
    pub g_pos: Vec<f32>,
    pub g_neg: Vec<f32>,
}

/// `g_pos = G . Z^T`, `g_neg = G . (1 - Z)^T` row by row.
pub fn split_pos_neg(g: &GroupGoodness, z: &OneHot) -> Result<GoodnessPair> {
    if g.rows() != z.rows() || g.classes() != z.classes() {
        return Err(FfError::Shape(format!(
            "goodness {}x{} vs one-hot {}x{}",
            g.rows(),
            g.classes(),
            z.rows(),
            z.classes()
        )));
    }
    z.validate()?;
    let mut pair = GoodnessPair { g_pos: Vec::with_capacity(g.rows()), g_neg: Vec::with_capacity(g.rows()) };
    for n in 0..g.rows() {
        let (mut pos, mut neg) = (0.0f64, 0.0f64);
        for (&gv, &zv) in g.row(n).iter().zip(z.row(n)) {
            pos += gv as f64 * zv as f64;
            neg += gv as f64 * (1.0 - zv as f64);
        }
        pair.g_pos.push(pos as f32);
        pair.g_neg.push(neg as f32);
    }
    Ok(pair)
}
