//! Layer-local objectives and their gradients with respect to goodness.
//!
//! Every loss is reduced by the batch MEAN. Values are accumulated in f64;
//! gradients are returned in f32.

use serde::{Deserialize, Serialize};

use crate::datasets::OneHot;
use crate::error::{FfError, Result};
use crate::goodness::GroupGoodness;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    FfOriginal,
    Symba,
    Margin,
    ChannelWise,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ff_original" | "ff" => Ok(LossKind::FfOriginal),
            "symba" => Ok(LossKind::Symba),
            "margin" => Ok(LossKind::Margin),
            "channel_wise" => Ok(LossKind::ChannelWise),
            other => Err(FfError::Config(format!("unknown loss '{other}' (ff_original|symba|margin|channel_wise)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::FfOriginal => "ff_original",
            LossKind::Symba => "symba",
            LossKind::Margin => "margin",
            LossKind::ChannelWise => "channel_wise",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    pub theta: f32,
    pub margin: f32,
    pub lambda: f32,
    /// Use `softplus(g_pos - g_neg)` as printed instead of `softplus(g_neg - g_pos)`.
    pub symba_printed_sign: bool,
    /// Use `max(m + g_pos - g_neg, 0)` as printed instead of `max(m + g_neg - g_pos, 0)`.
    pub margin_printed_sign: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::FfOriginal,
            theta: 2.0,
            margin: 1.0,
            lambda: 0.03,
            symba_printed_sign: false,
            margin_printed_sign: false,
        }
    }
}

impl LossConfig {
    pub fn with_kind(kind: LossKind) -> Self {
        LossConfig { kind, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0) {
            return Err(FfError::Config(format!("theta must be > 0, got {}", self.theta)));
        }
        if !(self.margin >= 0.0) || !(self.lambda >= 0.0) {
            return Err(FfError::Config(format!(
                "margin and lambda must be >= 0, got m={} lambda={}",
                self.margin, self.lambda
            )));
        }
        Ok(())
    }

    /// Evaluate a pair loss (`ff_original`, `symba`, `margin`).
    pub fn pair_loss(&self, g_pos: &[f32], g_neg: &[f32]) -> Result<LossOutput> {
        match self.kind {
            LossKind::FfOriginal => ff_loss(g_pos, g_neg, self.theta),
            LossKind::Symba => symba_loss_oriented(g_pos, g_neg, self.symba_printed_sign),
            LossKind::Margin => margin_loss_oriented(g_pos, g_neg, self.margin, self.lambda, self.margin_printed_sign),
            LossKind::ChannelWise => {
                Err(FfError::Config("channel_wise loss needs the grouped goodness matrix, not a goodness pair".into()))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LossGrad {
    Pair { g_pos: Vec<f32>, g_neg: Vec<f32> },
    Matrix(GroupGoodness),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    /// Batch-mean loss.
    pub value: f64,
    pub per_sample: Vec<f64>,
    pub grad: LossGrad,
}

impl LossOutput {
    pub fn pair_grads(&self) -> Option<(&[f32], &[f32])> {
        match &self.grad {
            LossGrad::Pair { g_pos, g_neg } => Some((g_pos, g_neg)),
            LossGrad::Matrix(_) => None,
        }
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_pair(g_pos: &[f32], g_neg: &[f32]) -> Result<usize> {
    if g_pos.len() != g_neg.len() || g_pos.is_empty() {
        return Err(FfError::Shape(format!("goodness pair lengths {} and {}", g_pos.len(), g_neg.len())));
    }
    Ok(g_pos.len())
}

/// Per-sample terms and `(d/dg_pos, d/dg_neg)` of each term, then mean reduction.
fn reduce_pair(g_pos: &[f32], g_neg: &[f32], term: impl Fn(f64, f64) -> (f64, f64, f64)) -> Result<LossOutput> {
    let n = check_pair(g_pos, g_neg)?;
    let inv = 1.0 / n as f64;
    let mut per_sample = Vec::with_capacity(n);
    let mut dp = Vec::with_capacity(n);
    let mut dn = Vec::with_capacity(n);
    for (&p, &q) in g_pos.iter().zip(g_neg) {
        let (v, gp, gn) = term(p as f64, q as f64);
        per_sample.push(v);
        dp.push((gp * inv) as f32);
        dn.push((gn * inv) as f32);
    }
    let value = per_sample.iter().sum::<f64>() * inv;
    Ok(LossOutput { value, per_sample, grad: LossGrad::Pair { g_pos: dp, g_neg: dn } })
}

/// `softplus(theta - g_pos) + softplus(g_neg - theta)`.
pub fn ff_loss(g_pos: &[f32], g_neg: &[f32], theta: f32) -> Result<LossOutput> {
    let t = theta as f64;
    reduce_pair(g_pos, g_neg, |p, q| (softplus(t - p) + softplus(q - t), -sigmoid(t - p), sigmoid(q - t)))
}

/// `softplus(g_neg - g_pos)`: minimising drives `g_pos` above `g_neg`.
pub fn symba_loss(g_pos: &[f32], g_neg: &[f32]) -> Result<LossOutput> {
    symba_loss_oriented(g_pos, g_neg, false)
}

pub fn symba_loss_oriented(g_pos: &[f32], g_neg: &[f32], printed: bool) -> Result<LossOutput> {
    let sign = if printed { -1.0 } else { 1.0 };
    reduce_pair(g_pos, g_neg, |p, q| {
        let d = sign * (q - p);
        let s = sigmoid(d);
        (softplus(d), -sign * s, sign * s)
    })
}

/// `max(m + g_neg - g_pos, 0) + lambda * g_neg`, zero subgradient at the kink.
pub fn margin_loss(g_pos: &[f32], g_neg: &[f32], margin: f32, lambda: f32) -> Result<LossOutput> {
    margin_loss_oriented(g_pos, g_neg, margin, lambda, false)
}

pub fn margin_loss_oriented(
    g_pos: &[f32],
    g_neg: &[f32],
    margin: f32,
    lambda: f32,
    printed: bool,
) -> Result<LossOutput> {
    let (m, l) = (margin as f64, lambda as f64);
    let sign = if printed { -1.0 } else { 1.0 };
    reduce_pair(g_pos, g_neg, |p, q| {
        let arg = m + sign * (q - p);
        let (hinge, dp, dn) = if arg > 0.0 { (arg, -sign, sign) } else { (0.0, 0.0, 0.0) };
        (hinge + l * q, dp, dn + l)
    })
}

/// Mean softmax cross-entropy of `scores` (`N x J`) against integer labels.
pub(crate) fn softmax_cross_entropy(scores: &[f32], classes: usize, labels: &[usize]) -> (f64, Vec<f64>, Vec<f32>) {
    let n = labels.len();
    let inv = 1.0 / n as f64;
    let mut per_sample = Vec::with_capacity(n);
    let mut grad = vec![0.0f32; n * classes];
    let mut probs = vec![0.0f64; classes];
    for (i, &y) in labels.iter().enumerate() {
        let row = &scores[i * classes..(i + 1) * classes];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let mut total = 0.0;
        for (p, &v) in probs.iter_mut().zip(row) {
            *p = (v as f64 - max).exp();
            total += *p;
        }
        per_sample.push(max + total.ln() - row[y] as f64);
        let g = &mut grad[i * classes..(i + 1) * classes];
        let mut others = 0.0f32;
        for j in 0..classes {
            if j != y {
                g[j] = (probs[j] / total * inv) as f32;
                others += g[j];
            }
        }
        // Rows sum to zero up to a single rounding.
        g[y] = -others;
    }
    let value = per_sample.iter().sum::<f64>() * inv;
    (value, per_sample, grad)
}

/// Softmax cross-entropy over grouped goodness with the true class as target.
pub fn channel_wise_loss(g: &GroupGoodness, z: &OneHot) -> Result<LossOutput> {
    if g.rows() != z.rows() || g.classes() != z.classes() || g.rows() == 0 {
        return Err(FfError::Shape(format!(
            "goodness {}x{} vs one-hot {}x{}",
            g.rows(),
            g.classes(),
            z.rows(),
            z.classes()
        )));
    }
    let labels = z.labels()?;
    let (value, per_sample, grad) = softmax_cross_entropy(g.data(), g.classes(), &labels);
    Ok(LossOutput { value, per_sample, grad: LossGrad::Matrix(GroupGoodness::from_raw(g.rows(), g.classes(), grad)?) })
}
