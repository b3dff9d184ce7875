//! `ff params`: parameter counts under each inclusion policy, reconciled
//! against published totals where one exists.

use ff_core::inference::LayerSelection;
use ff_core::model::{count_params, published_param_count, CountPolicy, ModelSpec};
use serde::Serialize;

use crate::Result;

#[derive(Clone, Debug, Serialize)]
pub struct LayerCount {
    pub layer: usize,
    pub kernel: usize,
    pub batchnorm: usize,
    pub output: [usize; 3],
}

#[derive(Clone, Debug, Serialize)]
pub struct PolicyCount {
    pub policy: String,
    pub count: usize,
    /// `published - count`, when a published total exists.
    pub residual: Option<i64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamsReport {
    pub model: String,
    pub head_layers: Vec<usize>,
    pub layers: Vec<LayerCount>,
    pub head: usize,
    pub policies: Vec<PolicyCount>,
    pub published: Option<usize>,
}

pub fn report(spec: &ModelSpec) -> Result<ParamsReport> {
    let shapes = spec.trace()?;
    let head_layers = LayerSelection::default_for(spec.mode).resolve(spec.depth())?;
    let layers = spec
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let s = shapes[i + 1];
            LayerCount {
                layer: i,
                kernel: l.kernel_params(),
                batchnorm: l.bn_params(shapes[i]),
                output: [s.c, s.h, s.w],
            }
        })
        .collect();
    let published = published_param_count(&spec.name);
    let mut policies = Vec::new();
    for policy in CountPolicy::ALL {
        let count = count_params(spec, policy, &head_layers)?;
        policies.push(PolicyCount {
            policy: policy.name().into(),
            count,
            residual: published.map(|p| p as i64 - count as i64),
        });
    }
    let head = policies[2].count - policies[1].count;
    Ok(ParamsReport { model: spec.name.clone(), head_layers, layers, head, policies, published })
}

fn thousands(n: i64) -> String {
    let digits = n.unsigned_abs().to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    if n < 0 {
        format!("-{out}")
    } else {
        out
    }
}

pub fn render(r: &ParamsReport) -> String {
    let mut s = format!("model {}\n", r.model);
    s.push_str(&format!("{:>5} {:>14} {:>10} {:>10}\n", "layer", "output", "kernel", "batchnorm"));
    for l in &r.layers {
        s.push_str(&format!(
            "{:>5} {:>14} {:>10} {:>10}\n",
            l.layer,
            format!("{}x{}x{}", l.output[0], l.output[1], l.output[2]),
            thousands(l.kernel as i64),
            thousands(l.batchnorm as i64)
        ));
    }
    s.push_str(&format!("head over layers {:?}: {}\n", r.head_layers, thousands(r.head as i64)));
    for p in &r.policies {
        s.push_str(&format!("{}={}", p.policy, thousands(p.count as i64)));
        if let Some(res) = p.residual {
            s.push_str(&format!("  residual {}", thousands(res)));
        }
        s.push('\n');
    }
    if let Some(p) = r.published {
        s.push_str(&format!("published={}\n", thousands(p as i64)));
    }
    s
}
