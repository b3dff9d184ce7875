//! `ff repro`: canned runs compared against published error rates.

use std::path::Path;

use ff_core::inference::{LayerSelection, Scheme};
use ff_core::losses::LossKind;
use ff_core::trainer::{OptimizerKind, Routine};
use serde::Serialize;

use crate::config::{DatasetName, RunConfig};
use crate::run::{train, RunOptions, RunSummary};
use crate::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    MnistQuick,
    CifarSmoke,
    CifarFull,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::MnistQuick, Suite::CifarSmoke, Suite::CifarFull];

    pub fn parse(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| CliError::Usage(format!("unknown suite '{s}' (mnist_quick|cifar_smoke|cifar_full)")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Suite::MnistQuick => "mnist_quick",
            Suite::CifarSmoke => "cifar_smoke",
            Suite::CifarFull => "cifar_full",
        }
    }

    /// The canned configuration. `cifar_full` takes hours on a CPU.
    pub fn config(self) -> RunConfig {
        match self {
            Suite::MnistQuick => RunConfig {
                dataset: DatasetName::Mnist,
                model: "mnist_mlp".into(),
                routine: Some(Routine::Greedy),
                loss: Some(LossKind::FfOriginal),
                epochs: 30,
                batch_size: 128,
                optimizer: OptimizerKind::Adam,
                lr: 1e-3,
                schemes: Some(vec![Scheme::OnePass, Scheme::MultiPass]),
                // Two layers only: dropping the first would score the 100-unit layer alone.
                selection: Some(LayerSelection::Explicit(vec![0, 1])),
                seed: 1,
                ..Default::default()
            },
            Suite::CifarSmoke => RunConfig {
                dataset: DatasetName::Cifar10,
                model: "FF_tiny".into(),
                routine: Some(Routine::Chunked),
                chunk_size: Some(2),
                loss: Some(LossKind::ChannelWise),
                epochs: 5,
                batch_size: 64,
                optimizer: OptimizerKind::Adam,
                lr: 1e-3,
                train_subset: Some(5_000),
                schemes: Some(vec![Scheme::GroupChannel]),
                seed: 1,
                ..Default::default()
            },
            Suite::CifarFull => RunConfig {
                dataset: DatasetName::Cifar10,
                model: "FF_tiny".into(),
                routine: Some(Routine::Chunked),
                chunk_size: Some(2),
                loss: Some(LossKind::ChannelWise),
                epochs: 60,
                batch_size: 64,
                optimizer: OptimizerKind::Adam,
                lr: 1e-3,
                milestones: vec![30, 45],
                gamma: 0.1,
                schemes: Some(vec![Scheme::GroupChannel, Scheme::OnePass]),
                seed: 1,
                ..Default::default()
            },
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub metric: String,
    pub measured: f64,
    /// Published figure, when the row has one.
    pub reference: Option<f64>,
    pub rule: String,
    pub pass: bool,
}

fn at_most(metric: &str, measured: f64, reference: Option<f64>, limit: f64) -> Verdict {
    let rule = match reference {
        Some(p) => format!("<= {limit:.1} ({p:.1} + {:.1} pp)", limit - p),
        None => format!("<= {limit:.1}"),
    };
    Verdict { metric: metric.into(), measured, reference, rule, pass: measured <= limit }
}

fn error_of(s: &RunSummary, scheme: Scheme) -> f64 {
    s.eval(scheme).map_or(f64::NAN, |e| e.error_pct)
}

pub fn strictly_decreasing(v: &[f64]) -> bool {
    v.len() >= 2 && v.windows(2).all(|w| w[1] < w[0])
}

pub fn verdicts(suite: Suite, s: &RunSummary) -> Vec<Verdict> {
    match suite {
        Suite::MnistQuick => vec![
            at_most("one_pass test error %", error_of(s, Scheme::OnePass), Some(8.0), 10.5),
            at_most("multi_pass test error %", error_of(s, Scheme::MultiPass), Some(7.2), 10.0),
        ],
        Suite::CifarSmoke => {
            let errs = s.last_group_train_err();
            vec![
                Verdict {
                    metric: "train error % by epoch".into(),
                    measured: errs.last().copied().unwrap_or(f64::NAN),
                    reference: None,
                    rule: format!(
                        "strictly decreasing: {}",
                        errs.iter().map(|e| format!("{e:.2}")).collect::<Vec<_>>().join(" > ")
                    ),
                    pass: strictly_decreasing(&errs),
                },
                at_most("group_channel test error %", error_of(s, Scheme::GroupChannel), None, 70.0),
            ]
        }
        Suite::CifarFull => vec![
            at_most("group_channel test error %", error_of(s, Scheme::GroupChannel), Some(24.1), 28.1),
            Verdict {
                metric: "one_pass test error %".into(),
                measured: error_of(s, Scheme::OnePass),
                reference: None,
                rule: "reported only".into(),
                pass: true,
            },
        ],
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub verdicts: Vec<Verdict>,
    pub summary: RunSummary,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }
}

/// Run `suite` with `overrides` (`--key value` pairs) applied on top of the
/// canned configuration; artifacts land in `output_root/<suite>`.
pub fn run(suite: Suite, output_root: &Path, overrides: &[String], opts: RunOptions) -> Result<SuiteReport> {
    let mut cfg = suite.config();
    cfg.output_dir = output_root.join(suite.name());
    cfg.apply_args(overrides)?;
    let summary = train(&cfg, opts)?;
    Ok(SuiteReport { suite, verdicts: verdicts(suite, &summary), summary })
}

pub fn render(r: &SuiteReport) -> String {
    let mut s = format!("{:<12} {:<28} {:>9} {:>7}  {:<6} rule\n", "suite", "metric", "measured", "ref", "result");
    for v in &r.verdicts {
        s.push_str(&format!(
            "{:<12} {:<28} {:>9.2} {:>7}  {:<6} {}\n",
            r.suite.name(),
            v.metric,
            v.measured,
            v.reference.map_or("-".to_string(), |p| format!("{p:.1}")),
            if v.pass { "PASS" } else { "FAIL" },
            v.rule
        ));
    }
    s
}
