//! `ff train` and `ff eval`.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use ff_core::inference::{evaluate, fit_head, EvalOptions, Scheme, SoftmaxHead};
use ff_core::model::{load_checkpoint, save_checkpoint, Model};
use ff_core::trainer::{fit, EpochRecord};
use ff_core::FfError;
use serde::Serialize;

use crate::config::{Resolved, RunConfig};
use crate::data::{self, Splits};
use crate::{CliError, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const RUN_FILE: &str = "run.json";
pub const CHECKPOINT_FILE: &str = "model.ffck";
pub const METRICS_HEADER: &str = "epoch,layer_or_chunk,loss,lr,train_err_pct,elapsed_s";
const EVAL_HEADER: &str = "source,scheme,error_pct,inference_time_s,samples,forward_passes";

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Write zero for every wall-clock field so repeated runs are byte-identical.
    pub no_timing: bool,
    /// Per-epoch progress lines on stderr.
    pub progress: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalRow {
    pub scheme: Scheme,
    pub error_pct: f64,
    pub inference_time_s: f64,
    pub samples: usize,
    pub forward_passes: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub resolved: Resolved,
    pub git: String,
    pub data_dir: PathBuf,
    pub train_samples: usize,
    pub test_samples: usize,
    pub train_time_s: f64,
    pub history: Vec<EpochRecord>,
    pub evals: Vec<EvalRow>,
    pub output_dir: PathBuf,
    pub checkpoint: PathBuf,
}

impl RunSummary {
    pub fn eval(&self, scheme: Scheme) -> Option<&EvalRow> {
        self.evals.iter().find(|e| e.scheme == scheme)
    }

    /// Sample-weighted training error of the network's last group per epoch.
    pub fn last_group_train_err(&self) -> Vec<f64> {
        self.history.iter().filter_map(|r| r.groups.last().map(|g| g.train_err_pct)).collect()
    }
}

pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn metrics_rows(record: &EpochRecord, no_timing: bool) -> String {
    let elapsed = if no_timing { 0.0 } else { record.elapsed_s };
    record
        .groups
        .iter()
        .map(|g| {
            format!(
                "{},{},{:.6},{},{:.4},{:.3}\n",
                record.epoch + 1,
                g.label,
                g.loss,
                record.lr,
                g.train_err_pct,
                elapsed
            )
        })
        .collect()
}

fn progress_line(record: &EpochRecord, epochs: usize) -> String {
    let groups: Vec<String> =
        record.groups.iter().map(|g| format!("[{}] loss {:.4} err {:.2}%", g.label, g.loss, g.train_err_pct)).collect();
    format!("epoch {}/{} lr {} {:.1}s  {}", record.epoch + 1, epochs, record.lr, record.elapsed_s, groups.join("  "))
}

fn append_eval(dir: &Path, source: &str, rows: &[EvalRow]) -> Result<()> {
    let path = dir.join(EVAL_FILE);
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| CliError::io(&path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(EVAL_HEADER);
        text.push('\n');
    }
    for r in rows {
        text.push_str(&format!(
            "{source},{},{:.4},{:.6},{},{}\n",
            r.scheme.name(),
            r.error_pct,
            r.inference_time_s,
            r.samples,
            r.forward_passes
        ));
    }
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(&path, e))
}

fn eval_schemes(
    model: &Model,
    head: Option<&SoftmaxHead>,
    splits: &Splits,
    schemes: &[Scheme],
    opts: &EvalOptions,
    no_timing: bool,
) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::new();
    for &scheme in schemes {
        model.reset_passes();
        let m = evaluate(model, head, &splits.test, scheme, opts)?;
        rows.push(EvalRow {
            scheme,
            error_pct: m.error_pct,
            inference_time_s: if no_timing { 0.0 } else { m.inference_time_s },
            samples: m.samples,
            forward_passes: model.passes(),
        });
    }
    Ok(rows)
}

fn eval_options(r: &Resolved) -> EvalOptions {
    EvalOptions {
        selection: r.selection().clone(),
        overlay_value: r.config.overlay_value,
        batch_size: r.config.eval_batch_size,
    }
}

/// Train, fit the one-pass head when requested, evaluate, and write every
/// artifact under `output_dir`.
pub fn train(cfg: &RunConfig, opts: RunOptions) -> Result<RunSummary> {
    let spec = cfg.model_spec()?;
    let resolved = cfg.resolve(&spec)?;
    let c = &resolved.config;
    let mut model = Model::build(&spec, c.seed)?;
    resolved.plan.validate(&model)?;
    for &s in resolved.schemes() {
        if s != Scheme::OnePass {
            s.check(&model, None)?;
        }
    }
    let splits =
        data::load(c.dataset, c.data_dir.as_deref(), c.standardize.unwrap_or(false), c.train_subset, c.test_subset)?;

    let out = c.output_dir.clone();
    create_dir(&out)?;
    let metrics_path = out.join(METRICS_FILE);
    let file = File::create(&metrics_path).map_err(|e| CliError::io(&metrics_path, e))?;
    let mut metrics = BufWriter::new(file);
    let mut write_err: Option<std::io::Error> = None;
    let mut emit = |text: &str, w: &mut BufWriter<File>| {
        let r = w.write_all(text.as_bytes()).and_then(|_| w.flush());
        if let Err(e) = r {
            write_err.get_or_insert(e);
            return Err(FfError::Data(format!("cannot write {}", metrics_path.display())));
        }
        Ok(())
    };
    emit(&format!("{METRICS_HEADER}\n"), &mut metrics)?;

    let started = Instant::now();
    let epochs = resolved.plan.epochs;
    let state = fit(&mut model, &splits.train, &resolved.plan, |record, _| {
        if opts.progress {
            eprintln!("{}", progress_line(record, epochs));
        }
        emit(&metrics_rows(record, opts.no_timing), &mut metrics)
    });
    if let Some(e) = write_err {
        return Err(CliError::io(&metrics_path, e));
    }
    let state = state?;
    let train_time_s = if opts.no_timing { 0.0 } else { started.elapsed().as_secs_f64() };
    let mut history = state.history;
    if opts.no_timing {
        history.iter_mut().for_each(|r| r.elapsed_s = 0.0);
    }

    let head = if resolved.schemes().contains(&Scheme::OnePass) {
        if opts.progress {
            eprintln!("training one-pass head on {}", resolved.selection().name());
        }
        Some(fit_head(
            &model,
            &splits.train,
            resolved.selection().clone(),
            c.neutral,
            &c.head_training(),
            c.eval_batch_size,
        )?)
    } else {
        None
    };
    let checkpoint = out.join(CHECKPOINT_FILE);
    save_checkpoint(&checkpoint, &model, head.as_ref())?;

    let evals =
        eval_schemes(&model, head.as_ref(), &splits, resolved.schemes(), &eval_options(&resolved), opts.no_timing)?;
    append_eval(&out, "train", &evals)?;

    let summary = RunSummary {
        git: git_describe(),
        data_dir: splits.dir.clone(),
        train_samples: splits.train.len(),
        test_samples: splits.test.len(),
        train_time_s,
        history,
        evals,
        output_dir: out.clone(),
        checkpoint,
        resolved,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serialises");
    write_file(&out.join(RUN_FILE), format!("{json}\n").as_bytes())?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalSummary {
    pub checkpoint: PathBuf,
    pub model: String,
    pub data_dir: PathBuf,
    pub evals: Vec<EvalRow>,
}

/// Evaluate a saved checkpoint; `cfg` supplies dataset, schemes, and
/// inference options. Results are appended to `output_dir/eval.csv`.
pub fn eval(checkpoint: &Path, cfg: &RunConfig, opts: RunOptions) -> Result<EvalSummary> {
    let (model, head) = load_checkpoint(checkpoint)?;
    let resolved = cfg.resolve(model.spec())?;
    let c = &resolved.config;
    for &s in resolved.schemes() {
        s.check(&model, head.as_ref())?;
    }
    let splits = data::load(c.dataset, c.data_dir.as_deref(), c.standardize.unwrap_or(false), None, c.test_subset)?;
    let evals =
        eval_schemes(&model, head.as_ref(), &splits, resolved.schemes(), &eval_options(&resolved), opts.no_timing)?;
    create_dir(&c.output_dir)?;
    append_eval(&c.output_dir, &checkpoint.display().to_string(), &evals)?;
    Ok(EvalSummary {
        checkpoint: checkpoint.to_path_buf(),
        model: model.spec().name.clone(),
        data_dir: splits.dir,
        evals,
    })
}

pub fn render_evals(rows: &[EvalRow]) -> String {
    let mut s = format!("{:<14} {:>9} {:>12} {:>8} {:>7}\n", "scheme", "error %", "inference s", "samples", "passes");
    for r in rows {
        s.push_str(&format!(
            "{:<14} {:>9.2} {:>12.3} {:>8} {:>7}\n",
            r.scheme.name(),
            r.error_pct,
            r.inference_time_s,
            r.samples,
            r.forward_passes
        ));
    }
    s
}
