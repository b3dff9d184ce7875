//! Run configuration: a flat `key = value` file plus `--key value` overrides.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ff_core::inference::{HeadTraining, LayerSelection, NeutralOverlay, Scheme};
use ff_core::losses::{LossConfig, LossKind};
use ff_core::model::{builtin_spec, ModelMode, ModelSpec};
use ff_core::trainer::{Alternation, LrSchedule, OptimizerConfig, OptimizerKind, Routine, TrainPlan};
use ff_core::FfError;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DATA_DIR_ENV: &str = "FF_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Mnist,
    Cifar10,
}

impl DatasetName {
    pub fn dir_name(self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::Cifar10 => "cifar10",
        }
    }
}

/// Every knob of a run. Fields left `None` take a default that depends on
/// the model's mode once the model is known (see [`RunConfig::resolve`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetName,
    pub data_dir: Option<PathBuf>,
    pub model: String,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub routine: Option<Routine>,
    pub chunk_size: Option<usize>,
    pub alternate: Alternation,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: Option<LossKind>,
    pub theta: f32,
    pub margin: f32,
    pub lambda: f32,
    pub symba_printed_sign: bool,
    pub margin_printed_sign: bool,
    pub optimizer: OptimizerKind,
    pub lr: f32,
    pub momentum: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub weight_decay: f32,
    pub milestones: Vec<usize>,
    pub gamma: f32,
    pub shuffle: bool,
    pub overlay_value: f32,
    pub grad_clip: Option<f32>,
    pub schemes: Option<Vec<Scheme>>,
    pub selection: Option<LayerSelection>,
    pub neutral: NeutralOverlay,
    pub head_epochs: usize,
    pub head_lr: f32,
    pub head_batch_size: usize,
    pub eval_batch_size: usize,
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,
    pub standardize: Option<bool>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let opt = OptimizerConfig::default();
        let loss = LossConfig::default();
        let head = HeadTraining::default();
        RunConfig {
            dataset: DatasetName::Mnist,
            data_dir: None,
            model: "mnist_mlp".into(),
            output_dir: PathBuf::from("runs/latest"),
            seed: 0,
            routine: None,
            chunk_size: None,
            alternate: Alternation::Epoch,
            epochs: 1,
            batch_size: 128,
            loss: None,
            theta: loss.theta,
            margin: loss.margin,
            lambda: loss.lambda,
            symba_printed_sign: false,
            margin_printed_sign: false,
            optimizer: opt.kind,
            lr: opt.lr,
            momentum: opt.momentum,
            beta1: opt.beta1,
            beta2: opt.beta2,
            weight_decay: opt.weight_decay,
            milestones: Vec::new(),
            gamma: 0.1,
            shuffle: true,
            overlay_value: ff_core::datasets::DEFAULT_OVERLAY_VALUE,
            grad_clip: None,
            schemes: None,
            selection: None,
            neutral: NeutralOverlay::Zero,
            head_epochs: head.epochs,
            head_lr: head.lr,
            head_batch_size: head.batch_size,
            eval_batch_size: 500,
            train_subset: None,
            test_subset: None,
            standardize: None,
        }
    }
}

fn bad(key: &str, value: &str, why: impl Display) -> CliError {
    CliError::Ff(FfError::Config(format!("{key} = '{value}': {why}")))
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: Display,
{
    value.parse().map_err(|e| bad(key, value, e))
}

fn flag(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(bad(key, value, "expected true or false")),
    }
}

/// Parse a snake_case enum through its serde names.
fn named<T: DeserializeOwned>(key: &str, value: &str) -> Result<T, CliError> {
    serde_json::from_value(serde_json::Value::String(value.to_string())).map_err(|e| bad(key, value, e))
}

fn optional<T>(value: &str, parse: impl FnOnce(&str) -> Result<T, CliError>) -> Result<Option<T>, CliError> {
    match value {
        "" | "none" | "auto" => Ok(None),
        v => parse(v).map(Some),
    }
}

fn list<T>(value: &str, mut parse: impl FnMut(&str) -> Result<T, CliError>) -> Result<Vec<T>, CliError> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(&mut parse).collect()
}

fn ff<T>(r: ff_core::Result<T>) -> Result<T, CliError> {
    r.map_err(CliError::Ff)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.trim().replace('-', "_");
        let k = key.as_str();
        let v = value.trim();
        match k {
            "dataset" => self.dataset = named(k, v)?,
            "data_dir" => self.data_dir = optional(v, |s| Ok(PathBuf::from(s)))?,
            "model" => self.model = v.to_string(),
            "output_dir" => self.output_dir = PathBuf::from(v),
            "seed" => self.seed = num(k, v)?,
            "routine" => self.routine = optional(v, |s| named(k, s))?,
            "chunk_size" => self.chunk_size = optional(v, |s| num(k, s))?,
            "alternate" => self.alternate = named(k, v)?,
            "epochs" => self.epochs = num(k, v)?,
            "batch_size" => self.batch_size = num(k, v)?,
            "loss" => self.loss = optional(v, |s| ff(LossKind::parse(s)))?,
            "theta" => self.theta = num(k, v)?,
            "margin" => self.margin = num(k, v)?,
            "lambda" => self.lambda = num(k, v)?,
            "symba_printed_sign" => self.symba_printed_sign = flag(k, v)?,
            "margin_printed_sign" => self.margin_printed_sign = flag(k, v)?,
            "optimizer" => self.optimizer = named(k, v)?,
            "lr" => self.lr = num(k, v)?,
            "momentum" => self.momentum = num(k, v)?,
            "beta1" => self.beta1 = num(k, v)?,
            "beta2" => self.beta2 = num(k, v)?,
            "weight_decay" => self.weight_decay = num(k, v)?,
            "milestones" => self.milestones = list(v, |s| num(k, s))?,
            "gamma" => self.gamma = num(k, v)?,
            "shuffle" => self.shuffle = flag(k, v)?,
            "overlay_value" => self.overlay_value = num(k, v)?,
            "grad_clip" => self.grad_clip = optional(v, |s| num(k, s))?,
            "scheme" | "schemes" => self.schemes = optional(v, |s| list(s, |x| ff(Scheme::parse(x))))?,
            "selection" => self.selection = optional(v, |s| ff(LayerSelection::parse(s)))?,
            "neutral" => self.neutral = ff(NeutralOverlay::parse(v))?,
            "head_epochs" => self.head_epochs = num(k, v)?,
            "head_lr" => self.head_lr = num(k, v)?,
            "head_batch_size" => self.head_batch_size = num(k, v)?,
            "eval_batch_size" => self.eval_batch_size = num(k, v)?,
            "train_subset" => self.train_subset = optional(v, |s| num(k, s))?,
            "test_subset" => self.test_subset = optional(v, |s| num(k, s))?,
            "standardize" => self.standardize = optional(v, |s| flag(k, s))?,
            _ => return Err(CliError::Ff(FfError::Config(format!("unknown config key '{key}'")))),
        }
        Ok(())
    }

    /// Apply `key = value` lines. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Ff(FfError::Config(format!(
                    "{}:{}: expected 'key = value', got '{line}'",
                    origin.display(),
                    i + 1
                )))
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Apply `--key value` / `--key=value` pairs.
    pub fn apply_args(&mut self, args: &[String]) -> Result<(), CliError> {
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let Some(key) = arg.strip_prefix("--") else {
                return Err(CliError::Usage(format!("unexpected argument '{arg}'")));
            };
            match key.split_once('=') {
                Some((k, v)) => self.set(k, v)?,
                None => {
                    let v = it.next().ok_or_else(|| CliError::Usage(format!("--{key} needs a value")))?;
                    self.set(key, v)?;
                }
            }
        }
        Ok(())
    }

    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            cfg.apply_text(&text, path)?;
        }
        cfg.apply_args(overrides)?;
        Ok(cfg)
    }

    /// Builtin name, or a path to a spec JSON file.
    pub fn model_spec(&self) -> Result<ModelSpec, CliError> {
        if let Ok(spec) = builtin_spec(&self.model) {
            return Ok(spec);
        }
        let path = Path::new(&self.model);
        if path.is_file() {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            return ff(ModelSpec::from_json(&text));
        }
        Err(CliError::Ff(FfError::Config(format!(
            "unknown model '{}' (not a builtin name or a spec file)",
            self.model
        ))))
    }

    /// Fill mode-dependent defaults and check every value before any work.
    pub fn resolve(&self, spec: &ModelSpec) -> Result<Resolved, CliError> {
        let grouped = spec.mode == ModelMode::Grouped;
        let mut cfg = self.clone();
        cfg.routine.get_or_insert(if grouped { Routine::Chunked } else { Routine::Greedy });
        cfg.chunk_size.get_or_insert(match cfg.routine {
            Some(Routine::Greedy) => 1,
            _ => 2,
        });
        cfg.loss.get_or_insert(if grouped { LossKind::ChannelWise } else { LossKind::FfOriginal });
        cfg.schemes.get_or_insert_with(|| if grouped { vec![Scheme::GroupChannel] } else { vec![Scheme::MultiPass] });
        cfg.selection.get_or_insert_with(|| LayerSelection::default_for(spec.mode));
        cfg.standardize.get_or_insert(self.dataset == DatasetName::Cifar10);

        let expected = match self.dataset {
            DatasetName::Mnist => [1, 28, 28],
            DatasetName::Cifar10 => [3, 32, 32],
        };
        if spec.input_shape != expected || spec.num_classes != 10 {
            return Err(CliError::Ff(FfError::Config(format!(
                "model '{}' takes {:?} inputs with {} classes; {} provides {:?} with 10",
                spec.name,
                spec.input_shape,
                spec.num_classes,
                self.dataset.dir_name(),
                expected
            ))));
        }
        if cfg.eval_batch_size == 0 || cfg.head_batch_size == 0 {
            return Err(CliError::Ff(FfError::Config("batch sizes must be >= 1".into())));
        }
        if matches!(cfg.train_subset, Some(0)) || matches!(cfg.test_subset, Some(0)) {
            return Err(CliError::Ff(FfError::Config("subsets must hold at least one sample".into())));
        }
        let plan = cfg.plan();
        plan.loss.validate().map_err(CliError::Ff)?;
        plan.optimizer.validate().map_err(CliError::Ff)?;
        plan.lr_schedule.validate(plan.epochs).map_err(CliError::Ff)?;
        cfg.selection.as_ref().expect("set above").resolve(spec.layers.len()).map_err(CliError::Ff)?;
        Ok(Resolved { config: cfg, plan })
    }

    fn plan(&self) -> TrainPlan {
        TrainPlan {
            routine: self.routine.unwrap_or(Routine::Greedy),
            chunk_size: self.chunk_size.unwrap_or(1),
            alternate: self.alternate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            loss: LossConfig {
                kind: self.loss.unwrap_or(LossKind::FfOriginal),
                theta: self.theta,
                margin: self.margin,
                lambda: self.lambda,
                symba_printed_sign: self.symba_printed_sign,
                margin_printed_sign: self.margin_printed_sign,
            },
            optimizer: OptimizerConfig {
                kind: self.optimizer,
                lr: self.lr,
                momentum: self.momentum,
                beta1: self.beta1,
                beta2: self.beta2,
                weight_decay: self.weight_decay,
                ..Default::default()
            },
            lr_schedule: LrSchedule { milestones: self.milestones.clone(), gamma: self.gamma },
            seed: self.seed,
            shuffle: self.shuffle,
            overlay_value: self.overlay_value,
            grad_clip: self.grad_clip,
        }
    }

    pub fn head_training(&self) -> HeadTraining {
        HeadTraining { epochs: self.head_epochs, batch_size: self.head_batch_size, lr: self.head_lr, seed: self.seed }
    }
}

/// A config with every default filled, plus the training plan it implies.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Resolved {
    pub config: RunConfig,
    pub plan: TrainPlan,
}

impl Resolved {
    pub fn schemes(&self) -> &[Scheme] {
        self.config.schemes.as_deref().unwrap_or_default()
    }

    pub fn selection(&self) -> &LayerSelection {
        self.config.selection.as_ref().expect("resolved")
    }
}
