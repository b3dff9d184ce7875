//! Layer-local training: greedy, chunked and overlapping local updates.
//!
//! Every step runs one training-mode forward pass of the whole network. Layers
//! are partitioned into groups; each group's loss is evaluated at its last
//! layer and backpropagated only through the group. The first layer of a group
//! treats its input as a constant. All layers are then stepped together.

use std::ops::Range;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{batch_iter, make_negative, make_positive, Dataset, OneHot};
use crate::error::{FfError, Result};
use crate::goodness::{
    grouped_goodness, grouped_goodness_backward, layer_goodness, split_pos_neg, GroupGoodness, GroupSpec,
};
use crate::losses::{channel_wise_loss, LossConfig, LossGrad, LossKind};
use crate::model::{param_slots_mut, LayerGrads, Model, ModelMode};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Routine {
    Greedy,
    Chunked,
    Overlapping,
}

/// When the chunk partition offset toggles between 0 and `ceil(n/2)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternation {
    Off,
    Epoch,
    Step,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f32,
    pub momentum: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f32, momentum: f32) -> Self {
        OptimizerConfig { kind: OptimizerKind::Sgd, lr, momentum, ..Default::default() }
    }

    pub fn adam(lr: f32) -> Self {
        OptimizerConfig { lr, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        // Zero is accepted so a run can be frozen on purpose.
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(FfError::Config(format!("lr must be a finite value >= 0, got {}", self.lr)));
        }
        let unit = |v: f32| (0.0..1.0).contains(&v);
        if !unit(self.momentum) || !unit(self.beta1) || !unit(self.beta2) {
            return Err(FfError::Config("momentum, beta1 and beta2 must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(FfError::Config("eps must be > 0 and weight_decay >= 0".into()));
        }
        Ok(())
    }
}

/// MultiStep schedule: `lr = base * gamma^(milestones <= epoch)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub milestones: Vec<usize>,
    pub gamma: f32,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule { milestones: Vec::new(), gamma: 0.1 }
    }
}

impl LrSchedule {
    pub fn validate(&self, epochs: usize) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(FfError::Config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FfError::Config(format!("milestones must be strictly increasing: {:?}", self.milestones)));
        }
        if let Some(&last) = self.milestones.last() {
            if last >= epochs {
                return Err(FfError::Config(format!("milestone {last} is not below the epoch count {epochs}")));
            }
        }
        Ok(())
    }
}

pub fn scheduled_lr(schedule: &LrSchedule, base_lr: f32, epoch: usize) -> f32 {
    let passed = schedule.milestones.iter().filter(|&&m| m <= epoch).count();
    (base_lr as f64 * (schedule.gamma as f64).powi(passed as i32)) as f32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub routine: Routine,
    pub chunk_size: usize,
    pub alternate: Alternation,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    pub shuffle: bool,
    pub overlay_value: f32,
    /// Per-layer gradient max-norm.
    pub grad_clip: Option<f32>,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            routine: Routine::Greedy,
            chunk_size: 1,
            alternate: Alternation::Epoch,
            epochs: 1,
            batch_size: 128,
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            lr_schedule: LrSchedule::default(),
            seed: 0,
            shuffle: true,
            overlay_value: crate::datasets::DEFAULT_OVERLAY_VALUE,
            grad_clip: None,
        }
    }
}

impl TrainPlan {
    /// Group size actually used by the routine.
    pub fn effective_chunk(&self) -> usize {
        match self.routine {
            Routine::Greedy => 1,
            _ => self.chunk_size,
        }
    }

    pub fn validate(&self, model: &Model) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.chunk_size == 0 {
            return Err(FfError::Config("epochs, batch_size and chunk_size must be >= 1".into()));
        }
        self.loss.validate()?;
        self.optimizer.validate()?;
        self.lr_schedule.validate(self.epochs)?;
        if self.loss.kind == LossKind::ChannelWise && model.mode() == ModelMode::OriginalOverlay {
            return Err(FfError::Config(
                "channel_wise loss needs a grouped model; overlay models use pair losses".into(),
            ));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(FfError::Config(format!("grad_clip must be > 0, got {c}")));
            }
        }
        partition(model.depth(), self.routine, self.effective_chunk(), 0).map(|_| ())
    }

    /// Partition offset for a given epoch and global step.
    pub fn offset(&self, epoch: usize, step: usize) -> usize {
        let n = self.effective_chunk();
        let odd = match self.alternate {
            Alternation::Off => false,
            Alternation::Epoch => epoch % 2 == 1,
            Alternation::Step => step % 2 == 1,
        };
        if odd && self.routine != Routine::Overlapping {
            n.div_ceil(2)
        } else {
            0
        }
    }
}

/// Layer groups for a routine.
///
/// Chunked: a leading chunk of `offset` layers (when nonzero), then
/// consecutive chunks of `n`; the last may be shorter. Overlapping: windows of
/// `n` with stride `n - 1`, so neighbours share one layer.
pub fn partition(depth: usize, routine: Routine, n: usize, offset: usize) -> Result<Vec<Range<usize>>> {
    if n == 0 || n > depth {
        return Err(FfError::Config(format!("chunk size {n} must lie in [1, {depth}] for a {depth}-layer model")));
    }
    let mut groups = Vec::new();
    match routine {
        Routine::Greedy | Routine::Chunked => {
            let n = if routine == Routine::Greedy { 1 } else { n };
            let mut start = 0;
            let first = offset % n;
            if first > 0 {
                groups.push(0..first.min(depth));
                start = first;
            }
            while start < depth {
                let end = (start + n).min(depth);
                groups.push(start..end);
                start = end;
            }
        }
        Routine::Overlapping => {
            if n < 2 {
                return Err(FfError::Config("overlapping groups need chunk size >= 2".into()));
            }
            let mut start = 0;
            loop {
                let end = (start + n).min(depth);
                groups.push(start..end);
                if end == depth {
                    break;
                }
                start = end - 1;
            }
        }
    }
    Ok(groups)
}

/// What a batch is scored against.
#[derive(Clone, Debug)]
pub enum Target {
    /// The first `positives` samples are positive, the rest negative (same count).
    Pair { positives: usize },
    /// Grouped goodness against the one-hot labels.
    Grouped(OneHot),
}

/// Loss and error of one group on one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupStat {
    pub layers: Range<usize>,
    pub loss: f64,
    pub errors: usize,
    pub samples: usize,
}

pub fn group_label(r: &Range<usize>) -> String {
    if r.len() == 1 {
        r.start.to_string()
    } else {
        format!("{}-{}", r.start, r.end - 1)
    }
}

/// Loss, error count and output gradient of a group whose last layer emitted `y`.
fn group_objective(
    model: &Model,
    y: &Tensor,
    target: &Target,
    loss: &LossConfig,
    layer: usize,
) -> Result<(f64, usize, Tensor)> {
    let (value, errors, grad) = match (model.mode(), target) {
        (ModelMode::OriginalOverlay, Target::Pair { positives }) => {
            let p = *positives;
            if y.shape().n != 2 * p {
                return Err(FfError::Shape(format!(
                    "pair target of {p} positives needs {} samples, got {}",
                    2 * p,
                    y.shape().n
                )));
            }
            let g = layer_goodness(y);
            let (gp, gn) = g.split_at(p);
            let out = loss.pair_loss(gp, gn)?;
            let errors = gp.iter().zip(gn).filter(|(a, b)| a <= b).count();
            let (dp, dn) = out.pair_grads().expect("pair loss");
            let dg: Vec<f32> = dp.iter().chain(dn).copied().collect();
            let mut gy = y.clone();
            for (n, &d) in dg.iter().enumerate() {
                for v in gy.sample_mut(n) {
                    *v *= 2.0 * d;
                }
            }
            (out.value, errors, gy)
        }
        (ModelMode::Grouped, Target::Grouped(z)) => {
            let spec = GroupSpec::new(y.shape().c, model.num_classes())?;
            let g = grouped_goodness(y, &spec)?;
            let labels = z.labels()?;
            let errors = g.argmax().iter().zip(&labels).filter(|(a, b)| a != b).count();
            let (value, grad_g) = if loss.kind == LossKind::ChannelWise {
                let out = channel_wise_loss(&g, z)?;
                let LossGrad::Matrix(m) = out.grad else { unreachable!("channel-wise loss returns a matrix gradient") };
                (out.value, m)
            } else {
                let pair = split_pos_neg(&g, z)?;
                let out = loss.pair_loss(&pair.g_pos, &pair.g_neg)?;
                let (dp, dn) = out.pair_grads().expect("pair loss");
                let mut m = Vec::with_capacity(g.data().len());
                for n in 0..g.rows() {
                    for &zv in z.row(n) {
                        m.push(dp[n] * zv + dn[n] * (1.0 - zv));
                    }
                }
                (out.value, GroupGoodness::from_raw(g.rows(), g.classes(), m)?)
            };
            (value, errors, grouped_goodness_backward(y, &spec, &grad_g)?)
        }
        _ => return Err(FfError::Config(format!("target does not match a {:?} model", model.mode()))),
    };
    if !value.is_finite() {
        return Err(FfError::NonFinite(format!("loss at layer {layer} is {value}")));
    }
    Ok((value, errors, grad))
}

/// One training-mode forward pass followed by the local backward pass of every
/// group. Layers outside all groups get `None`; layers in several groups get
/// the sum of their contributions.
pub fn local_gradients(
    model: &mut Model,
    x: &Tensor,
    target: &Target,
    groups: &[Range<usize>],
    loss: &LossConfig,
) -> Result<(Vec<Option<LayerGrads>>, Vec<GroupStat>)> {
    let caches = model.forward_train(x)?;
    let model = &*model;
    let mut grads: Vec<Option<LayerGrads>> = vec![None; model.depth()];
    let mut stats = Vec::with_capacity(groups.len());
    for group in groups {
        if group.is_empty() || group.end > model.depth() {
            return Err(FfError::Config(format!("invalid layer group {group:?}")));
        }
        let last = group.end - 1;
        let (value, errors, mut grad) = group_objective(model, &caches[last].output, target, loss, last)?;
        for l in group.clone().rev() {
            let want_input = l > group.start;
            let (lg, gx) = model.layer_backward(l, &caches[l], &grad, want_input)?;
            match &mut grads[l] {
                Some(acc) => acc.add_assign(&lg),
                slot @ None => *slot = Some(lg),
            }
            if let Some(gx) = gx {
                grad = model.next_input_backward(&caches[l - 1].output, &gx)?;
            }
        }
        stats.push(GroupStat {
            layers: group.clone(),
            loss: value,
            errors,
            samples: match target {
                Target::Pair { positives } => *positives,
                Target::Grouped(z) => z.rows(),
            },
        });
    }
    Ok((grads, stats))
}

#[derive(Clone, Debug, PartialEq)]
struct SlotState {
    m: Vec<f32>,
    v: Vec<f32>,
}

/// SGD with momentum or Adam with bias correction, one state per layer slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    config: OptimizerConfig,
    steps: Vec<u64>,
    state: Vec<Vec<SlotState>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, model: &Model) -> Self {
        let state = model
            .layers()
            .iter()
            .map(|p| {
                LayerGrads::zeros_like(p)
                    .slots()
                    .iter()
                    .map(|s| SlotState { m: vec![0.0; s.len()], v: vec![0.0; s.len()] })
                    .collect()
            })
            .collect();
        Optimizer { config, steps: vec![0; model.depth()], state }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Apply one update with learning rate `lr`. Non-finite gradients abort
    /// before any parameter changes.
    pub fn step(
        &mut self,
        model: &mut Model,
        grads: &mut [Option<LayerGrads>],
        lr: f32,
        clip: Option<f32>,
    ) -> Result<()> {
        for (l, g) in grads.iter().enumerate() {
            if g.as_ref().is_some_and(|g| !g.is_finite()) {
                return Err(FfError::NonFinite(format!("non-finite gradient in layer {l}")));
            }
        }
        let c = self.config.clone();
        for (l, (p, g)) in model.layers_mut().iter_mut().zip(grads.iter_mut()).enumerate() {
            let Some(g) = g else { continue };
            if let Some(max) = clip {
                let norm = g.l2_norm();
                if norm > max as f64 {
                    let k = (max as f64 / norm) as f32;
                    for s in g.slots_mut() {
                        s.iter_mut().for_each(|v| *v *= k);
                    }
                }
            }
            self.steps[l] += 1;
            let t = self.steps[l] as i32;
            let bc1 = 1.0 - (c.beta1 as f64).powi(t);
            let bc2 = 1.0 - (c.beta2 as f64).powi(t);
            for ((w, gs), st) in param_slots_mut(p).into_iter().zip(g.slots()).zip(&mut self.state[l]) {
                for i in 0..w.len() {
                    let gi = gs[i] + c.weight_decay * w[i];
                    match c.kind {
                        OptimizerKind::Sgd => {
                            st.m[i] = c.momentum * st.m[i] + gi;
                            w[i] -= lr * st.m[i];
                        }
                        OptimizerKind::Adam => {
                            st.m[i] = c.beta1 * st.m[i] + (1.0 - c.beta1) * gi;
                            st.v[i] = c.beta2 * st.v[i] + (1.0 - c.beta2) * gi * gi;
                            let mh = st.m[i] as f64 / bc1;
                            let vh = st.v[i] as f64 / bc2;
                            w[i] -= (lr as f64 * mh / (vh.sqrt() + c.eps as f64)) as f32;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub label: String,
    pub loss: f64,
    pub train_err_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f32,
    pub groups: Vec<GroupRecord>,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub optimizer: Optimizer,
    pub epochs_done: usize,
    pub lr: f32,
    pub history: Vec<EpochRecord>,
}

fn check_dataset(model: &Model, ds: &Dataset) -> Result<()> {
    let s = ds.images.shape();
    if [s.c, s.h, s.w] != model.spec().input_shape || ds.num_classes != model.num_classes() {
        return Err(FfError::Config(format!(
            "dataset of {s} with {} classes does not fit model '{}'",
            ds.num_classes,
            model.spec().name
        )));
    }
    if ds.is_empty() {
        return Err(FfError::Data("training set is empty".into()));
    }
    Ok(())
}

/// Train with `plan.routine`, calling `on_epoch` after each epoch.
pub fn fit(
    model: &mut Model,
    ds: &Dataset,
    plan: &TrainPlan,
    mut on_epoch: impl FnMut(&EpochRecord, &Model) -> Result<()>,
) -> Result<TrainState> {
    plan.validate(model)?;
    check_dataset(model, ds)?;
    let mut optimizer = Optimizer::new(plan.optimizer.clone(), model);
    let mut neg_rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut history = Vec::with_capacity(plan.epochs);
    let mut step = 0usize;
    let mut lr = plan.optimizer.lr;
    for epoch in 0..plan.epochs {
        let started = Instant::now();
        lr = scheduled_lr(&plan.lr_schedule, plan.optimizer.lr, epoch);
        // label -> (loss * samples, errors, samples)
        let mut acc: Vec<(String, f64, usize, usize)> = Vec::new();
        for batch in batch_iter(ds, plan.batch_size, plan.shuffle, plan.seed, epoch)? {
            let groups = partition(model.depth(), plan.routine, plan.effective_chunk(), plan.offset(epoch, step))?;
            let (x, target) = match model.mode() {
                ModelMode::OriginalOverlay => {
                    let pos = make_positive(&batch, plan.overlay_value)?;
                    let (neg, _) = make_negative(&batch, plan.overlay_value, &mut neg_rng)?;
                    (Tensor::concat(&[&pos, &neg])?, Target::Pair { positives: batch.len() })
                }
                ModelMode::Grouped => (batch.x.clone(), Target::Grouped(batch.z.clone())),
            };
            let (mut grads, stats) = local_gradients(model, &x, &target, &groups, &plan.loss)?;
            optimizer.step(model, &mut grads, lr, plan.grad_clip)?;
            for s in stats {
                let label = group_label(&s.layers);
                let idx = match acc.iter().position(|a| a.0 == label) {
                    Some(i) => i,
                    None => {
                        acc.push((label, 0.0, 0, 0));
                        acc.len() - 1
                    }
                };
                acc[idx].1 += s.loss * s.samples as f64;
                acc[idx].2 += s.errors;
                acc[idx].3 += s.samples;
            }
            step += 1;
        }
        let record = EpochRecord {
            epoch,
            lr,
            groups: acc
                .into_iter()
                .map(|(label, loss, errors, samples)| GroupRecord {
                    label,
                    loss: loss / samples as f64,
                    train_err_pct: 100.0 * errors as f64 / samples as f64,
                })
                .collect(),
            elapsed_s: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record, model)?;
        history.push(record);
    }
    Ok(TrainState { optimizer, epochs_done: plan.epochs, lr, history })
}

fn with_routine(plan: &TrainPlan, routine: Routine) -> TrainPlan {
    TrainPlan { routine, ..plan.clone() }
}

pub fn train_greedy(model: &mut Model, ds: &Dataset, plan: &TrainPlan) -> Result<TrainState> {
    fit(model, ds, &with_routine(plan, Routine::Greedy), |_, _| Ok(()))
}

pub fn train_chunked(model: &mut Model, ds: &Dataset, plan: &TrainPlan) -> Result<TrainState> {
    fit(model, ds, &with_routine(plan, Routine::Chunked), |_, _| Ok(()))
}

pub fn train_overlapping(model: &mut Model, ds: &Dataset, plan: &TrainPlan) -> Result<TrainState> {
    fit(model, ds, &with_routine(plan, Routine::Overlapping), |_, _| Ok(()))
}
