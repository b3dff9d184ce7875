//! Prediction schemes: one-pass softmax head, overlay multi-pass and
//! group-channel goodness. Ties always resolve to the lowest class index.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datasets::{batch_iter, make_all_overlays, make_neutral, Dataset, DEFAULT_OVERLAY_VALUE};
use crate::error::{FfError, Result};
use crate::goodness::{argmax, grouped_goodness, layer_goodness, GroupGoodness, GroupSpec};
use crate::losses::softmax_cross_entropy;
use crate::model::{Model, ModelMode};
use crate::ops::{l2_normalize_forward, matmul_forward, matmul_param_grads, LayerParams};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSelection {
    AllButFirst,
    Last,
    Last2,
    Last3,
    Explicit(Vec<usize>),
}

impl LayerSelection {
    /// `all_but_first`, `last`, `last2`, `last3` or a comma-separated index list.
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "all_but_first" => Ok(LayerSelection::AllButFirst),
            "last" => Ok(LayerSelection::Last),
            "last2" => Ok(LayerSelection::Last2),
            "last3" => Ok(LayerSelection::Last3),
            list => list
                .split(',')
                .map(|t| t.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(LayerSelection::Explicit)
                .map_err(|_| {
                    FfError::Config(format!("bad layer selection '{s}' (all_but_first|last|last2|last3|i,j,...)"))
                }),
        }
    }

    pub fn name(&self) -> String {
        match self {
            LayerSelection::AllButFirst => "all_but_first".into(),
            LayerSelection::Last => "last".into(),
            LayerSelection::Last2 => "last2".into(),
            LayerSelection::Last3 => "last3".into(),
            LayerSelection::Explicit(v) => v.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
        }
    }

    /// All layers but the first for overlay models, the last two for grouped ones.
    pub fn default_for(mode: ModelMode) -> Self {
        match mode {
            ModelMode::OriginalOverlay => LayerSelection::AllButFirst,
            ModelMode::Grouped => LayerSelection::Last2,
        }
    }

    /// Sorted, non-empty layer indices for a model of `depth` layers.
    pub fn resolve(&self, depth: usize) -> Result<Vec<usize>> {
        let tail = |k: usize| -> Result<Vec<usize>> {
            if k > depth {
                return Err(FfError::Config(format!("selection of the last {k} layers on a {depth}-layer model")));
            }
            Ok((depth - k..depth).collect())
        };
        let v = match self {
            LayerSelection::AllButFirst => (1..depth).collect(),
            LayerSelection::Last => tail(1)?,
            LayerSelection::Last2 => tail(2)?,
            LayerSelection::Last3 => tail(3)?,
            LayerSelection::Explicit(v) => {
                let mut v = v.clone();
                v.sort_unstable();
                v.dedup();
                if let Some(&bad) = v.iter().find(|&&l| l >= depth) {
                    return Err(FfError::Config(format!("layer {bad} outside a {depth}-layer model")));
                }
                v
            }
        };
        if v.is_empty() {
            return Err(FfError::Config(format!(
                "layer selection '{}' is empty for a {depth}-layer model",
                self.name()
            )));
        }
        Ok(v)
    }
}

/// Content of the label region when an overlay model sees an unlabeled image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeutralOverlay {
    Zero,
    /// `1/J` in every label position.
    Uniform,
}

impl NeutralOverlay {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(NeutralOverlay::Zero),
            "uniform" => Ok(NeutralOverlay::Uniform),
            other => Err(FfError::Config(format!("unknown neutral overlay '{other}' (zero|uniform)"))),
        }
    }

    pub fn values(self, classes: usize) -> Vec<f32> {
        match self {
            NeutralOverlay::Zero => vec![0.0; classes],
            NeutralOverlay::Uniform => vec![1.0 / classes as f32; classes],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub selection: LayerSelection,
    pub input_dim: usize,
    pub num_classes: usize,
    pub neutral: NeutralOverlay,
}

impl HeadSpec {
    /// Head over `selection` of `model`, with the input width taken from the
    /// model's layer shapes.
    pub fn for_model(model: &Model, selection: LayerSelection, neutral: NeutralOverlay) -> Result<Self> {
        let layers = selection.resolve(model.depth())?;
        let shapes = model.spec().output_shapes()?;
        Ok(HeadSpec {
            input_dim: layers.iter().map(|&l| shapes[l].sample_len()).sum(),
            num_classes: model.num_classes(),
            selection,
            neutral,
        })
    }
}

/// Linear softmax classifier over concatenated activities.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxHead {
    spec: HeadSpec,
    params: LayerParams,
}

impl SoftmaxHead {
    /// Zero-initialised head (uniform class probabilities).
    pub fn new(spec: HeadSpec) -> Self {
        let params = LayerParams {
            weights: Tensor::zeros(Shape::matrix(spec.input_dim, spec.num_classes)),
            bias: vec![0.0; spec.num_classes],
            batchnorm: None,
        };
        SoftmaxHead { spec, params }
    }

    pub fn from_parts(spec: HeadSpec, weights: Tensor, bias: Vec<f32>) -> Result<Self> {
        if weights.shape() != Shape::matrix(spec.input_dim, spec.num_classes) || bias.len() != spec.num_classes {
            return Err(FfError::Shape(format!(
                "head weights {} / bias {} do not match {}x{}",
                weights.shape(),
                bias.len(),
                spec.input_dim,
                spec.num_classes
            )));
        }
        Ok(SoftmaxHead { spec, params: LayerParams { weights, bias, batchnorm: None } })
    }

    pub fn spec(&self) -> &HeadSpec {
        &self.spec
    }

    pub fn params(&self) -> &LayerParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut LayerParams {
        &mut self.params
    }

    pub fn logits(&self, activities: &Tensor) -> Result<Tensor> {
        matmul_forward(activities, &self.params)
    }

    pub fn predict(&self, activities: &Tensor) -> Result<Vec<usize>> {
        let z = self.logits(activities)?;
        Ok((0..z.shape().n).map(|n| argmax(z.sample(n))).collect())
    }
}

fn prepare_input(model: &Model, x: &Tensor, neutral: NeutralOverlay) -> Result<Tensor> {
    match model.mode() {
        ModelMode::OriginalOverlay => make_neutral(x, model.num_classes(), &neutral.values(model.num_classes())),
        ModelMode::Grouped => Ok(x.clone()),
    }
}

/// Concatenate `layers`' L2-normalised, flattened outputs per sample.
fn assemble(outputs: &[Tensor], layers: &[usize]) -> Result<Tensor> {
    let n = outputs[0].shape().n;
    let normed: Vec<Tensor> = layers.iter().map(|&l| l2_normalize_forward(&outputs[l])).collect();
    let dim: usize = normed.iter().map(|t| t.shape().sample_len()).sum();
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n {
        for t in &normed {
            data.extend_from_slice(t.sample(i));
        }
    }
    Tensor::from_vec(Shape::matrix(n, dim), data)
}

/// One forward pass on the neutral (overlay mode) or raw (grouped mode) input;
/// the selected layers' normalised activities, concatenated in layer order.
pub fn collect_activities(
    model: &Model,
    x: &Tensor,
    selection: &LayerSelection,
    neutral: NeutralOverlay,
) -> Result<Tensor> {
    let layers = selection.resolve(model.depth())?;
    let outputs = model.forward_eval(&prepare_input(model, x, neutral)?)?;
    assemble(&outputs, &layers)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for HeadTraining {
    fn default() -> Self {
        HeadTraining { epochs: 20, batch_size: 128, lr: 1e-2, seed: 0 }
    }
}

/// Minimise softmax cross-entropy over fixed activities with Adam. The FF
/// network is not involved.
pub fn train_head(activities: &Tensor, labels: &[usize], spec: HeadSpec, cfg: &HeadTraining) -> Result<SoftmaxHead> {
    let n = activities.shape().n;
    if labels.len() != n || activities.shape().sample_len() != spec.input_dim {
        return Err(FfError::Shape(format!(
            "head training on {} with {} labels, head input {}",
            activities.shape(),
            labels.len(),
            spec.input_dim
        )));
    }
    if cfg.batch_size == 0 {
        return Err(FfError::Config("head batch_size must be >= 1".into()));
    }
    let classes = spec.num_classes;
    let mut head = SoftmaxHead::new(spec);
    let ds = Dataset::new(activities.clone(), labels.to_vec(), classes)?;
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let mut m = [vec![0.0f64; head.params.weights.len()], vec![0.0f64; classes]];
    let mut v = m.clone();
    let mut t = 0i32;
    for epoch in 0..cfg.epochs {
        for batch in batch_iter(&ds, cfg.batch_size, true, cfg.seed, epoch)? {
            let logits = head.logits(&batch.x)?;
            let (_, _, grad) = softmax_cross_entropy(logits.data(), classes, &batch.y);
            let grad = Tensor::matrix(batch.len(), classes, grad)?;
            let (gw, gb) = matmul_param_grads(&batch.x, &head.params, &grad)?;
            t += 1;
            let bc1 = 1.0 - b1.powi(t);
            let bc2 = 1.0 - b2.powi(t);
            let params = [head.params.weights.data_mut(), &mut head.params.bias[..]];
            for (k, (w, g)) in params.into_iter().zip([gw.data(), &gb[..]]).enumerate() {
                for i in 0..w.len() {
                    let gi = g[i] as f64;
                    m[k][i] = b1 * m[k][i] + (1.0 - b1) * gi;
                    v[k][i] = b2 * v[k][i] + (1.0 - b2) * gi * gi;
                    w[i] -= (cfg.lr as f64 * (m[k][i] / bc1) / ((v[k][i] / bc2).sqrt() + eps)) as f32;
                }
            }
        }
    }
    Ok(head)
}

/// Collect activities over `ds` in batches and train a head on them.
pub fn fit_head(
    model: &Model,
    ds: &Dataset,
    selection: LayerSelection,
    neutral: NeutralOverlay,
    cfg: &HeadTraining,
    batch_size: usize,
) -> Result<SoftmaxHead> {
    let spec = HeadSpec::for_model(model, selection, neutral)?;
    let mut parts = Vec::new();
    let mut labels = Vec::with_capacity(ds.len());
    for batch in batch_iter(ds, batch_size.max(1), false, 0, 0)? {
        parts.push(collect_activities(model, &batch.x, &spec.selection, neutral)?);
        labels.extend_from_slice(&batch.y);
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    train_head(&Tensor::concat(&refs)?, &labels, spec, cfg)
}

pub fn predict_one_pass(model: &Model, head: &SoftmaxHead, x: &Tensor) -> Result<Vec<usize>> {
    if head.spec.num_classes != model.num_classes() {
        return Err(FfError::Config("head and model disagree on the class count".into()));
    }
    let acts = collect_activities(model, x, &head.spec.selection, head.spec.neutral)?;
    head.predict(&acts)
}

/// Summed goodness of every candidate label: `scores[n * J + j]`. Runs one
/// forward pass per label.
pub fn multi_pass_scores(
    model: &Model,
    x: &Tensor,
    selection: &LayerSelection,
    overlay_value: f32,
) -> Result<Vec<f32>> {
    if model.mode() != ModelMode::OriginalOverlay {
        return Err(FfError::Config("multi-pass inference needs an overlay-mode model; use group_channel".into()));
    }
    let layers = selection.resolve(model.depth())?;
    let classes = model.num_classes();
    let n = x.shape().n;
    let all = make_all_overlays(x, classes, overlay_value)?;
    let mut scores = vec![0.0f32; n * classes];
    for j in 0..classes {
        let outputs = model.forward_eval(&all.slice_samples(j * n..(j + 1) * n)?)?;
        for &l in &layers {
            for (i, g) in layer_goodness(&outputs[l]).into_iter().enumerate() {
                scores[i * classes + j] += g;
            }
        }
    }
    Ok(scores)
}

pub fn predict_multi_pass(
    model: &Model,
    x: &Tensor,
    selection: &LayerSelection,
    overlay_value: f32,
) -> Result<Vec<usize>> {
    let classes = model.num_classes();
    let scores = multi_pass_scores(model, x, selection, overlay_value)?;
    Ok(scores.chunks_exact(classes).map(argmax).collect())
}

/// `sum over selected layers of G^l`, from a single forward pass.
pub fn group_channel_scores(model: &Model, x: &Tensor, selection: &LayerSelection) -> Result<GroupGoodness> {
    if model.mode() != ModelMode::Grouped {
        return Err(FfError::Config("group-channel inference needs a grouped-mode model".into()));
    }
    let layers = selection.resolve(model.depth())?;
    let outputs = model.forward_eval(x)?;
    let mut total: Option<GroupGoodness> = None;
    for &l in &layers {
        let y = &outputs[l];
        let g = grouped_goodness(y, &GroupSpec::new(y.shape().c, model.num_classes())?)?;
        match &mut total {
            Some(t) => t.add_assign(&g)?,
            None => total = Some(g),
        }
    }
    Ok(total.expect("selection is non-empty"))
}

pub fn predict_group_channel(model: &Model, x: &Tensor, selection: &LayerSelection) -> Result<Vec<usize>> {
    Ok(group_channel_scores(model, x, selection)?.argmax())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    OnePass,
    MultiPass,
    GroupChannel,
}

impl Scheme {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "one_pass" => Ok(Scheme::OnePass),
            "multi_pass" => Ok(Scheme::MultiPass),
            "group_channel" => Ok(Scheme::GroupChannel),
            other => Err(FfError::Config(format!("unknown scheme '{other}' (one_pass|multi_pass|group_channel)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::OnePass => "one_pass",
            Scheme::MultiPass => "multi_pass",
            Scheme::GroupChannel => "group_channel",
        }
    }

    /// Reject schemes the model (or a missing head) cannot run.
    pub fn check(self, model: &Model, head: Option<&SoftmaxHead>) -> Result<()> {
        match (self, model.mode()) {
            (Scheme::OnePass, _) if head.is_none() => {
                Err(FfError::Config("one_pass inference needs a trained head".into()))
            }
            (Scheme::MultiPass, ModelMode::Grouped) => {
                Err(FfError::Config("multi_pass inference needs an overlay-mode model; use group_channel".into()))
            }
            (Scheme::GroupChannel, ModelMode::OriginalOverlay) => {
                Err(FfError::Config("group_channel inference needs a grouped-mode model".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Layers scored by multi-pass and group-channel inference.
    pub selection: LayerSelection,
    pub overlay_value: f32,
    pub batch_size: usize,
}

impl EvalOptions {
    pub fn for_mode(mode: ModelMode) -> Self {
        EvalOptions {
            selection: LayerSelection::default_for(mode),
            overlay_value: DEFAULT_OVERLAY_VALUE,
            batch_size: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub error_pct: f64,
    pub inference_time_s: f64,
    pub samples: usize,
}

pub fn error_pct(predicted: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(predicted.len(), labels.len(), "prediction count mismatch");
    if labels.is_empty() {
        return 0.0;
    }
    let wrong = predicted.iter().zip(labels).filter(|(p, y)| p != y).count();
    100.0 * wrong as f64 / labels.len() as f64
}

pub fn predict(
    model: &Model,
    head: Option<&SoftmaxHead>,
    x: &Tensor,
    scheme: Scheme,
    opts: &EvalOptions,
) -> Result<Vec<usize>> {
    scheme.check(model, head)?;
    match scheme {
        Scheme::OnePass => predict_one_pass(model, head.expect("checked"), x),
        Scheme::MultiPass => predict_multi_pass(model, x, &opts.selection, opts.overlay_value),
        Scheme::GroupChannel => predict_group_channel(model, x, &opts.selection),
    }
}

/// Test error in percent and wall-clock inference time over `ds`.
pub fn evaluate(
    model: &Model,
    head: Option<&SoftmaxHead>,
    ds: &Dataset,
    scheme: Scheme,
    opts: &EvalOptions,
) -> Result<Metrics> {
    scheme.check(model, head)?;
    let started = Instant::now();
    let mut predicted = Vec::with_capacity(ds.len());
    for batch in batch_iter(ds, opts.batch_size.max(1), false, 0, 0)? {
        predicted.extend(predict(model, head, &batch.x, scheme, opts)?);
    }
    Ok(Metrics {
        error_pct: error_pct(&predicted, &ds.labels),
        inference_time_s: started.elapsed().as_secs_f64(),
        samples: ds.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selections() {
        assert_eq!(LayerSelection::AllButFirst.resolve(3).unwrap(), vec![1, 2]);
        assert_eq!(LayerSelection::Last2.resolve(4).unwrap(), vec![2, 3]);
        assert_eq!(LayerSelection::Last3.resolve(3).unwrap(), vec![0, 1, 2]);
        assert!(LayerSelection::AllButFirst.resolve(1).is_err());
        assert!(LayerSelection::Last3.resolve(2).is_err());
        assert_eq!(LayerSelection::parse("2, 0").unwrap().resolve(3).unwrap(), vec![0, 2]);
        assert!(LayerSelection::parse("3").unwrap().resolve(3).is_err());
        assert!(LayerSelection::parse("first").is_err());
    }

    #[test]
    fn error_counts() {
        assert_eq!(error_pct(&[1, 2, 3], &[1, 2, 3]), 0.0);
        let labels: Vec<usize> = (0..20).map(|i| i % 10).collect();
        assert_eq!(error_pct(&[0; 20], &labels), 90.0);
        assert_eq!(error_pct(&[0, 1, 5, 5], &[0, 1, 2, 3]), 50.0);
    }

    #[test]
    fn forced_class_head() {
        let spec =
            HeadSpec { selection: LayerSelection::Last, input_dim: 3, num_classes: 10, neutral: NeutralOverlay::Zero };
        let mut head = SoftmaxHead::new(spec);
        head.params_mut().bias[7] = 100.0;
        let acts = Tensor::from_fn(Shape::matrix(5, 3), |i| (i as f32).sin());
        assert_eq!(head.predict(&acts).unwrap(), vec![7; 5]);
    }

    #[test]
    fn separable_head_training() {
        let n = 40;
        let acts = Tensor::from_fn(Shape::matrix(n, 2), |i| {
            let (s, f) = (i / 2, i % 2);
            let class = s % 2;
            if f == class {
                1.0
            } else {
                0.1 * ((s * 7 % 5) as f32)
            }
        });
        let labels: Vec<usize> = (0..n).map(|s| s % 2).collect();
        let spec =
            HeadSpec { selection: LayerSelection::Last, input_dim: 2, num_classes: 2, neutral: NeutralOverlay::Zero };
        let cfg = HeadTraining { epochs: 200, batch_size: 8, lr: 1e-2, seed: 1 };
        let head = train_head(&acts, &labels, spec, &cfg).unwrap();
        assert_eq!(error_pct(&head.predict(&acts).unwrap(), &labels), 0.0);
    }
}
