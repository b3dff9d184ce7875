use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{FfError, Result};
use crate::ops::{conv_output_dim, Padding};
use crate::tensor::Shape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Linear,
    Conv,
}

/// `[batchnorm] -> linear|conv -> ReLU -> [maxpool 2x2]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Input channels for conv, flattened input features for linear.
    pub in_channels: usize,
    pub out_channels: usize,
    #[serde(default = "one")]
    pub kernel: usize,
    #[serde(default = "same")]
    pub padding: Padding,
    #[serde(default)]
    pub maxpool_after: bool,
    #[serde(default)]
    pub batchnorm_before: bool,
}

fn one() -> usize {
    1
}

fn same() -> Padding {
    Padding::Same
}

impl LayerSpec {
    pub fn linear(fin: usize, fout: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Linear,
            in_channels: fin,
            out_channels: fout,
            kernel: 1,
            padding: Padding::Same,
            maxpool_after: false,
            batchnorm_before: false,
        }
    }

    pub fn conv(cin: usize, cout: usize, kernel: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            in_channels: cin,
            out_channels: cout,
            kernel,
            padding: Padding::Same,
            maxpool_after: false,
            batchnorm_before: false,
        }
    }

    pub fn pooled(mut self) -> Self {
        self.maxpool_after = true;
        self
    }

    pub fn normalized(mut self) -> Self {
        self.batchnorm_before = true;
        self
    }

    /// Weight elements plus bias.
    pub fn kernel_params(&self) -> usize {
        match self.kind {
            LayerKind::Linear => self.in_channels * self.out_channels + self.out_channels,
            LayerKind::Conv => self.in_channels * self.out_channels * self.kernel * self.kernel + self.out_channels,
        }
    }

    /// Batchnorm affine parameters (gamma and beta) at this layer.
    pub fn bn_params(&self, input: Shape) -> usize {
        if self.batchnorm_before {
            2 * input.c
        } else {
            0
        }
    }

    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Linear => self.in_channels,
            LayerKind::Conv => self.in_channels * self.kernel * self.kernel,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    /// Label overlaid on the input, per-layer sum-of-squares goodness.
    OriginalOverlay,
    /// Output channels split into per-class groups.
    Grouped,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub mode: ModelMode,
    pub num_classes: usize,
    /// `[C, H, W]` of one input sample.
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input(&self, n: usize) -> Shape {
        let [c, h, w] = self.input_shape;
        Shape::new(n, c, h, w)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("spec serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ModelSpec =
            serde_json::from_str(text).map_err(|e| FfError::Format(format!("invalid model spec JSON: {e}")))?;
        spec.trace()?;
        Ok(spec)
    }

    /// Input shape of every layer followed by the final output shape, for one
    /// sample. Validates the whole chain.
    pub fn trace(&self) -> Result<Vec<Shape>> {
        let [c, h, w] = self.input_shape;
        let mut cur = Shape::try_new(1, c, h, w)?;
        if self.layers.is_empty() {
            return Err(FfError::Config(format!("model '{}' has no layers", self.name)));
        }
        if self.num_classes < 2 {
            return Err(FfError::Config(format!("model '{}' needs at least 2 classes", self.name)));
        }
        let mut shapes = vec![cur];
        for (i, l) in self.layers.iter().enumerate() {
            let ctx = |msg: String| FfError::Config(format!("{} layer {i}: {msg}", self.name));
            if l.out_channels == 0 {
                return Err(ctx("zero output channels".into()));
            }
            let mut next = match l.kind {
                LayerKind::Linear => {
                    if l.in_channels != cur.sample_len() {
                        return Err(ctx(format!(
                            "linear expects {} inputs but receives {cur} ({} features)",
                            l.in_channels,
                            cur.sample_len()
                        )));
                    }
                    Shape::new(1, l.out_channels, 1, 1)
                }
                LayerKind::Conv => {
                    if l.in_channels != cur.c {
                        return Err(ctx(format!("conv expects {} input channels but receives {cur}", l.in_channels)));
                    }
                    let ho = conv_output_dim(cur.h, l.kernel, 1, l.padding).map_err(|e| ctx(e.to_string()))?;
                    let wo = conv_output_dim(cur.w, l.kernel, 1, l.padding).map_err(|e| ctx(e.to_string()))?;
                    Shape::new(1, l.out_channels, ho, wo)
                }
            };
            if l.maxpool_after {
                if next.h % 2 != 0 || next.w % 2 != 0 {
                    return Err(ctx(format!("maxpool needs even spatial dims, got {next}")));
                }
                next = Shape::new(1, next.c, next.h / 2, next.w / 2);
            }
            if self.mode == ModelMode::Grouped && next.c % self.num_classes != 0 {
                return Err(ctx(format!(
                    "{} output channels not divisible into {} class groups",
                    next.c, self.num_classes
                )));
            }
            shapes.push(next);
            cur = next;
        }
        Ok(shapes)
    }

    /// Output shape of each layer for one sample.
    pub fn output_shapes(&self) -> Result<Vec<Shape>> {
        Ok(self.trace()?[1..].to_vec())
    }
}

/// Which parameters a count includes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountPolicy {
    /// Kernel weights and biases only.
    ConvStack,
    /// Plus batchnorm gamma and beta.
    ConvStackBn,
    /// Plus a one-pass softmax head over the selected layers.
    FullWithHead,
}

impl CountPolicy {
    pub const ALL: [CountPolicy; 3] = [CountPolicy::ConvStack, CountPolicy::ConvStackBn, CountPolicy::FullWithHead];

    pub fn name(self) -> &'static str {
        match self {
            CountPolicy::ConvStack => "conv_stack",
            CountPolicy::ConvStackBn => "conv_stack+bn",
            CountPolicy::FullWithHead => "full_with_head",
        }
    }
}

/// Trainable parameter count. `head_layers` lists the layers whose flattened
/// outputs feed the head; it only matters for [`CountPolicy::FullWithHead`].
pub fn count_params(spec: &ModelSpec, policy: CountPolicy, head_layers: &[usize]) -> Result<usize> {
    let shapes = spec.trace()?;
    let kernels: usize = spec.layers.iter().map(LayerSpec::kernel_params).sum();
    if policy == CountPolicy::ConvStack {
        return Ok(kernels);
    }
    let bn: usize = spec.layers.iter().zip(&shapes).map(|(l, &s)| l.bn_params(s)).sum();
    if policy == CountPolicy::ConvStackBn {
        return Ok(kernels + bn);
    }
    let mut dim = 0;
    for &l in head_layers {
        let s = shapes
            .get(l + 1)
            .ok_or_else(|| FfError::Config(format!("head layer {l} outside model of depth {}", spec.depth())))?;
        dim += s.sample_len();
    }
    Ok(kernels + bn + dim * spec.num_classes + spec.num_classes)
}

/// Published trainable-parameter totals for the light CIFAR-10 models.
pub fn published_param_count(name: &str) -> Option<usize> {
    match name {
        "FF_tiny" => Some(164_706),
        "FF_small" => Some(239_266),
        "FF_medium" => Some(484_506),
        "FF_optimal" => Some(754_386),
        "FF_deep" => Some(4_131_346),
        _ => None,
    }
}

fn overlay_mlp(name: &str, input: [usize; 3], dims: &[usize]) -> ModelSpec {
    ModelSpec {
        name: name.into(),
        mode: ModelMode::OriginalOverlay,
        num_classes: 10,
        input_shape: input,
        layers: dims.windows(2).map(|d| LayerSpec::linear(d[0], d[1])).collect(),
    }
}

/// Grouped CNN where every conv is preceded by batchnorm; `pools` lists the
/// layer indices followed by a maxpool.
fn grouped_cnn(name: &str, channels: &[usize], kernels: &[usize], pools: &[usize]) -> ModelSpec {
    let layers = channels
        .windows(2)
        .zip(kernels)
        .enumerate()
        .map(|(i, (c, &k))| {
            let mut l = LayerSpec::conv(c[0], c[1], k).normalized();
            l.maxpool_after = pools.contains(&i);
            l
        })
        .collect();
    ModelSpec { name: name.into(), mode: ModelMode::Grouped, num_classes: 10, input_shape: [3, 32, 32], layers }
}

/// Every named architecture.
pub fn builtin_specs() -> BTreeMap<String, ModelSpec> {
    let mnist_cnn = ModelSpec {
        name: "mnist_cnn".into(),
        mode: ModelMode::OriginalOverlay,
        num_classes: 10,
        input_shape: [1, 28, 28],
        layers: vec![
            LayerSpec::conv(1, 32, 3).pooled(),
            LayerSpec::conv(32, 64, 3).pooled(),
            LayerSpec::linear(64 * 7 * 7, 256),
            LayerSpec::linear(256, 100),
        ],
    };
    let cifar_cnn = ModelSpec {
        name: "cifar_cnn".into(),
        mode: ModelMode::OriginalOverlay,
        num_classes: 10,
        input_shape: [3, 32, 32],
        layers: vec![
            LayerSpec::conv(3, 128, 3).pooled(),
            LayerSpec::conv(128, 264, 3).pooled(),
            LayerSpec::conv(264, 512, 3).pooled(),
            LayerSpec::conv(512, 1024, 3),
        ],
    };
    let specs = vec![
        overlay_mlp("mnist_mlp", [1, 28, 28], &[784, 500, 100]),
        mnist_cnn,
        overlay_mlp("cifar_mlp", [3, 32, 32], &[3072, 3072, 2000, 1000]),
        cifar_cnn,
        grouped_cnn("FF_tiny", &[3, 50, 50, 50, 50], &[3, 3, 3, 4], &[3]),
        grouped_cnn("FF_small", &[3, 50, 50, 70, 70], &[3, 3, 3, 4], &[3]),
        grouped_cnn("FF_medium", &[3, 50, 50, 100, 150], &[3, 3, 3, 4], &[3]),
        grouped_cnn("FF_optimal", &[3, 50, 50, 100, 160, 160], &[3, 3, 3, 4, 3], &[4]),
        grouped_cnn("FF_deep", &[3, 130, 130, 260, 260, 260, 510], &[3, 3, 3, 5, 3, 3], &[1, 3, 5]),
    ];
    specs.into_iter().map(|s| (s.name.clone(), s)).collect()
}

pub fn builtin_spec(name: &str) -> Result<ModelSpec> {
    builtin_specs().remove(name).ok_or_else(|| {
        let names: Vec<String> = builtin_specs().into_keys().collect();
        FfError::Config(format!("unknown model '{name}' (builtin: {})", names.join(", ")))
    })
}
