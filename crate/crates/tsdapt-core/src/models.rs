//! Network components: convolutional feature extractor, task
//! classifier, domain classifier behind a gradient reversal layer, and
//! a contrastive projection head.
//!
//! All four components are always initialized together from
//! per-component seed streams, so training methods that skip a
//! component (e.g. the contrastive head) still see bit-identical
//! initializations everywhere else.

use crate::rng;
use crate::tensor::{Array, Graph, NodeId, Padding, TensorError};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Shape of the network stack.
///
/// The default is the fully-convolutional time-series classifier:
/// three same-padded conv blocks (128/256/128 filters, widths 8/5/3)
/// with ReLU, global average pooling, a one-layer softmax task head, a
/// two-layer softmax domain head, and a one-layer projection head whose
/// output width equals the feature width.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    /// Sensor channels per window (K).
    pub channels: usize,
    /// Task classes (L).
    pub num_classes: usize,
    /// Domains including the target (n + 1).
    pub num_domains: usize,
    #[serde(default = "default_filters")]
    pub conv_filters: [usize; 3],
    #[serde(default = "default_widths")]
    pub kernel_widths: [usize; 3],
    #[serde(default = "default_domain_hidden")]
    pub domain_hidden: usize,
}

fn default_filters() -> [usize; 3] {
    [128, 256, 128]
}

fn default_widths() -> [usize; 3] {
    [8, 5, 3]
}

fn default_domain_hidden() -> usize {
    128
}

impl ArchitectureConfig {
    pub fn new(channels: usize, num_classes: usize, num_domains: usize) -> Self {
        Self {
            channels,
            num_classes,
            num_domains,
            conv_filters: default_filters(),
            kernel_widths: default_widths(),
            domain_hidden: default_domain_hidden(),
        }
    }

    /// Width of the pooled representation (the last filter count).
    pub fn feature_dim(&self) -> usize {
        self.conv_filters[2]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_classes < 2 {
            return Err(ModelError::InvalidArchitecture(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.num_domains < 2 {
            return Err(ModelError::InvalidArchitecture(format!(
                "need at least 1 source domain plus the target, got {} domains",
                self.num_domains
            )));
        }
        if self.channels == 0 {
            return Err(ModelError::InvalidArchitecture("channel count must be >= 1".into()));
        }
        if self.conv_filters.iter().any(|&f| f == 0)
            || self.kernel_widths.iter().any(|&w| w == 0)
            || self.domain_hidden == 0
        {
            return Err(ModelError::InvalidArchitecture(
                "filter counts, kernel widths, and hidden sizes must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Minimum window length the extractor accepts.
    pub fn min_window_len(&self) -> usize {
        *self.kernel_widths.iter().max().expect("three widths")
    }
}

/// Canonical parameter names, in checkpoint order.
pub const PARAM_NAMES: [&str; 14] = [
    "feature.conv1.kernels",
    "feature.conv1.bias",
    "feature.conv2.kernels",
    "feature.conv2.bias",
    "feature.conv3.kernels",
    "feature.conv3.bias",
    "task.out.weights",
    "task.out.bias",
    "domain.hidden.weights",
    "domain.hidden.bias",
    "domain.out.weights",
    "domain.out.bias",
    "head.proj.weights",
    "head.proj.bias",
];

/// Index of the projection-head weights inside [`ModelParameters`].
const HEAD_WEIGHTS: usize = 12;
const HEAD_BIAS: usize = 13;

/// All trainable arrays of the four components, in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters {
    arch: ArchitectureConfig,
    arrays: Vec<Array>,
}

fn uniform_fan_in(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Array {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Array::new(shape.to_vec(), data).expect("shape matches data")
}

impl ModelParameters {
    /// Deterministic seeded initialization: kernels and weights drawn
    /// uniformly in `+-1/sqrt(fan_in)`, biases all zero.
    pub fn init(arch: ArchitectureConfig, seed: u64) -> Result<Self, ModelError> {
        arch.validate()?;
        let [f1, f2, f3] = arch.conv_filters;
        let [w1, w2, w3] = arch.kernel_widths;
        let feat = arch.feature_dim();

        let mut rng_f = rng::stream(seed, "init/feature_extractor");
        let mut rng_c = rng::stream(seed, "init/task_classifier");
        let mut rng_d = rng::stream(seed, "init/domain_classifier");
        let mut rng_z = rng::stream(seed, "init/contrastive_head");

        let arrays = vec![
            uniform_fan_in(&mut rng_f, &[f1, arch.channels, w1], arch.channels * w1),
            Array::zeros(&[f1]),
            uniform_fan_in(&mut rng_f, &[f2, f1, w2], f1 * w2),
            Array::zeros(&[f2]),
            uniform_fan_in(&mut rng_f, &[f3, f2, w3], f2 * w3),
            Array::zeros(&[f3]),
            uniform_fan_in(&mut rng_c, &[arch.num_classes, feat], feat),
            Array::zeros(&[arch.num_classes]),
            uniform_fan_in(&mut rng_d, &[arch.domain_hidden, feat], feat),
            Array::zeros(&[arch.domain_hidden]),
            uniform_fan_in(&mut rng_d, &[arch.num_domains, arch.domain_hidden], arch.domain_hidden),
            Array::zeros(&[arch.num_domains]),
            uniform_fan_in(&mut rng_z, &[feat, feat], feat),
            Array::zeros(&[feat]),
        ];
        Ok(Self { arch, arrays })
    }

    /// Rebuilds parameters from named arrays (checkpoint loading).
    pub fn from_named(
        arch: ArchitectureConfig,
        mut named: impl FnMut(&str) -> Option<Array>,
    ) -> Result<Self, ModelError> {
        arch.validate()?;
        let mut arrays = Vec::with_capacity(PARAM_NAMES.len());
        for name in PARAM_NAMES {
            arrays.push(named(name).ok_or_else(|| {
                ModelError::InvalidArchitecture(format!("missing parameter array {name}"))
            })?);
        }
        Ok(Self { arch, arrays })
    }

    pub fn arch(&self) -> &ArchitectureConfig {
        &self.arch
    }

    pub fn arrays(&self) -> &[Array] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [Array] {
        &mut self.arrays
    }

    pub fn named_arrays(&self) -> impl Iterator<Item = (&'static str, &Array)> {
        PARAM_NAMES.iter().copied().zip(self.arrays.iter())
    }

    /// Binds every parameter as a gradient-requiring leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph) -> BoundModel {
        self.bind_with(graph, true)
    }

    /// Binds every parameter as a constant leaf (inference only).
    pub fn bind_frozen(&self, graph: &mut Graph) -> BoundModel {
        self.bind_with(graph, false)
    }

    fn bind_with(&self, graph: &mut Graph, trainable: bool) -> BoundModel {
        let ids = self
            .arrays
            .iter()
            .map(|a| {
                if trainable {
                    graph.parameter(a.clone())
                } else {
                    graph.constant(a.clone())
                }
            })
            .collect();
        BoundModel {
            arch: self.arch.clone(),
            ids,
        }
    }
}

/// Parameter leaves of one graph, ready for forward passes.
pub struct BoundModel {
    arch: ArchitectureConfig,
    ids: Vec<NodeId>,
}

impl BoundModel {
    pub fn arch(&self) -> &ArchitectureConfig {
        &self.arch
    }

    pub fn param_ids(&self) -> &[NodeId] {
        &self.ids
    }

    /// Node ids of the feature-extractor parameters only.
    pub fn feature_param_ids(&self) -> &[NodeId] {
        &self.ids[0..6]
    }

    /// Conv-ReLU x3 then global average pooling: `[K, H] -> [feature_dim]`.
    ///
    /// The pooled width is independent of the window length `H`, which
    /// must be at least the widest kernel.
    pub fn feature_extractor(&self, g: &mut Graph, window: NodeId) -> Result<NodeId, ModelError> {
        let shape = g.value(window).shape().to_vec();
        if shape.len() != 2 || shape[0] != self.arch.channels {
            return Err(ModelError::InvalidArchitecture(format!(
                "expected window [{} x H], got {:?}",
                self.arch.channels, shape
            )));
        }
        if shape[1] < self.arch.min_window_len() {
            return Err(ModelError::InvalidArchitecture(format!(
                "window length {} shorter than widest kernel {}",
                shape[1],
                self.arch.min_window_len()
            )));
        }
        let mut h = window;
        for block in 0..3 {
            let conv = g.conv1d(h, self.ids[block * 2], self.ids[block * 2 + 1], Padding::Same)?;
            h = g.relu(conv);
        }
        Ok(g.global_average_pool(h)?)
    }

    /// Dense + softmax over task classes: `[feature_dim] -> [L]`.
    pub fn task_classifier(&self, g: &mut Graph, features: NodeId) -> Result<NodeId, ModelError> {
        let logits = g.dense(features, self.ids[6], self.ids[7])?;
        Ok(g.softmax(logits)?)
    }

    /// Gradient reversal then dense-ReLU-dense + softmax over the n+1
    /// domain labels. `lambda` only affects the backward pass.
    pub fn domain_classifier(
        &self,
        g: &mut Graph,
        features: NodeId,
        lambda: f64,
    ) -> Result<NodeId, ModelError> {
        let reversed = g.gradient_reversal(features, lambda);
        let hidden = g.dense(reversed, self.ids[8], self.ids[9])?;
        let hidden = g.relu(hidden);
        let logits = g.dense(hidden, self.ids[10], self.ids[11])?;
        Ok(g.softmax(logits)?)
    }

    /// Projection for the contrastive objective: `[feature_dim] -> [feature_dim]`.
    pub fn contrastive_head(&self, g: &mut Graph, features: NodeId) -> Result<NodeId, ModelError> {
        Ok(g.dense(features, self.ids[HEAD_WEIGHTS], self.ids[HEAD_BIAS])?)
    }
}

/// Gradient-reversal coefficient schedule over training progress.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum LambdaSchedule {
    /// Fixed coefficient for the whole run.
    Constant(f64),
    /// Ramp `2 / (1 + exp(-10 p)) - 1` for progress `p` in `[0, 1]`,
    /// starting at 0 and saturating toward 1.
    Ramp,
}

impl LambdaSchedule {
    pub fn at(&self, progress: f64) -> f64 {
        match self {
            LambdaSchedule::Constant(v) => *v,
            LambdaSchedule::Ramp => {
                let p = progress.clamp(0.0, 1.0);
                2.0 / (1.0 + (-10.0 * p).exp()) - 1.0
            }
        }
    }
}

/// Domain label encoding: sources are `0..n` in configuration order and
/// the target is always the last index `n`.
pub fn target_domain_index(num_domains: usize) -> usize {
    num_domains - 1
}
