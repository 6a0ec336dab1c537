//! Encoder `E` and classifier `C` with exact reverse-mode gradients.
//!
//! Encoder pipeline per trial (`ch` channels, `T` samples):
//!
//! 1. temporal convolution, `F` filters of length `K` shared across channels
//!    (valid padding, output length `L1 = T - K + 1`);
//! 2. spatial convolution collapsing channels into `F` maps;
//! 3. ELU;
//! 4. mean-pool over time by `pool_factor` (remainder truncated);
//! 5. inverted dropout (training passes only);
//! 6. dense projection to the `d`-dimensional embedding.
//!
//! The classifier is a three-layer MLP `d -> H -> H -> C` with ELU hidden
//! activations; logits are left unnormalized.

mod checkpoint;
mod fd;
mod forward;
mod optim;

use std::hash::{Hash, Hasher};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive, rng_from};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, PNCK_MAGIC};
pub use fd::{central_difference, finite_diff_grad, max_relative_error, relative_error, GradDiff};
pub use forward::{classify, encode, forward_backward, loss_value, AuxInputs, DropoutMode};
pub use optim::{apply_update, OptimizerKind, OptimizerState};

/// Number of parameter arrays, in declaration order.
pub const N_PARAM_ARRAYS: usize = 12;

pub const PARAM_NAMES: [&str; N_PARAM_ARRAYS] = [
    "temporal_w",
    "temporal_b",
    "spatial_w",
    "spatial_b",
    "proj_w",
    "proj_b",
    "fc1_w",
    "fc1_b",
    "fc2_w",
    "fc2_b",
    "out_w",
    "out_b",
];

pub(crate) const TEMPORAL_W: usize = 0;
pub(crate) const TEMPORAL_B: usize = 1;
pub(crate) const SPATIAL_W: usize = 2;
pub(crate) const SPATIAL_B: usize = 3;
pub(crate) const PROJ_W: usize = 4;
pub(crate) const PROJ_B: usize = 5;
pub(crate) const FC1_W: usize = 6;
pub(crate) const FC1_B: usize = 7;
pub(crate) const FC2_W: usize = 8;
pub(crate) const FC2_B: usize = 9;
pub(crate) const OUT_W: usize = 10;
pub(crate) const OUT_B: usize = 11;

fn default_embed_dim() -> usize {
    64
}
fn default_temporal_filters() -> usize {
    8
}
fn default_temporal_kernel() -> usize {
    11
}
fn default_pool_factor() -> usize {
    4
}
fn default_mlp_hidden() -> usize {
    64
}
fn default_dropout() -> f64 {
    0.25
}

/// Architecture hyperparameters. Input dimensions left at 0 in a config file
/// are filled from the data by [`ArchConfig::with_dims`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    #[serde(default)]
    pub n_channels: usize,
    #[serde(default)]
    pub n_samples: usize,
    #[serde(default)]
    pub n_classes: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_temporal_filters")]
    pub temporal_filters: usize,
    #[serde(default = "default_temporal_kernel")]
    pub temporal_kernel: usize,
    #[serde(default = "default_pool_factor")]
    pub pool_factor: usize,
    #[serde(default = "default_mlp_hidden")]
    pub mlp_hidden: usize,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::new(0, 0, 0)
    }
}

impl ArchConfig {
    /// Default layer sizes for the given input dimensions.
    pub fn new(n_channels: usize, n_samples: usize, n_classes: usize) -> Self {
        Self {
            n_channels,
            n_samples,
            n_classes,
            embed_dim: default_embed_dim(),
            temporal_filters: default_temporal_filters(),
            temporal_kernel: default_temporal_kernel(),
            pool_factor: default_pool_factor(),
            mlp_hidden: default_mlp_hidden(),
            dropout_rate: default_dropout(),
            seed: 0,
        }
    }

    /// Gradient-check sized network (a few thousand parameters at most).
    pub fn tiny(scale: usize) -> Self {
        let s = scale.max(1);
        Self {
            n_channels: 3,
            n_samples: 16,
            n_classes: 3,
            embed_dim: 4 * s,
            temporal_filters: 2 * s,
            temporal_kernel: 5,
            pool_factor: 3,
            mlp_hidden: 6 * s,
            dropout_rate: 0.25,
            seed: 0,
        }
    }

    pub fn with_dims(mut self, n_channels: usize, n_samples: usize, n_classes: usize) -> Self {
        self.n_channels = n_channels;
        self.n_samples = n_samples;
        self.n_classes = n_classes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_channels", self.n_channels),
            ("n_samples", self.n_samples),
            ("n_classes", self.n_classes),
            ("temporal_filters", self.temporal_filters),
            ("temporal_kernel", self.temporal_kernel),
            ("pool_factor", self.pool_factor),
            ("mlp_hidden", self.mlp_hidden),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be >= 1"));
            }
        }
        if self.embed_dim < 2 {
            return Err(Error::config("embed_dim", "must be >= 2"));
        }
        if self.temporal_kernel > self.n_samples {
            return Err(Error::config(
                "temporal_kernel",
                format!("kernel {} longer than {} samples", self.temporal_kernel, self.n_samples),
            ));
        }
        if self.conv_len() / self.pool_factor == 0 {
            return Err(Error::config(
                "pool_factor",
                format!("pool {} exceeds convolution length {}", self.pool_factor, self.conv_len()),
            ));
        }
        if !(self.dropout_rate >= 0.0 && self.dropout_rate < 1.0) {
            return Err(Error::config("dropout_rate", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Length after the temporal convolution.
    pub fn conv_len(&self) -> usize {
        self.n_samples + 1 - self.temporal_kernel.min(self.n_samples)
    }

    /// Length after pooling.
    pub fn pooled_len(&self) -> usize {
        self.conv_len() / self.pool_factor
    }

    /// Width of the flattened pooled feature map fed to the projection.
    pub fn flat_dim(&self) -> usize {
        self.temporal_filters * self.pooled_len()
    }

    /// Element counts of every parameter array in declaration order.
    pub fn array_lens(&self) -> [usize; N_PARAM_ARRAYS] {
        let (f, k, ch, d, h, c) = (
            self.temporal_filters,
            self.temporal_kernel,
            self.n_channels,
            self.embed_dim,
            self.mlp_hidden,
            self.n_classes,
        );
        [
            f * k,
            f,
            f * f * ch,
            f,
            d * self.flat_dim(),
            d,
            h * d,
            h,
            h * h,
            h,
            c * h,
            c,
        ]
    }

    /// Fan-in of the weight arrays (`None` for biases).
    pub fn fan_in(&self, array: usize) -> Option<usize> {
        match array {
            TEMPORAL_W => Some(self.temporal_kernel),
            SPATIAL_W => Some(self.temporal_filters * self.n_channels),
            PROJ_W => Some(self.flat_dim()),
            FC1_W => Some(self.embed_dim),
            FC2_W | OUT_W => Some(self.mlp_hidden),
            _ => None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.array_lens().iter().sum()
    }
}

/// Encoder and classifier parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: ArchConfig,
    arrays: Vec<Vec<f64>>,
}

impl ModelParams {
    /// All-zero parameters.
    pub fn zeros(arch: &ArchConfig) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch: arch.clone(),
            arrays: arch.array_lens().iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    pub fn from_arrays(arch: &ArchConfig, arrays: Vec<Vec<f64>>) -> Result<Self> {
        arch.validate()?;
        check_congruent(arch, &arrays)?;
        if let Some((a, i)) = first_non_finite(&arrays) {
            return Err(Error::Numeric(format!("parameter {}[{i}] is not finite", PARAM_NAMES[a])));
        }
        Ok(Self {
            arch: arch.clone(),
            arrays,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn arrays(&self) -> &[Vec<f64>] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.arrays
    }

    pub fn array(&self, i: usize) -> &[f64] {
        &self.arrays[i]
    }

    pub fn len(&self) -> usize {
        self.arrays.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parameter at a flat index spanning all arrays in declaration order.
    pub fn get_flat(&self, idx: usize) -> f64 {
        let (a, i) = locate(&self.arrays, idx);
        self.arrays[a][i]
    }

    pub fn set_flat(&mut self, idx: usize, v: f64) {
        let (a, i) = locate(&self.arrays, idx);
        self.arrays[a][i] = v;
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.arrays.iter().flatten().copied().collect()
    }

    /// Stable fingerprint of the parameter bytes.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for a in &self.arrays {
            for v in a {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// He-uniform initialization: weights from `U(-sqrt(6/fan_in), sqrt(6/fan_in))`
/// (variance `2/fan_in`), biases zero. Deterministic in `arch.seed`.
pub fn init_model(arch: &ArchConfig) -> Result<ModelParams> {
    let mut model = ModelParams::zeros(arch)?;
    for (a, values) in model.arrays.iter_mut().enumerate() {
        if let Some(fan_in) = arch.fan_in(a) {
            let bound = (6.0 / fan_in as f64).sqrt();
            let mut rng = rng_from(derive(arch.seed, &[0x1417, a as u64]));
            for v in values.iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
    }
    Ok(model)
}

/// Immutable teacher copy of a model. Encoding through it never applies
/// dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenModel {
    params: ModelParams,
    fingerprint: u64,
}

impl FrozenModel {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn snapshot(&self) -> FrozenModel {
        self.clone()
    }
}

pub fn snapshot(model: &ModelParams) -> FrozenModel {
    FrozenModel {
        fingerprint: model.fingerprint(),
        params: model.clone(),
    }
}

/// Gradient (or any per-parameter quantity) congruent with [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    arrays: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(model: &ModelParams) -> Self {
        Self {
            arrays: model.arrays.iter().map(|a| vec![0.0; a.len()]).collect(),
        }
    }

    pub fn from_arrays(arch: &ArchConfig, arrays: Vec<Vec<f64>>) -> Result<Self> {
        check_congruent(arch, &arrays)?;
        Ok(Self { arrays })
    }

    pub fn arrays(&self) -> &[Vec<f64>] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.arrays
    }

    pub fn get_flat(&self, idx: usize) -> f64 {
        let (a, i) = locate(&self.arrays, idx);
        self.arrays[a][i]
    }

    pub fn set_flat(&mut self, idx: usize, v: f64) {
        let (a, i) = locate(&self.arrays, idx);
        self.arrays[a][i] = v;
    }

    pub fn len(&self) -> usize {
        self.arrays.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.arrays.iter().flatten().copied().collect()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &GradientSet, scale: f64) {
        for (a, b) in self.arrays.iter_mut().zip(&other.arrays) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn is_congruent(&self, model: &ModelParams) -> bool {
        self.arrays.len() == model.arrays.len()
            && self.arrays.iter().zip(&model.arrays).all(|(a, b)| a.len() == b.len())
    }
}

fn check_congruent(arch: &ArchConfig, arrays: &[Vec<f64>]) -> Result<()> {
    let lens = arch.array_lens();
    if arrays.len() != N_PARAM_ARRAYS {
        return Err(Error::Shape(format!(
            "expected {N_PARAM_ARRAYS} parameter arrays, got {}",
            arrays.len()
        )));
    }
    for (i, (a, &n)) in arrays.iter().zip(&lens).enumerate() {
        if a.len() != n {
            return Err(Error::Shape(format!(
                "{} has {} values, architecture expects {n}",
                PARAM_NAMES[i],
                a.len()
            )));
        }
    }
    Ok(())
}

fn first_non_finite(arrays: &[Vec<f64>]) -> Option<(usize, usize)> {
    arrays
        .iter()
        .enumerate()
        .find_map(|(a, v)| v.iter().position(|x| !x.is_finite()).map(|i| (a, i)))
}

fn locate(arrays: &[Vec<f64>], mut idx: usize) -> (usize, usize) {
    for (a, v) in arrays.iter().enumerate() {
        if idx < v.len() {
            return (a, idx);
        }
        idx -= v.len();
    }
    panic!("flat parameter index out of range");
}

/// Array name and in-array position of a flat parameter index.
pub fn describe_flat_index(arch: &ArchConfig, mut idx: usize) -> String {
    for (a, n) in arch.array_lens().into_iter().enumerate() {
        if idx < n {
            return format!("{}[{idx}]", PARAM_NAMES[a]);
        }
        idx -= n;
    }
    format!("<out of range {idx}>")
}
