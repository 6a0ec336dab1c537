//! Finite-difference verification of every loss configuration.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::datastream::TrialTensor;
use crate::error::{Error, Result};
use crate::losses::{FisherDiag, LossSpec};
use crate::netcore::{
    describe_flat_index, encode, finite_diff_grad, forward_backward, init_model, max_relative_error, snapshot,
    ArchConfig, AuxInputs, DropoutMode, GradientSet,
};
use crate::prototypes::ProtoMatrix;
use crate::rng::{derive, rng_from};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_EPSILON: f64 = 1e-5;
pub const GRADCHECK_MAX_PARAMS: usize = 5_000;

/// Loss configurations covered by the suite.
pub fn loss_configs() -> Vec<(&'static str, LossSpec)> {
    vec![
        ("ce_only", LossSpec::finetune()),
        ("zero_weights", LossSpec::pronecl(0.0, 0.0, 0.0)),
        ("pro", LossSpec::pronecl(0.7, 0.0, 0.0)),
        ("align", LossSpec::pronecl(0.0, 0.9, 0.0)),
        ("kd", LossSpec::pronecl(0.0, 0.0, 1.3)),
        ("ewc", LossSpec::ewc(2.5)),
        ("full_pronecl", LossSpec::pronecl(0.5, 0.1, 0.3)),
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct TermResult {
    pub config: String,
    pub seed: u64,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

/// Randomized inputs for one check: every auxiliary input is populated so any
/// configuration can run on it.
pub struct Fixture {
    pub arch: ArchConfig,
    pub batch: TrialTensor,
    pub prototypes: ProtoMatrix,
    pub centroid: Vec<f64>,
    pub teacher: crate::prototypes::EmbeddingBatch,
    pub fisher: FisherDiag,
    pub dropout_seed: u64,
}

pub fn fixture(arch: &ArchConfig, seed: u64, n_trials: usize) -> Result<Fixture> {
    let arch = ArchConfig { seed, ..arch.clone() };
    let model = init_model(&arch)?;
    let mut rng = rng_from(derive(seed, &[0x6C]));
    let len = n_trials * arch.n_channels * arch.n_samples;
    let data = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    let labels = (0..n_trials).map(|i| i % arch.n_classes).collect();
    let batch = TrialTensor::new(arch.n_channels, arch.n_samples, data, labels, vec![0; n_trials])?;
    let d = arch.embed_dim;
    let rows: Vec<f64> = (0..arch.n_classes * d).map(|_| rng.sample(StandardNormal)).collect();
    let prototypes = ProtoMatrix {
        n_classes: arch.n_classes,
        dim: d,
        rows,
        present: vec![true; arch.n_classes],
    };
    let centroid = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    // Teacher: the same network with perturbed weights.
    let mut teacher_params = model.clone();
    for i in 0..teacher_params.len() {
        let v = teacher_params.get_flat(i) + 0.1 * rng.sample::<f64, _>(StandardNormal);
        teacher_params.set_flat(i, v);
    }
    let teacher = snapshot(&teacher_params).encode(&batch)?;
    let mut values = GradientSet::zeros_like(&model);
    let mut anchor = model.clone();
    for i in 0..model.len() {
        values.set_flat(i, rng.random_range(0.0..1.0));
        anchor.set_flat(i, model.get_flat(i) + 0.2 * rng.sample::<f64, _>(StandardNormal));
    }
    Ok(Fixture {
        arch,
        batch,
        prototypes,
        centroid,
        teacher,
        fisher: FisherDiag { values, anchor },
        dropout_seed: derive(seed, &[0xD0]),
    })
}

impl Fixture {
    pub fn aux(&self) -> AuxInputs<'_> {
        AuxInputs {
            prototypes: Some(&self.prototypes),
            centroid: Some(&self.centroid),
            teacher: Some(&self.teacher),
            fisher: Some(&self.fisher),
            dropout: DropoutMode::Seeded(self.dropout_seed),
        }
    }
}

/// Analytic vs. central-difference gradient for one configuration and seed.
pub fn check_one(arch: &ArchConfig, name: &str, spec: &LossSpec, seed: u64) -> Result<TermResult> {
    let fx = fixture(arch, seed, 6)?;
    let model = init_model(&fx.arch)?;
    let aux = fx.aux();
    let (_, analytic) = forward_backward(&model, &fx.batch, &aux, spec)?;
    let numeric = finite_diff_grad(&model, &fx.batch, &aux, spec, GRADCHECK_EPSILON)?;
    let diff = max_relative_error(&analytic, &numeric);
    Ok(TermResult {
        config: name.to_string(),
        seed,
        max_rel_error: diff.max_rel_error,
        worst_param: describe_flat_index(&fx.arch, diff.worst_index),
        analytic: diff.analytic,
        numeric: diff.numeric,
        passed: diff.max_rel_error < GRADCHECK_TOLERANCE,
    })
}

/// Full suite: every configuration for each seed.
pub fn run_suite(arch: &ArchConfig, seeds: &[u64]) -> Result<Vec<TermResult>> {
    arch.validate()?;
    let n = arch.param_count();
    if n > GRADCHECK_MAX_PARAMS {
        return Err(Error::config(
            "arch_scale",
            format!("{n} parameters exceed the {GRADCHECK_MAX_PARAMS}-parameter gradient-check budget"),
        ));
    }
    let mut out = Vec::new();
    for (name, spec) in loss_configs() {
        for &seed in seeds {
            out.push(check_one(arch, name, &spec, seed)?);
        }
    }
    Ok(out)
}

/// Embedding of the fixture batch, used to confirm dropout is live in the check.
pub fn fixture_embeddings_differ(arch: &ArchConfig, seed: u64) -> Result<bool> {
    let fx = fixture(arch, seed, 4)?;
    let model = init_model(&fx.arch)?;
    let off = encode(&model, &fx.batch, DropoutMode::Off)?;
    let on = encode(&model, &fx.batch, DropoutMode::Seeded(fx.dropout_seed))?;
    Ok(off != on)
}
