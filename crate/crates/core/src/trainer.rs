//! Base and incremental training phases and the per-method continual loop.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datastream::{split_indices, SubjectDataset, TrialTensor};
use crate::error::{Error, Result};
use crate::losses::{estimate_fisher, FisherDiag, LossBreakdown, LossSpec, Method};
use crate::metrics::{avg_acc, bwt, AccuracyMatrix};
use crate::netcore::{
    apply_update, classify, encode, forward_backward, init_model, loss_value, snapshot, ArchConfig, AuxInputs,
    DropoutMode, FrozenModel, ModelParams, OptimizerKind, OptimizerState,
};
use crate::prototypes::{compute_class_prototypes, project_prototypes, PrototypeMemory};
use crate::rng::{derive, rng_from};

fn default_epochs() -> usize {
    200
}
fn default_learning_rate() -> f64 {
    0.001
}
fn default_batch_size() -> usize {
    32
}
fn default_patience() -> usize {
    20
}
fn default_early_stop_fraction() -> f64 {
    0.2
}
fn default_fisher_samples() -> usize {
    200
}
fn default_alpha() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_patience")]
    pub early_stop_patience: usize,
    /// Share of each training split held out for early stopping.
    #[serde(default = "default_early_stop_fraction")]
    pub early_stop_fraction: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    /// Trials per subject used for the EWC Fisher estimate.
    #[serde(default = "default_fisher_samples")]
    pub fisher_samples: usize,
    /// EMA retention of the prototype memory.
    #[serde(default = "default_alpha")]
    pub prototype_alpha: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            learning_rate: default_learning_rate(),
            batch_size: default_batch_size(),
            early_stop_patience: default_patience(),
            early_stop_fraction: default_early_stop_fraction(),
            optimizer: OptimizerKind::default(),
            fisher_samples: default_fisher_samples(),
            prototype_alpha: default_alpha(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be >= 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be finite and > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if !(self.early_stop_fraction > 0.0 && self.early_stop_fraction < 1.0) {
            return Err(Error::config("early_stop_fraction", "must lie in (0, 1)"));
        }
        if self.fisher_samples == 0 {
            return Err(Error::config("fisher_samples", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.prototype_alpha) {
            return Err(Error::config("prototype_alpha", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Loss history of one phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrace {
    pub subject_id: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_ce: f64,
    /// Trial-weighted mean of each term over an epoch's mini-batches.
    pub epoch_losses: Vec<LossBreakdown>,
}

/// What one phase's training step touched and what was carried forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseAudit {
    pub subject_id: usize,
    /// Domain labels of every trial fed to a forward pass during the phase.
    pub domains_seen: Vec<usize>,
    pub trials_consumed: usize,
    /// Training splits still held by the runner once the phase is over.
    pub resident_train_splits: usize,
    /// Reals in the memory, Fisher/anchor and teacher carried to the next phase.
    pub carried_state_reals: usize,
}

impl PhaseAudit {
    fn new(subject_id: usize) -> Self {
        Self {
            subject_id,
            domains_seen: Vec::new(),
            trials_consumed: 0,
            resident_train_splits: 0,
            carried_state_reals: 0,
        }
    }

    fn record(&mut self, seen: &mut BTreeSet<usize>, batch: &TrialTensor) {
        seen.extend(batch.domain_labels().iter().copied());
        self.trials_consumed += batch.n_trials();
    }
}

/// Configuration echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub spec: LossSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinualRunResult {
    pub method: Method,
    pub subject_ids: Vec<usize>,
    pub acc_matrix: AccuracyMatrix,
    pub acc: f64,
    /// Absent for a single-subject stream.
    pub bwt: Option<f64>,
    pub traces: Vec<PhaseTrace>,
    /// Final prototype memory (ProNECL only) as base64 `PMEM` bytes.
    #[serde(with = "memory_b64")]
    pub memory: Option<PrototypeMemory>,
    pub audit: Vec<PhaseAudit>,
    pub config: ConfigEcho,
    /// Fingerprint of the final parameters.
    pub model_fingerprint: u64,
    /// Wall-clock seconds per phase; not part of the serialized result.
    #[serde(skip)]
    pub phase_seconds: Vec<f64>,
    #[serde(skip)]
    pub final_model: Option<ModelParams>,
}

mod memory_b64 {
    use super::PrototypeMemory;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(mem: &Option<PrototypeMemory>, s: S) -> Result<S::Ok, S::Error> {
        match mem {
            Some(m) => s.serialize_some(&m.to_base64()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<PrototypeMemory>, D::Error> {
        let text: Option<String> = Option::deserialize(d)?;
        text.map(|t| PrototypeMemory::from_base64(&t).map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// Read-only state from earlier subjects available to a phase.
#[derive(Clone, Copy, Default)]
struct PhaseContext<'a> {
    teacher: Option<&'a FrozenModel>,
    memory: Option<&'a PrototypeMemory>,
    fisher: Option<&'a FisherDiag>,
}

const TAG_VALIDATION: u64 = 0x7A11;
const TAG_SHUFFLE: u64 = 0x5A0F;
const TAG_DROPOUT: u64 = 0xD409;
const TAG_FISHER: u64 = 0xF15E;

fn check_data(model: &ModelParams, data: &TrialTensor) -> Result<()> {
    let a = model.arch();
    if data.n_channels() != a.n_channels || data.n_samples() != a.n_samples {
        return Err(Error::Shape(format!(
            "data is {}x{}, model expects {}x{}",
            data.n_channels(),
            data.n_samples(),
            a.n_channels,
            a.n_samples
        )));
    }
    if data.label_span() > a.n_classes {
        return Err(Error::Shape(format!(
            "data has label {} but the model has {} classes",
            data.label_span() - 1,
            a.n_classes
        )));
    }
    Ok(())
}

/// Mini-batch training with early stopping on validation cross-entropy; the
/// best-CE parameters are restored at the end.
#[allow(clippy::too_many_arguments)]
fn fit(
    model: &mut ModelParams,
    train: &TrialTensor,
    subject_id: usize,
    phase: usize,
    cfg: &TrainConfig,
    spec: &LossSpec,
    ctx: PhaseContext<'_>,
    audit: &mut PhaseAudit,
) -> Result<PhaseTrace> {
    cfg.validate()?;
    check_data(model, train)?;
    let spec = spec.normalized();
    let phase = phase as u64;
    let (fit_idx, val_idx) = split_indices(train.labels(), cfg.early_stop_fraction, derive(cfg.seed, &[TAG_VALIDATION, phase]))?;
    let fit_set = train.select(&fit_idx)?;
    let val_set = train.select(&val_idx)?;

    let prototypes = match (spec.uses_pro(), ctx.memory, ctx.teacher) {
        (true, Some(mem), Some(teacher)) => Some(project_prototypes(mem, teacher, model)?),
        (true, Some(mem), None) => Some(mem.as_matrix()),
        _ => None,
    };
    let centroid = match (spec.uses_align(), ctx.memory) {
        (true, Some(mem)) => Some(mem.centroid()?),
        _ => None,
    };
    if spec.uses_kd() && ctx.teacher.is_none() {
        return Err(Error::State("distillation is active but no teacher snapshot exists".into()));
    }

    let mut seen = BTreeSet::new();
    let mut opt = OptimizerState::for_model(cfg.optimizer, cfg.learning_rate, model)?;
    let mut order: Vec<usize> = (0..fit_set.n_trials()).collect();
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut epoch_losses = Vec::new();
    let val_aux = AuxInputs::default();
    let ce_spec = spec.ce_only();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng_from(derive(cfg.seed, &[TAG_SHUFFLE, phase, epoch as u64])));
        let mut sum = LossBreakdown::default();
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = fit_set.select(chunk)?;
            audit.record(&mut seen, &batch);
            let teacher_emb = match ctx.teacher {
                Some(t) if spec.uses_kd() => Some(t.encode(&batch)?),
                _ => None,
            };
            let aux = AuxInputs {
                prototypes: prototypes.as_ref(),
                centroid: centroid.as_deref(),
                teacher: teacher_emb.as_ref(),
                fisher: ctx.fisher,
                dropout: DropoutMode::Seeded(derive(cfg.seed, &[TAG_DROPOUT, phase, epoch as u64, b as u64])),
            };
            let (loss, grads) = forward_backward(model, &batch, &aux, &spec)?;
            apply_update(&mut opt, model, &grads)?;
            sum.accumulate(&loss, chunk.len() as f64 / fit_set.n_trials() as f64);
        }
        epoch_losses.push(sum);
        audit.record(&mut seen, &val_set);
        let val_ce = loss_value(model, &val_set, &val_aux, &ce_spec)?.ce;
        if !val_ce.is_finite() {
            return Err(Error::Numeric(format!("validation cross-entropy is {val_ce} at epoch {epoch}")));
        }
        if val_ce < best_val {
            best_val = val_ce;
            best_epoch = epoch;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }
    *model = best;
    audit.domains_seen = seen.into_iter().collect();
    Ok(PhaseTrace {
        subject_id,
        epochs_run: epoch_losses.len(),
        best_epoch,
        best_val_ce: best_val,
        epoch_losses,
    })
}

/// Class prototypes of `data` under the current model (dropout off).
fn local_prototypes(model: &ModelParams, data: &TrialTensor) -> Result<crate::prototypes::ProtoMatrix> {
    let emb = encode(model, data, DropoutMode::Off)?;
    Ok(compute_class_prototypes(&emb, model.arch().n_classes)?.0)
}

/// Cross-entropy training on the first subject; returns a memory holding its
/// class prototypes.
pub fn train_base(model: &mut ModelParams, d0: &SubjectDataset, cfg: &TrainConfig, spec: &LossSpec) -> Result<PrototypeMemory> {
    let mut audit = PhaseAudit::new(d0.subject_id);
    base_phase(model, d0.subject_id, &d0.train, cfg, spec, &mut audit).map(|(mem, _)| mem)
}

fn base_phase(
    model: &mut ModelParams,
    subject_id: usize,
    train: &TrialTensor,
    cfg: &TrainConfig,
    spec: &LossSpec,
    audit: &mut PhaseAudit,
) -> Result<(PrototypeMemory, PhaseTrace)> {
    let trace = fit(model, train, subject_id, 0, cfg, &spec.ce_only(), PhaseContext::default(), audit)?;
    let arch = model.arch();
    let mut mem = PrototypeMemory::new(arch.n_classes, arch.embed_dim, cfg.prototype_alpha)?;
    mem.ema_update(&local_prototypes(model, train)?)?;
    Ok((mem, trace))
}

/// One ProNECL subject: regularized training against the teacher and the
/// memory, then the EMA update of the memory with this subject's prototypes.
pub fn train_incremental(
    model: &mut ModelParams,
    teacher: &FrozenModel,
    mem: &mut PrototypeMemory,
    dk: &SubjectDataset,
    cfg: &TrainConfig,
    spec: &LossSpec,
) -> Result<PhaseTrace> {
    let mut audit = PhaseAudit::new(dk.subject_id);
    incremental_phase(model, teacher, mem, dk.subject_id, &dk.train, 1, cfg, spec, &mut audit)
}

#[allow(clippy::too_many_arguments)]
fn incremental_phase(
    model: &mut ModelParams,
    teacher: &FrozenModel,
    mem: &mut PrototypeMemory,
    subject_id: usize,
    train: &TrialTensor,
    phase: usize,
    cfg: &TrainConfig,
    spec: &LossSpec,
    audit: &mut PhaseAudit,
) -> Result<PhaseTrace> {
    if !mem.is_initialized() {
        return Err(Error::State("prototype memory has no initialized class".into()));
    }
    let ctx = PhaseContext {
        teacher: Some(teacher),
        memory: Some(mem),
        fisher: None,
    };
    let trace = fit(model, train, subject_id, phase, cfg, spec, ctx, audit)?;
    mem.ema_update(&local_prototypes(model, train)?)?;
    Ok(trace)
}

/// Fraction of trials whose argmax logit matches the label (ties go to the
/// lowest class index); dropout off.
pub fn evaluate(model: &ModelParams, data: &TrialTensor) -> Result<f64> {
    check_data(model, data)?;
    let emb = encode(model, data, DropoutMode::Off)?;
    let logits = classify(model, &emb)?;
    let c = model.arch().n_classes;
    let correct = logits
        .chunks(c)
        .zip(data.labels())
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(correct as f64 / data.n_trials() as f64)
}

/// Index of the first maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_stream(stream: &[SubjectDataset], arch: &ArchConfig) -> Result<()> {
    let first = stream
        .first()
        .ok_or_else(|| Error::Argument("the subject stream is empty".into()))?;
    for ds in stream {
        if ds.num_classes != first.num_classes
            || ds.train.n_channels() != first.train.n_channels()
            || ds.train.n_samples() != first.train.n_samples()
        {
            return Err(Error::Shape(format!(
                "subject {} is {}x{} with {} classes, subject {} is {}x{} with {} classes",
                ds.subject_id,
                ds.train.n_channels(),
                ds.train.n_samples(),
                ds.num_classes,
                first.subject_id,
                first.train.n_channels(),
                first.train.n_samples(),
                first.num_classes
            )));
        }
    }
    if arch.n_channels != first.train.n_channels()
        || arch.n_samples != first.train.n_samples()
        || arch.n_classes != first.num_classes
    {
        return Err(Error::Shape(format!(
            "architecture expects {}x{} with {} classes, stream is {}x{} with {} classes",
            arch.n_channels,
            arch.n_samples,
            arch.n_classes,
            first.train.n_channels(),
            first.train.n_samples(),
            first.num_classes
        )));
    }
    Ok(())
}

/// Train `method` over the subject stream in order and fill the accuracy
/// matrix. Each training split is dropped as soon as its phase ends.
pub fn run_continual(
    method: Method,
    stream: Vec<SubjectDataset>,
    arch: &ArchConfig,
    cfg: &TrainConfig,
    spec: &LossSpec,
) -> Result<ContinualRunResult> {
    cfg.validate()?;
    arch.validate()?;
    check_stream(&stream, arch)?;
    if spec.method != method {
        return Err(Error::config("method", format!("loss spec is for {} but the run is {method}", spec.method)));
    }
    let spec = spec.normalized();
    let n = stream.len();
    let subject_ids: Vec<usize> = stream.iter().map(|d| d.subject_id).collect();
    let mut trains: Vec<Option<TrialTensor>> = Vec::with_capacity(n);
    let mut tests = Vec::with_capacity(n);
    for ds in stream {
        trains.push(Some(ds.train));
        tests.push(ds.test);
    }

    let mut model = init_model(arch)?;
    let mut acc_matrix = AccuracyMatrix::new(n);
    let mut memory: Option<PrototypeMemory> = None;
    let mut fisher: Option<FisherDiag> = None;
    let mut traces = Vec::with_capacity(n);
    let mut audit = Vec::with_capacity(n);
    let mut phase_seconds = Vec::with_capacity(n);

    for k in 0..n {
        let started = Instant::now();
        let train = trains[k].take().expect("each split is taken once");
        let sid = subject_ids[k];
        let mut phase_audit = PhaseAudit::new(sid);
        let trace = if k == 0 {
            let (mem, trace) = base_phase(&mut model, sid, &train, cfg, &spec, &mut phase_audit)?;
            if method == Method::Pronecl {
                memory = Some(mem);
            }
            trace
        } else {
            let teacher = snapshot(&model);
            match method {
                Method::Pronecl => {
                    let mem = memory.as_mut().expect("memory exists after the base phase");
                    incremental_phase(&mut model, &teacher, mem, sid, &train, k, cfg, &spec, &mut phase_audit)?
                }
                Method::Finetune => {
                    fit(&mut model, &train, sid, k, cfg, &spec, PhaseContext::default(), &mut phase_audit)?
                }
                Method::Ewc => {
                    let ctx = PhaseContext {
                        fisher: fisher.as_ref(),
                        ..PhaseContext::default()
                    };
                    fit(&mut model, &train, sid, k, cfg, &spec, ctx, &mut phase_audit)?
                }
            }
        };
        if method == Method::Ewc && k + 1 < n {
            let fresh = estimate_fisher(&model, &train, cfg.fisher_samples, derive(cfg.seed, &[TAG_FISHER, k as u64]))?;
            match fisher.as_mut() {
                Some(f) => f.merge_running(fresh, k),
                None => fisher = Some(fresh),
            }
        }
        drop(train);
        phase_audit.resident_train_splits = trains.iter().filter(|t| t.is_some()).count() - (n - k - 1);
        phase_audit.carried_state_reals = memory.as_ref().map_or(0, |m| m.state_len())
            + fisher.as_ref().map_or(0, |f| f.state_len())
            + if method == Method::Pronecl { model.len() } else { 0 };
        for (i, test) in tests.iter().enumerate().take(k + 1) {
            acc_matrix.set(k, i, evaluate(&model, test)?)?;
        }
        traces.push(trace);
        audit.push(phase_audit);
        phase_seconds.push(started.elapsed().as_secs_f64());
    }

    Ok(ContinualRunResult {
        method,
        subject_ids,
        acc: avg_acc(&acc_matrix)?,
        bwt: if n >= 2 { Some(bwt(&acc_matrix)?) } else { None },
        acc_matrix,
        traces,
        memory,
        audit,
        config: ConfigEcho {
            arch: arch.clone(),
            train: cfg.clone(),
            spec,
        },
        model_fingerprint: model.fingerprint(),
        phase_seconds,
        final_model: Some(model),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastream::{generate_synthetic_stream, StreamConfig};

    fn small_stream(n_subjects: usize, shift: f64) -> (Vec<SubjectDataset>, ArchConfig) {
        let cfg = StreamConfig {
            n_subjects,
            n_classes: 3,
            n_channels: 4,
            n_samples: 16,
            trials_per_class: 12,
            subject_shift: shift,
            ..StreamConfig::default()
        };
        let stream = generate_synthetic_stream(&cfg).unwrap();
        let arch = ArchConfig {
            embed_dim: 6,
            temporal_filters: 3,
            temporal_kernel: 5,
            pool_factor: 2,
            mlp_hidden: 8,
            ..ArchConfig::new(4, 16, 3)
        };
        (stream, arch)
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 6,
            learning_rate: 0.01,
            batch_size: 8,
            fisher_samples: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[0.1, 0.3, 0.3]), 1);
    }

    #[test]
    fn zero_model_scores_one_over_c() {
        let (stream, arch) = small_stream(1, 0.0);
        let model = ModelParams::zeros(&arch).unwrap();
        let test = &stream[0].test;
        let expected = test.labels().iter().filter(|&&y| y == 0).count() as f64 / test.n_trials() as f64;
        assert_eq!(evaluate(&model, test).unwrap(), expected);
    }

    #[test]
    fn base_phase_fills_memory_and_is_deterministic() {
        let (stream, arch) = small_stream(1, 0.0);
        let mut a = init_model(&arch).unwrap();
        let mut b = init_model(&arch).unwrap();
        let mem = train_base(&mut a, &stream[0], &quick(), &LossSpec::pronecl(0.5, 0.1, 0.3)).unwrap();
        train_base(&mut b, &stream[0], &quick(), &LossSpec::pronecl(0.5, 0.1, 0.3)).unwrap();
        assert!(mem.initialized().iter().all(|&f| f));
        assert_eq!(a, b);
    }

    #[test]
    fn incremental_needs_memory() {
        let (stream, arch) = small_stream(2, 1.0);
        let mut model = init_model(&arch).unwrap();
        let teacher = snapshot(&model);
        let mut mem = PrototypeMemory::new(3, arch.embed_dim, 0.5).unwrap();
        let r = train_incremental(&mut model, &teacher, &mut mem, &stream[1], &quick(), &LossSpec::pronecl(0.5, 0.1, 0.3));
        assert!(matches!(r, Err(Error::State(_))));
    }

    #[test]
    fn memory_moves_iff_alpha_below_one() {
        let (stream, arch) = small_stream(2, 1.0);
        for (alpha, should_move) in [(0.5, true), (1.0, false)] {
            let cfg = TrainConfig {
                prototype_alpha: alpha,
                ..quick()
            };
            let mut model = init_model(&arch).unwrap();
            let mut mem = train_base(&mut model, &stream[0], &cfg, &LossSpec::finetune()).unwrap();
            let before = mem.clone();
            let teacher = snapshot(&model);
            train_incremental(&mut model, &teacher, &mut mem, &stream[1], &cfg, &LossSpec::pronecl(0.5, 0.1, 0.3)).unwrap();
            assert_eq!(mem != before, should_move, "alpha {alpha}");
        }
    }

    #[test]
    fn zero_lambda_pronecl_matches_finetune() {
        let (stream, arch) = small_stream(3, 1.5);
        let p = run_continual(Method::Pronecl, stream.clone(), &arch, &quick(), &LossSpec::pronecl(0.0, 0.0, 0.0)).unwrap();
        let f = run_continual(Method::Finetune, stream, &arch, &quick(), &LossSpec::finetune()).unwrap();
        assert_eq!(p.acc_matrix, f.acc_matrix);
        assert_eq!(p.model_fingerprint, f.model_fingerprint);
    }

    #[test]
    fn run_is_deterministic_and_complete() {
        let (stream, arch) = small_stream(3, 1.5);
        for (method, spec) in [
            (Method::Pronecl, LossSpec::pronecl(0.5, 0.1, 0.3)),
            (Method::Ewc, LossSpec::ewc(100.0)),
        ] {
            let a = run_continual(method, stream.clone(), &arch, &quick(), &spec).unwrap();
            let b = run_continual(method, stream.clone(), &arch, &quick(), &spec).unwrap();
            assert!(a.acc_matrix.is_complete());
            assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
            assert_eq!(a.memory.is_some(), method == Method::Pronecl);
        }
    }

    #[test]
    fn audit_sees_only_the_current_subject() {
        let (stream, arch) = small_stream(3, 1.5);
        let r = run_continual(Method::Pronecl, stream, &arch, &quick(), &LossSpec::pronecl(0.5, 0.1, 0.3)).unwrap();
        for a in &r.audit {
            assert_eq!(a.domains_seen, vec![a.subject_id]);
            assert_eq!(a.resident_train_splits, 0);
        }
        assert_eq!(r.audit[1].carried_state_reals, r.audit[2].carried_state_reals);
    }

    #[test]
    fn single_subject_has_no_bwt() {
        let (stream, arch) = small_stream(1, 0.0);
        let r = run_continual(Method::Finetune, stream, &arch, &quick(), &LossSpec::finetune()).unwrap();
        assert_eq!(r.bwt, None);
        assert_eq!(r.acc, r.acc_matrix.get(0, 0).unwrap());
    }

    #[test]
    fn mismatched_method_or_stream_rejected() {
        let (mut stream, arch) = small_stream(2, 1.0);
        assert!(run_continual(Method::Ewc, stream.clone(), &arch, &quick(), &LossSpec::finetune()).is_err());
        stream[1].num_classes = 4;
        assert!(run_continual(Method::Finetune, stream, &arch, &quick(), &LossSpec::finetune()).is_err());
    }
}
