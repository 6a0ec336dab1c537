//! Trial data model, the synthetic subject-shift stream and the `EEGB` v1
//! trial file format.
//!
//! `EEGB` v1 layout (little-endian, no padding):
//!
//! ```text
//! "EEGB" | version u32 = 1 | n_trials u32 | n_channels u32 | n_samples u32
//!        | n_classes u32 | subject_id u32
//!        | n_trials * n_channels * n_samples f32 (trial, channel, time)
//!        | n_trials u16 labels | n_trials u16 domain labels
//! ```

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive, rng_from};

pub const EEGB_MAGIC: &[u8; 4] = b"EEGB";
pub const EEGB_VERSION: u32 = 1;
const EEGB_HEADER_LEN: usize = 4 + 6 * 4;

/// A batch of trials, `n_trials x n_channels x n_samples`, with labels.
///
/// Amplitudes are kept in `f64`; the file format stores `f32`, so only
/// tensors whose values are exactly representable in `f32` survive a save/load
/// round trip bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTensor {
    n_channels: usize,
    n_samples: usize,
    data: Vec<f64>,
    labels: Vec<usize>,
    domain_labels: Vec<usize>,
}

impl TrialTensor {
    pub fn new(
        n_channels: usize,
        n_samples: usize,
        data: Vec<f64>,
        labels: Vec<usize>,
        domain_labels: Vec<usize>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Argument("a trial tensor needs at least one trial".into()));
        }
        if n_channels == 0 || n_samples == 0 {
            return Err(Error::Shape(format!(
                "n_channels={n_channels}, n_samples={n_samples}; both must be >= 1"
            )));
        }
        if domain_labels.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} labels but {} domain labels",
                labels.len(),
                domain_labels.len()
            )));
        }
        let expected = labels.len() * n_channels * n_samples;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "data has {} values, expected {} ({} trials x {} channels x {} samples)",
                data.len(),
                expected,
                labels.len(),
                n_channels,
                n_samples
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite amplitude at flat index {i}")));
        }
        Ok(Self {
            n_channels,
            n_samples,
            data,
            labels,
            domain_labels,
        })
    }

    pub fn n_trials(&self) -> usize {
        self.labels.len()
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn trial_len(&self) -> usize {
        self.n_channels * self.n_samples
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn domain_labels(&self) -> &[usize] {
        &self.domain_labels
    }

    /// Channel-major, time-minor view of one trial.
    pub fn trial(&self, i: usize) -> &[f64] {
        let len = self.trial_len();
        &self.data[i * len..(i + 1) * len]
    }

    /// Largest label plus one.
    pub fn label_span(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }

    /// New tensor made of the given trials, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<TrialTensor> {
        let len = self.trial_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        let mut labels = Vec::with_capacity(indices.len());
        let mut domains = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.n_trials() {
                return Err(Error::Argument(format!(
                    "trial index {i} out of range for {} trials",
                    self.n_trials()
                )));
            }
            data.extend_from_slice(self.trial(i));
            labels.push(self.labels[i]);
            domains.push(self.domain_labels[i]);
        }
        TrialTensor::new(self.n_channels, self.n_samples, data, labels, domains)
    }

    pub fn concat(parts: &[&TrialTensor]) -> Result<TrialTensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("nothing to concatenate".into()))?;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut domains = Vec::new();
        for p in parts {
            if p.n_channels != first.n_channels || p.n_samples != first.n_samples {
                return Err(Error::Shape(format!(
                    "cannot concatenate {}x{} trials with {}x{} trials",
                    p.n_channels, p.n_samples, first.n_channels, first.n_samples
                )));
            }
            data.extend_from_slice(&p.data);
            labels.extend_from_slice(&p.labels);
            domains.extend_from_slice(&p.domain_labels);
        }
        TrialTensor::new(first.n_channels, first.n_samples, data, labels, domains)
    }
}

/// One subject's trials as stored in a single `EEGB` file.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: usize,
    pub num_classes: usize,
    pub trials: TrialTensor,
}

impl SubjectRecord {
    pub fn new(subject_id: usize, num_classes: usize, trials: TrialTensor) -> Result<Self> {
        check_labels(&trials, num_classes)?;
        Ok(Self {
            subject_id,
            num_classes,
            trials,
        })
    }
}

/// Train/test splits of one subject `D_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectDataset {
    pub subject_id: usize,
    pub train: TrialTensor,
    pub test: TrialTensor,
    pub num_classes: usize,
}

impl SubjectDataset {
    pub fn new(
        subject_id: usize,
        train: TrialTensor,
        test: TrialTensor,
        num_classes: usize,
    ) -> Result<Self> {
        if train.n_channels != test.n_channels || train.n_samples != test.n_samples {
            return Err(Error::Shape(format!(
                "train is {}x{}, test is {}x{}",
                train.n_channels, train.n_samples, test.n_channels, test.n_samples
            )));
        }
        check_labels(&train, num_classes)?;
        check_labels(&test, num_classes)?;
        Ok(Self {
            subject_id,
            train,
            test,
            num_classes,
        })
    }

    /// Stratified split of a whole-subject record.
    pub fn from_record(record: SubjectRecord, test_fraction: f64, seed: u64) -> Result<Self> {
        let (train, test) = split_train_test(&record.trials, test_fraction, seed)?;
        Self::new(record.subject_id, train, test, record.num_classes)
    }

    /// Pair of recordings used as-is for training and testing (e.g. two sessions).
    pub fn from_sessions(train: SubjectRecord, test: SubjectRecord) -> Result<Self> {
        if train.num_classes != test.num_classes {
            return Err(Error::Shape(format!(
                "train session has {} classes, test session {}",
                train.num_classes, test.num_classes
            )));
        }
        Self::new(train.subject_id, train.trials, test.trials, train.num_classes)
    }

    /// Training trial count `m_k`.
    pub fn m_k(&self) -> usize {
        self.train.n_trials()
    }
}

fn check_labels(t: &TrialTensor, num_classes: usize) -> Result<()> {
    if num_classes == 0 {
        return Err(Error::config("n_classes", "must be >= 1"));
    }
    if let Some((i, &l)) = t.labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
        return Err(Error::Argument(format!(
            "trial {i} has label {l}, but there are only {num_classes} classes"
        )));
    }
    Ok(())
}

fn default_test_fraction() -> f64 {
    0.2
}

/// Synthetic stream parameters. Fields missing from a config file take the
/// [`Default`] values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    pub n_subjects: usize,
    pub n_classes: usize,
    pub n_channels: usize,
    pub n_samples: usize,
    pub trials_per_class: usize,
    pub class_separation: f64,
    pub subject_shift: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Fraction of each subject's trials held out for testing.
    pub test_fraction: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            n_subjects: 5,
            n_classes: 4,
            n_channels: 8,
            n_samples: 32,
            trials_per_class: 30,
            class_separation: 3.0,
            subject_shift: 1.5,
            noise_sigma: 0.5,
            seed: 0,
            test_fraction: default_test_fraction(),
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_subjects", self.n_subjects),
            ("n_classes", self.n_classes),
            ("n_channels", self.n_channels),
            ("n_samples", self.n_samples),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(Error::config(name, "must be >= 1"));
            }
        }
        if self.trials_per_class < 2 {
            return Err(Error::config(
                "trials_per_class",
                "must be >= 2 so every class appears in both splits",
            ));
        }
        if self.n_classes > u16::MAX as usize + 1 || self.n_subjects > u16::MAX as usize + 1 {
            return Err(Error::config("n_classes", "labels must fit in u16"));
        }
        let reals = [
            ("class_separation", self.class_separation),
            ("subject_shift", self.subject_shift),
            ("noise_sigma", self.noise_sigma),
        ];
        for (name, v) in reals {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("test_fraction", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Seed used to split subject `index` of a stream whose base seed is `base`.
pub fn split_seed(base: u64, index: usize) -> u64 {
    derive(base, &[0x5EED_5917, index as u64])
}

/// Per-subject affine map applied to the shared latent sources.
#[derive(Debug, Clone)]
pub struct SubjectMap {
    /// Row-major `n_channels x n_channels` mixing matrix.
    pub mixing: Vec<f64>,
    pub offset: Vec<f64>,
}

/// Latent class means; rows are pairwise `class_separation` apart whenever
/// `n_classes <= n_channels`.
pub fn class_means(cfg: &StreamConfig) -> Vec<Vec<f64>> {
    let ch = cfg.n_channels;
    let mut rng = rng_from(derive(cfg.seed, &[1]));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_classes);
    for _ in 0..cfg.n_classes {
        let mut v: Vec<f64> = (0..ch).map(|_| rng.sample(StandardNormal)).collect();
        if basis.len() < ch {
            // Gram-Schmidt against the previous directions.
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    let scale = cfg.class_separation / 2f64.sqrt();
    basis
        .into_iter()
        .map(|v| v.into_iter().map(|x| x * scale).collect())
        .collect()
}

/// `A_k = I + shift * G_k / sqrt(ch)`, `b_k = shift * beta_k`. The raw draws
/// `G_k`, `beta_k` depend only on the seed, so varying `subject_shift` scales
/// the same deviations.
pub fn subject_map(cfg: &StreamConfig, k: usize) -> SubjectMap {
    let ch = cfg.n_channels;
    let mut rng = rng_from(derive(cfg.seed, &[2, k as u64]));
    let g: Vec<f64> = (0..ch * ch).map(|_| rng.sample(StandardNormal)).collect();
    let beta: Vec<f64> = (0..ch).map(|_| rng.sample(StandardNormal)).collect();
    let s = cfg.subject_shift;
    let mut mixing = vec![0.0; ch * ch];
    for r in 0..ch {
        for c in 0..ch {
            let eye = if r == c { 1.0 } else { 0.0 };
            mixing[r * ch + c] = eye + s * g[r * ch + c] / (ch as f64).sqrt();
        }
    }
    SubjectMap {
        mixing,
        offset: beta.into_iter().map(|b| s * b).collect(),
    }
}

/// Class carrier: three cycles over the trial window, zero mean.
fn carrier(t: usize, n_samples: usize) -> f64 {
    (2.0 * PI * 3.0 * t as f64 / n_samples as f64).sin()
}

/// Whole-subject recordings (before any train/test split).
pub fn generate_subject_records(cfg: &StreamConfig) -> Result<Vec<SubjectRecord>> {
    cfg.validate()?;
    let ch = cfg.n_channels;
    let ns = cfg.n_samples;
    let means = class_means(cfg);
    let mut out = Vec::with_capacity(cfg.n_subjects);
    for k in 0..cfg.n_subjects {
        let map = subject_map(cfg, k);
        let mut rng = rng_from(derive(cfg.seed, &[3, k as u64]));
        let n = cfg.n_classes * cfg.trials_per_class;
        let mut data = Vec::with_capacity(n * ch * ns);
        let mut labels = Vec::with_capacity(n);
        let mut latent = vec![0.0; ch * ns];
        for c in 0..cfg.n_classes {
            for _ in 0..cfg.trials_per_class {
                // Smooth latent waveform around the class pattern: amplitude
                // jitter on the carrier plus a few random low-frequency sinusoids
                // per source.
                let gain = 1.0 + 0.2 * rng.sample::<f64, _>(StandardNormal);
                for j in 0..ch {
                    let comps: Vec<(f64, f64, f64)> = (0..3)
                        .map(|_| {
                            let amp = 0.5 * rng.sample::<f64, _>(StandardNormal);
                            let freq = rng.random_range(0.5..6.0);
                            let phase = rng.random_range(0.0..2.0 * PI);
                            (amp, freq, phase)
                        })
                        .collect();
                    for t in 0..ns {
                        let tt = t as f64 / ns as f64;
                        let smooth: f64 = comps
                            .iter()
                            .map(|(a, f, p)| a * (2.0 * PI * f * tt + p).sin())
                            .sum();
                        latent[j * ns + t] = gain * means[c][j] * carrier(t, ns) + smooth;
                    }
                }
                for r in 0..ch {
                    for t in 0..ns {
                        let mut v = map.offset[r];
                        for j in 0..ch {
                            v += map.mixing[r * ch + j] * latent[j * ns + t];
                        }
                        v += cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal);
                        // Round through f32 so the in-memory stream equals what
                        // the trial file stores.
                        data.push(v as f32 as f64);
                    }
                }
                labels.push(c);
            }
        }
        let trials = TrialTensor::new(ch, ns, data, labels, vec![k; n])?;
        out.push(SubjectRecord::new(k, cfg.n_classes, trials)?);
    }
    Ok(out)
}

/// `N` subject datasets, each split by [`split_train_test`] with
/// [`split_seed`]`(cfg.seed, k)`.
pub fn generate_synthetic_stream(cfg: &StreamConfig) -> Result<Vec<SubjectDataset>> {
    generate_subject_records(cfg)?
        .into_iter()
        .enumerate()
        .map(|(k, rec)| SubjectDataset::from_record(rec, cfg.test_fraction, split_seed(cfg.seed, k)))
        .collect()
}

/// Per-channel z-scoring across all trials and time points.
/// Channels with zero variance become all-zero.
pub fn standardize(t: &TrialTensor) -> TrialTensor {
    let ch = t.n_channels;
    let ns = t.n_samples;
    let count = (t.n_trials() * ns) as f64;
    let mut out = t.clone();
    for c in 0..ch {
        let values = || {
            (0..t.n_trials()).flat_map(move |i| {
                let base = i * ch * ns + c * ns;
                t.data[base..base + ns].iter().copied()
            })
        };
        let mean = values().sum::<f64>() / count;
        let var = values().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
        let scale = mean.abs().max(1.0);
        let constant = var <= (f64::EPSILON * scale).powi(2);
        let inv_std = if constant { 0.0 } else { 1.0 / var.sqrt() };
        for i in 0..t.n_trials() {
            let base = i * ch * ns + c * ns;
            for v in &mut out.data[base..base + ns] {
                *v = if constant { 0.0 } else { (*v - mean) * inv_std };
            }
        }
    }
    out
}

/// Stratified train/test index split; both index lists are ascending.
pub fn split_indices(
    labels: &[usize],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Split(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let span = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut rng = rng_from(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..span {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::Split(format!(
                "class {c} has {} trial(s); at least 2 are needed to split",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let n_test = ((idx.len() as f64 * test_fraction).round() as usize).clamp(1, idx.len() - 1);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split_train_test(
    t: &TrialTensor,
    test_fraction: f64,
    seed: u64,
) -> Result<(TrialTensor, TrialTensor)> {
    let (train, test) = split_indices(&t.labels, test_fraction, seed)?;
    Ok((t.select(&train)?, t.select(&test)?))
}

/// Serialize a record as `EEGB` v1 bytes.
pub fn encode_subject(record: &SubjectRecord) -> Result<Vec<u8>> {
    let t = &record.trials;
    let as_u32 = |name: &str, v: usize| -> Result<u32> {
        u32::try_from(v).map_err(|_| Error::config(name, "does not fit in u32"))
    };
    let mut out = Vec::with_capacity(EEGB_HEADER_LEN + t.data.len() * 4 + t.n_trials() * 4);
    out.extend_from_slice(EEGB_MAGIC);
    for (name, v) in [
        ("version", EEGB_VERSION as usize),
        ("n_trials", t.n_trials()),
        ("n_channels", t.n_channels),
        ("n_samples", t.n_samples),
        ("n_classes", record.num_classes),
        ("subject_id", record.subject_id),
    ] {
        out.extend_from_slice(&as_u32(name, v)?.to_le_bytes());
    }
    for &v in &t.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for (name, list) in [("labels", &t.labels), ("domain_labels", &t.domain_labels)] {
        for &l in list.iter() {
            let l = u16::try_from(l).map_err(|_| Error::config(name, "value does not fit in u16"))?;
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parse `EEGB` v1 bytes.
pub fn decode_subject(bytes: &[u8]) -> Result<SubjectRecord> {
    if bytes.len() < EEGB_HEADER_LEN {
        return Err(Error::format(
            bytes.len() as u64,
            format!("header needs {EEGB_HEADER_LEN} bytes, file has {}", bytes.len()),
        ));
    }
    if &bytes[..4] != EEGB_MAGIC {
        return Err(Error::format(0, "bad magic, expected \"EEGB\""));
    }
    let word = |i: usize| {
        let o = 4 + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize
    };
    let version = word(0);
    if version != EEGB_VERSION as usize {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let (n_trials, n_channels, n_samples, n_classes, subject_id) =
        (word(1), word(2), word(3), word(4), word(5));
    for (i, (name, v)) in [
        ("n_trials", n_trials),
        ("n_channels", n_channels),
        ("n_samples", n_samples),
        ("n_classes", n_classes),
    ]
    .into_iter()
    .enumerate()
    {
        if v == 0 {
            return Err(Error::format(8 + 4 * i as u64, format!("{name} must be >= 1")));
        }
    }
    let n_values = n_trials
        .checked_mul(n_channels)
        .and_then(|v| v.checked_mul(n_samples))
        .ok_or_else(|| Error::format(8, "dimensions overflow"))?;
    let expected = n_values
        .checked_mul(4)
        .and_then(|v| v.checked_add(n_trials * 4))
        .and_then(|v| v.checked_add(EEGB_HEADER_LEN))
        .ok_or_else(|| Error::format(8, "dimensions overflow"))?;
    if bytes.len() < expected {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::format(
            expected as u64,
            format!("{} trailing bytes after payload", bytes.len() - expected),
        ));
    }
    let mut data = Vec::with_capacity(n_values);
    let mut off = EEGB_HEADER_LEN;
    for _ in 0..n_values {
        let v = f32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::format(off as u64, format!("non-finite value {v}")));
        }
        data.push(v as f64);
        off += 4;
    }
    let mut read_u16s = |check: Option<usize>| -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(n_trials);
        for _ in 0..n_trials {
            let v = u16::from_le_bytes([bytes[off], bytes[off + 1]]) as usize;
            if let Some(limit) = check {
                if v >= limit {
                    return Err(Error::format(
                        off as u64,
                        format!("label {v} out of range for {limit} classes"),
                    ));
                }
            }
            out.push(v);
            off += 2;
        }
        Ok(out)
    };
    let labels = read_u16s(Some(n_classes))?;
    let domain_labels = read_u16s(None)?;
    let trials = TrialTensor::new(n_channels, n_samples, data, labels, domain_labels)?;
    SubjectRecord::new(subject_id, n_classes, trials)
}

pub fn save_subject_file(record: &SubjectRecord, path: &Path) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(Error::Argument("empty output path".into()));
    }
    let bytes = encode_subject(record)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_subject_file(path: &Path) -> Result<SubjectRecord> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_subject(&bytes)
}
