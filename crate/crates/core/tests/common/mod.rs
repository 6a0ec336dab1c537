//! Test-side oracles, written independently of the library code they check.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pronecl::datastream::{StreamConfig, TrialTensor};
use pronecl::netcore::ArchConfig;

/// Per-class mean by explicit summation.
pub fn class_means(rows: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Vec<Option<Vec<f64>>> {
    let d = rows.first().map_or(0, Vec::len);
    (0..n_classes)
        .map(|c| {
            let members: Vec<&Vec<f64>> = rows.iter().zip(labels).filter(|(_, &y)| y == c).map(|(r, _)| r).collect();
            if members.is_empty() {
                return None;
            }
            let mut m = vec![0.0; d];
            for r in &members {
                for k in 0..d {
                    m[k] += r[k];
                }
            }
            Some(m.into_iter().map(|v| v / members.len() as f64).collect())
        })
        .collect()
}

/// `-log softmax(row)[y]` via a log-sum-exp written out directly.
pub fn naive_ce(row: &[f64], y: usize) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - row[y]
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// First index of the maximum, by a plain scan.
pub fn first_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..row.len() {
        if row[i] > row[best] {
            best = i;
        }
    }
    best
}

/// Mean and `n - 1` standard deviation via sums of powers.
pub fn moments_oracle(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let s1: f64 = values.iter().sum();
    let s2: f64 = values.iter().map(|v| v * v).sum();
    let mean = s1 / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    (mean, ((s2 - n * mean * mean) / (n - 1.0)).max(0.0).sqrt())
}

/// Carrier-projection features of every trial: per channel, the inner product
/// with `sin` and `cos` at three cycles per window, plus the channel mean.
pub fn probe_features(t: &TrialTensor) -> Vec<Vec<f64>> {
    let ns = t.n_samples();
    (0..t.n_trials())
        .map(|i| {
            let x = t.trial(i);
            let mut f = Vec::new();
            for ch in 0..t.n_channels() {
                let row = &x[ch * ns..(ch + 1) * ns];
                let w = |g: fn(f64) -> f64| -> f64 {
                    row.iter()
                        .enumerate()
                        .map(|(s, v)| v * g(2.0 * std::f64::consts::PI * 3.0 * s as f64 / ns as f64))
                        .sum::<f64>()
                        / ns as f64
                };
                f.push(w(f64::sin));
                f.push(w(f64::cos));
                f.push(row.iter().sum::<f64>() / ns as f64);
            }
            f
        })
        .collect()
}

/// One-vs-rest least-squares linear classifier (ridge-stabilized normal
/// equations); returns test accuracy.
pub fn linear_probe_accuracy(train: &TrialTensor, test: &TrialTensor, n_classes: usize) -> f64 {
    let fx = probe_features(train);
    let p = fx[0].len() + 1;
    let x = DMatrix::from_fn(fx.len(), p, |i, j| if j + 1 == p { 1.0 } else { fx[i][j] });
    let y = DMatrix::from_fn(fx.len(), n_classes, |i, c| if train.labels()[i] == c { 1.0 } else { -1.0 });
    let gram = x.transpose() * &x + DMatrix::identity(p, p) * 1e-8;
    let w = gram.lu().solve(&(x.transpose() * y)).expect("normal equations solvable");
    let ft = probe_features(test);
    let correct = ft
        .iter()
        .zip(test.labels())
        .filter(|(f, &label)| {
            let mut row = f.to_vec();
            row.push(1.0);
            let v = DVector::from_vec(row);
            let scores: Vec<f64> = (0..n_classes).map(|c| w.column(c).dot(&v)).collect();
            first_argmax(&scores) == label
        })
        .count();
    correct as f64 / test.n_trials() as f64
}

/// Benchmark-sized stream parameters.
pub fn benchmark_stream() -> StreamConfig {
    StreamConfig {
        n_subjects: 5,
        n_classes: 4,
        n_channels: 8,
        n_samples: 32,
        trials_per_class: 30,
        class_separation: 3.0,
        subject_shift: 1.5,
        noise_sigma: 0.5,
        seed: 0,
        test_fraction: 0.2,
    }
}

pub fn benchmark_arch(seed: u64) -> ArchConfig {
    ArchConfig {
        embed_dim: 16,
        temporal_filters: 6,
        temporal_kernel: 7,
        pool_factor: 2,
        mlp_hidden: 32,
        dropout_rate: 0.25,
        seed,
        ..ArchConfig::new(8, 32, 4)
    }
}

/// A small stream and network for fast pipeline tests.
pub fn small_stream(n_subjects: usize, shift: f64) -> StreamConfig {
    StreamConfig {
        n_subjects,
        n_classes: 3,
        n_channels: 4,
        n_samples: 16,
        trials_per_class: 10,
        class_separation: 3.0,
        subject_shift: shift,
        noise_sigma: 0.5,
        seed: 7,
        test_fraction: 0.2,
    }
}

pub fn small_arch(seed: u64) -> ArchConfig {
    ArchConfig {
        embed_dim: 6,
        temporal_filters: 3,
        temporal_kernel: 5,
        pool_factor: 2,
        mlp_hidden: 8,
        seed,
        ..ArchConfig::new(4, 16, 3)
    }
}

/// TOML for a small experiment; `data` is the body of the `[data]` table.
pub fn small_config_toml(methods: &[&str], seeds: &[u64], data: &str) -> String {
    let methods: Vec<String> = methods.iter().map(|m| format!("\"{m}\"")).collect();
    let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
    format!(
        "methods = [{}]\nseeds = [{}]\n\n{data}\n\n[arch]\nembed_dim = 6\ntemporal_filters = 3\ntemporal_kernel = 5\npool_factor = 2\nmlp_hidden = 8\n\n[train]\nepochs = 4\nlearning_rate = 0.01\nbatch_size = 8\nfisher_samples = 10\n",
        methods.join(", "),
        seeds.join(", ")
    )
}

pub const SMALL_SYNTHETIC: &str = "[data.synthetic]\nn_subjects = 3\nn_classes = 3\nn_channels = 4\nn_samples = 16\ntrials_per_class = 10\nsubject_shift = 1.5\nseed = 7";

/// The shipped benchmark configuration.
pub fn benchmark_config() -> pronecl::cli::ExperimentConfig {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/benchmark.toml");
    pronecl::cli::ExperimentConfig::load(&path).expect("benchmark config loads")
}

/// Every (method, seed) run of `cfg` in the library, sequentially, grouped by
/// method in config order.
pub fn run_all(
    cfg: &pronecl::cli::ExperimentConfig,
) -> Vec<(pronecl::losses::Method, Vec<pronecl::trainer::ContinualRunResult>)> {
    let stream = cfg.data.load_stream().expect("stream loads");
    let first = &stream[0];
    let arch = cfg.arch.clone().with_dims(first.train.n_channels(), first.train.n_samples(), first.num_classes);
    cfg.methods
        .iter()
        .map(|&m| {
            let spec = cfg.spec(m).unwrap();
            let runs = cfg
                .seeds
                .iter()
                .map(|&seed| {
                    let arch = ArchConfig { seed, ..arch.clone() };
                    let train = pronecl::trainer::TrainConfig { seed, ..cfg.train.clone() };
                    pronecl::trainer::run_continual(m, stream.clone(), &arch, &train, &spec).unwrap()
                })
                .collect();
            (m, runs)
        })
        .collect()
}
