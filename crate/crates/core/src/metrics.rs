//! Accuracy matrices, backward transfer, average accuracy and aggregation.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datastream::SubjectDataset;
use crate::error::{Error, Result};
use crate::losses::Method;
use crate::netcore::{encode, DropoutMode, ModelParams};
use crate::prototypes::PrototypeMemory;
use crate::trainer::ContinualRunResult;

/// Lower-triangular `a[j][i]`: accuracy on subject `i` after training on
/// subject `j` (0-based, `i <= j`). Row `j` holds `j + 1` slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    n: usize,
    rows: Vec<Vec<Option<f64>>>,
}

impl AccuracyMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            rows: (0..n).map(|j| vec![None; j + 1]).collect(),
        }
    }

    /// Build from complete rows; row `j` must have `j + 1` entries.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new(rows.len());
        for (j, row) in rows.into_iter().enumerate() {
            if row.len() != j + 1 {
                return Err(Error::Shape(format!("row {j} has {} entries, expected {}", row.len(), j + 1)));
            }
            for (i, v) in row.into_iter().enumerate() {
                m.set(j, i, v)?;
            }
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn set(&mut self, j: usize, i: usize, value: f64) -> Result<()> {
        if j >= self.n || i > j {
            return Err(Error::Shape(format!("entry ({j}, {i}) outside the lower triangle of a {0}x{0} matrix", self.n)));
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Argument(format!("accuracy {value} outside [0, 1]")));
        }
        self.rows[j][i] = Some(value);
        Ok(())
    }

    /// `None` above the diagonal or when not yet filled.
    pub fn get(&self, j: usize, i: usize) -> Option<f64> {
        self.rows.get(j).and_then(|r| r.get(i)).copied().flatten()
    }

    pub fn filled(&self) -> usize {
        self.rows.iter().flatten().filter(|v| v.is_some()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.filled() == self.n * (self.n + 1) / 2
    }

    /// Row `j` as plain values; errors if any slot is missing.
    pub fn row(&self, j: usize) -> Result<Vec<f64>> {
        let r = self.rows.get(j).ok_or_else(|| Error::Shape(format!("no row {j}")))?;
        r.iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| Error::UndefinedMetric(format!("entry ({j}, {i}) is missing"))))
            .collect()
    }
}

/// `1/(N-1) * sum_{i<N} (a[N][i] - a[i][i])`.
pub fn bwt(m: &AccuracyMatrix) -> Result<f64> {
    let n = m.n();
    if n < 2 {
        return Err(Error::UndefinedMetric(format!("BWT needs at least 2 subjects, got {n}")));
    }
    let last = m.row(n - 1)?;
    let mut sum = 0.0;
    for (i, a_last) in last.iter().enumerate().take(n - 1) {
        let diag = m
            .get(i, i)
            .ok_or_else(|| Error::UndefinedMetric(format!("diagonal entry {i} is missing")))?;
        sum += a_last - diag;
    }
    Ok(sum / (n - 1) as f64)
}

/// Mean of the last row.
pub fn avg_acc(m: &AccuracyMatrix) -> Result<f64> {
    if m.n() == 0 {
        return Err(Error::UndefinedMetric("empty accuracy matrix".into()));
    }
    if !m.is_complete() {
        return Err(Error::UndefinedMetric(format!(
            "accuracy matrix has {} of {} entries",
            m.filled(),
            m.n() * (m.n() + 1) / 2
        )));
    }
    let last = m.row(m.n() - 1)?;
    Ok(last.iter().sum::<f64>() / last.len() as f64)
}

/// Mean and sample standard deviation (`n - 1`; 0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Per-method summary over runs. BWT fields are absent for single-subject streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub method: Method,
    pub runs: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub bwt_mean: Option<f64>,
    pub bwt_std: Option<f64>,
}

pub fn aggregate(runs: &[ContinualRunResult]) -> Result<AggregateStats> {
    let first = runs
        .first()
        .ok_or_else(|| Error::Argument("aggregate needs at least one run".into()))?;
    let method = first.method;
    let n = first.acc_matrix.n();
    let mut accs = Vec::with_capacity(runs.len());
    let mut bwts = Vec::with_capacity(runs.len());
    for r in runs {
        if r.method != method {
            return Err(Error::Argument(format!("cannot aggregate {} runs with {} runs", method, r.method)));
        }
        if r.acc_matrix.n() != n {
            return Err(Error::Shape(format!("runs cover {n} and {} subjects", r.acc_matrix.n())));
        }
        accs.push(avg_acc(&r.acc_matrix)?);
        if n >= 2 {
            bwts.push(bwt(&r.acc_matrix)?);
        }
    }
    let (acc_mean, acc_std) = mean_std(&accs);
    let (bwt_mean, bwt_std) = if n >= 2 {
        let (m, s) = mean_std(&bwts);
        (Some(m), Some(s))
    } else {
        (None, None)
    };
    Ok(AggregateStats {
        method,
        runs: runs.len(),
        acc_mean,
        acc_std,
        bwt_mean,
        bwt_std,
    })
}

/// Embedding CSV text: one row per test trial, then one row per initialized
/// prototype with subject `-1`.
pub fn embeddings_csv(model: &ModelParams, stream: &[SubjectDataset], memory: Option<&PrototypeMemory>) -> Result<String> {
    let d = model.arch().embed_dim;
    let mut out = String::from("subject,label,is_prototype");
    for k in 0..d {
        write!(out, ",e{k}").unwrap();
    }
    out.push('\n');
    let push_row = |out: &mut String, subject: i64, label: usize, proto: bool, row: &[f64]| {
        write!(out, "{subject},{label},{}", u8::from(proto)).unwrap();
        for v in row {
            write!(out, ",{v:.16e}").unwrap();
        }
        out.push('\n');
    };
    for ds in stream {
        let emb = encode(model, &ds.test, DropoutMode::Off)?;
        for t in 0..emb.n() {
            push_row(&mut out, ds.subject_id as i64, emb.labels()[t], false, emb.row(t));
        }
    }
    if let Some(mem) = memory {
        if mem.dim() != d {
            return Err(Error::Shape(format!("memory dim {} vs embedding dim {d}", mem.dim())));
        }
        for c in 0..mem.n_classes() {
            if mem.initialized()[c] {
                push_row(&mut out, -1, c, true, mem.row(c));
            }
        }
    }
    Ok(out)
}

pub fn export_embeddings(
    model: &ModelParams,
    stream: &[SubjectDataset],
    memory: Option<&PrototypeMemory>,
    path: &Path,
) -> Result<()> {
    let text = embeddings_csv(model, stream, memory)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
