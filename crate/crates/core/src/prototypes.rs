//! Class prototypes and the global EMA prototype memory.
//!
//! After training on subject `k`, the per-class mean embedding `P_c^k` is
//! blended into the memory as `P_c <- alpha * P_c + (1 - alpha) * P_c^k`; a
//! class seen for the first time is copied in directly.

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{FrozenModel, ModelParams};

/// `[n x d]` embeddings with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    dim: usize,
    values: Vec<f64>,
    labels: Vec<usize>,
}

impl EmbeddingBatch {
    pub fn new(dim: usize, values: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("embedding width must be >= 1".into()));
        }
        if values.len() != dim * labels.len() {
            return Err(Error::Shape(format!(
                "{} values for {} rows of width {dim}",
                values.len(),
                labels.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite embedding value".into()));
        }
        Ok(Self { dim, values, labels })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Column means over all rows.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for i in 0..self.n() {
            for (acc, v) in m.iter_mut().zip(self.row(i)) {
                *acc += v;
            }
        }
        let n = self.n().max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }
}

/// `[C x d]` prototype rows; rows with `present == false` carry no information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtoMatrix {
    pub n_classes: usize,
    pub dim: usize,
    pub rows: Vec<f64>,
    pub present: Vec<bool>,
}

impl ProtoMatrix {
    pub fn row(&self, c: usize) -> &[f64] {
        &self.rows[c * self.dim..(c + 1) * self.dim]
    }
}

/// Per-class arithmetic mean of the embeddings, with the per-class counts;
/// classes without rows are marked absent.
pub fn compute_class_prototypes(emb: &EmbeddingBatch, n_classes: usize) -> Result<(ProtoMatrix, Vec<usize>)> {
    if emb.n() == 0 {
        return Err(Error::Argument("no embeddings to average".into()));
    }
    let d = emb.dim();
    let mut sums = vec![0.0; n_classes * d];
    let mut counts = vec![0usize; n_classes];
    for i in 0..emb.n() {
        let c = emb.labels[i];
        if c >= n_classes {
            return Err(Error::Argument(format!("label {c} out of range for {n_classes} classes")));
        }
        counts[c] += 1;
        for (s, v) in sums[c * d..(c + 1) * d].iter_mut().zip(emb.row(i)) {
            *s += v;
        }
    }
    for c in 0..n_classes {
        if counts[c] > 0 {
            let n = counts[c] as f64;
            sums[c * d..(c + 1) * d].iter_mut().for_each(|v| *v /= n);
        }
    }
    Ok((
        ProtoMatrix {
            n_classes,
            dim: d,
            rows: sums,
            present: counts.iter().map(|&n| n > 0).collect(),
        },
        counts,
    ))
}

pub const PMEM_MAGIC: &[u8; 4] = b"PMEM";
pub const PMEM_VERSION: u32 = 1;

/// Global prototype memory `{P_c}` with its EMA coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeMemory {
    n_classes: usize,
    dim: usize,
    rows: Vec<f64>,
    initialized: Vec<bool>,
    alpha: f64,
}

impl PrototypeMemory {
    pub fn new(n_classes: usize, dim: usize, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::config("alpha", format!("must lie in [0, 1], got {alpha}")));
        }
        if n_classes == 0 || dim == 0 {
            return Err(Error::Shape("prototype memory needs >= 1 class and width >= 1".into()));
        }
        Ok(Self {
            n_classes,
            dim,
            rows: vec![0.0; n_classes * dim],
            initialized: vec![false; n_classes],
            alpha,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn initialized(&self) -> &[bool] {
        &self.initialized
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized.iter().any(|&b| b)
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.rows[c * self.dim..(c + 1) * self.dim]
    }

    /// Number of stored reals; depends only on `C` and `d`.
    pub fn state_len(&self) -> usize {
        self.rows.len() + self.initialized.len() + 1
    }

    pub fn as_matrix(&self) -> ProtoMatrix {
        ProtoMatrix {
            n_classes: self.n_classes,
            dim: self.dim,
            rows: self.rows.clone(),
            present: self.initialized.clone(),
        }
    }

    /// Blend this subject's prototypes into the memory. Classes absent from
    /// `local` are left untouched.
    pub fn ema_update(&mut self, local: &ProtoMatrix) -> Result<()> {
        if local.dim != self.dim || local.n_classes != self.n_classes {
            return Err(Error::Shape(format!(
                "memory is {}x{}, local prototypes are {}x{}",
                self.n_classes, self.dim, local.n_classes, local.dim
            )));
        }
        let d = self.dim;
        let keep_new = 1.0 - self.alpha;
        for c in 0..self.n_classes {
            if !local.present[c] {
                continue;
            }
            let new = local.row(c);
            let old = &mut self.rows[c * d..(c + 1) * d];
            if !self.initialized[c] || self.alpha == 0.0 {
                old.copy_from_slice(new);
                self.initialized[c] = true;
                continue;
            }
            for (p, &l) in old.iter_mut().zip(new) {
                // Written as p + (1-a)(l-p) so l == p is an exact fixed point;
                // the clamp keeps the result inside [p, l] under rounding.
                let blended = *p + keep_new * (l - *p);
                *p = blended.clamp(p.min(l), p.max(l));
            }
        }
        Ok(())
    }

    /// Mean of the initialized prototype rows.
    pub fn centroid(&self) -> Result<Vec<f64>> {
        let n = self.initialized.iter().filter(|&&b| b).count();
        if n == 0 {
            return Err(Error::State("centroid of an empty prototype memory".into()));
        }
        let mut out = vec![0.0; self.dim];
        for c in (0..self.n_classes).filter(|&c| self.initialized[c]) {
            for (o, v) in out.iter_mut().zip(self.row(c)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= n as f64);
        Ok(out)
    }

    pub fn to_pmem_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.n_classes + 8 * self.rows.len());
        out.extend_from_slice(PMEM_MAGIC);
        out.extend_from_slice(&PMEM_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n_classes as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&self.alpha.to_le_bytes());
        out.extend(self.initialized.iter().map(|&b| b as u8));
        for v in &self.rows {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_pmem_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 24 {
            return Err(Error::format(bytes.len() as u64, "PMEM header truncated"));
        }
        if &bytes[..4] != PMEM_MAGIC {
            return Err(Error::format(0, "bad magic, expected \"PMEM\""));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        if u32_at(4) != PMEM_VERSION {
            return Err(Error::format(4, format!("unsupported PMEM version {}", u32_at(4))));
        }
        let (c, d) = (u32_at(8) as usize, u32_at(12) as usize);
        let alpha = f64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
        let expected = 24 + c + 8 * c * d;
        if bytes.len() != expected {
            return Err(Error::format(
                bytes.len().min(expected) as u64,
                format!("PMEM block should be {expected} bytes, found {}", bytes.len()),
            ));
        }
        let mut mem = PrototypeMemory::new(c, d, alpha)?;
        for (i, flag) in bytes[24..24 + c].iter().enumerate() {
            mem.initialized[i] = match flag {
                0 => false,
                1 => true,
                _ => return Err(Error::format(24 + i as u64, "initialization flag must be 0 or 1")),
            };
        }
        for (i, chunk) in bytes[24 + c..].chunks_exact(8).enumerate() {
            mem.rows[i] = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        Ok(mem)
    }

    pub fn to_base64(&self) -> String {
        base64::engine::general_purpose::STANDARD.encode(self.to_pmem_bytes())
    }

    pub fn from_base64(text: &str) -> Result<Self> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(text)
            .map_err(|e| Error::format(0, format!("PMEM block is not valid base64: {e}")))?;
        Self::from_pmem_bytes(&bytes)
    }
}

/// Prototype targets used while training the student. Only the identity
/// projection is implemented: the stored rows are returned unchanged and the
/// distillation term keeps consecutive latent spaces compatible.
pub fn project_prototypes(
    mem: &PrototypeMemory,
    _teacher: &FrozenModel,
    _student: &ModelParams,
) -> Result<ProtoMatrix> {
    if !mem.is_initialized() {
        return Err(Error::State("prototype memory has no initialized class".into()));
    }
    Ok(mem.as_matrix())
}
