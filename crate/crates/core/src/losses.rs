//! Scalar objectives and their gradients.
//!
//! The training objective is
//! `ce + lambda_p * pro + lambda_a * align + lambda_kd * kd + lambda_ewc * ewc`,
//! where each method switches a subset of the weights on (see [`LossSpec`]).

use serde::{Deserialize, Serialize};

use crate::datastream::TrialTensor;
use crate::error::{Error, Result};
use crate::netcore::{forward_backward, AuxInputs, DropoutMode, GradientSet, ModelParams};
use crate::prototypes::{EmbeddingBatch, ProtoMatrix};
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pronecl,
    Finetune,
    Ewc,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Pronecl => "pronecl",
            Method::Finetune => "finetune",
            Method::Ewc => "ewc",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pronecl" => Ok(Method::Pronecl),
            "finetune" => Ok(Method::Finetune),
            "ewc" => Ok(Method::Ewc),
            other => Err(Error::config("method", format!("unknown method `{other}`"))),
        }
    }
}

fn default_lambda_p() -> f64 {
    0.5
}
fn default_lambda_a() -> f64 {
    0.1
}
fn default_lambda_kd() -> f64 {
    0.3
}
fn default_lambda_ewc() -> f64 {
    100.0
}

/// Raw loss weights as written in a config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    #[serde(default = "default_lambda_p")]
    pub lambda_p: f64,
    #[serde(default = "default_lambda_a")]
    pub lambda_a: f64,
    #[serde(default = "default_lambda_kd")]
    pub lambda_kd: f64,
    #[serde(default = "default_lambda_ewc")]
    pub lambda_ewc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_p: default_lambda_p(),
            lambda_a: default_lambda_a(),
            lambda_kd: default_lambda_kd(),
            lambda_ewc: default_lambda_ewc(),
        }
    }
}

/// Method plus the weights it actually uses. Construct through
/// [`LossSpec::new`], which zeroes the weights a method does not use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub method: Method,
    pub lambda_p: f64,
    pub lambda_a: f64,
    pub lambda_kd: f64,
    pub lambda_ewc: f64,
}

impl LossSpec {
    pub fn new(method: Method, w: LossWeights) -> Result<Self> {
        for (name, v) in [
            ("lambda_p", w.lambda_p),
            ("lambda_a", w.lambda_a),
            ("lambda_kd", w.lambda_kd),
            ("lambda_ewc", w.lambda_ewc),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(Self {
            method,
            lambda_p: w.lambda_p,
            lambda_a: w.lambda_a,
            lambda_kd: w.lambda_kd,
            lambda_ewc: w.lambda_ewc,
        }
        .normalized())
    }

    pub fn finetune() -> Self {
        Self {
            method: Method::Finetune,
            lambda_p: 0.0,
            lambda_a: 0.0,
            lambda_kd: 0.0,
            lambda_ewc: 0.0,
        }
    }

    pub fn pronecl(lambda_p: f64, lambda_a: f64, lambda_kd: f64) -> Self {
        Self {
            method: Method::Pronecl,
            lambda_p,
            lambda_a,
            lambda_kd,
            lambda_ewc: 0.0,
        }
    }

    pub fn ewc(lambda_ewc: f64) -> Self {
        Self {
            lambda_ewc,
            method: Method::Ewc,
            ..Self::finetune()
        }
    }

    /// Copy with the weights forced to zero where the method does not use them.
    pub fn normalized(mut self) -> Self {
        match self.method {
            Method::Finetune => {
                self.lambda_p = 0.0;
                self.lambda_a = 0.0;
                self.lambda_kd = 0.0;
                self.lambda_ewc = 0.0;
            }
            Method::Ewc => {
                self.lambda_p = 0.0;
                self.lambda_a = 0.0;
                self.lambda_kd = 0.0;
            }
            Method::Pronecl => self.lambda_ewc = 0.0,
        }
        self
    }

    /// Same weights with CE as the only active term.
    pub fn ce_only(self) -> Self {
        Self {
            lambda_p: 0.0,
            lambda_a: 0.0,
            lambda_kd: 0.0,
            lambda_ewc: 0.0,
            ..self
        }
    }

    pub fn uses_pro(&self) -> bool {
        self.lambda_p > 0.0
    }
    pub fn uses_align(&self) -> bool {
        self.lambda_a > 0.0
    }
    pub fn uses_kd(&self) -> bool {
        self.lambda_kd > 0.0
    }
    pub fn uses_ewc(&self) -> bool {
        self.lambda_ewc > 0.0
    }
}

/// Every term of one evaluation of the objective. Inactive terms are 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub pro: f64,
    pub align: f64,
    pub kd: f64,
    pub ewc: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Weighted sum recomputed from the individual terms.
    pub fn reconstruct(&self, spec: &LossSpec) -> f64 {
        self.ce
            + spec.lambda_p * self.pro
            + spec.lambda_a * self.align
            + spec.lambda_kd * self.kd
            + spec.lambda_ewc * self.ewc
    }

    pub(crate) fn accumulate(&mut self, other: &LossBreakdown, weight: f64) {
        self.ce += weight * other.ce;
        self.pro += weight * other.pro;
        self.align += weight * other.align;
        self.kd += weight * other.kd;
        self.ewc += weight * other.ewc;
        self.total += weight * other.total;
    }
}

/// Individually computed terms; a term is `None` when it was not evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub ce: Option<f64>,
    pub pro: Option<f64>,
    pub align: Option<f64>,
    pub kd: Option<f64>,
    pub ewc: Option<f64>,
}

/// Weighted total of the active parts.
pub fn total_loss(parts: &LossParts, spec: &LossSpec) -> Result<LossBreakdown> {
    let need = |name: &str, active: bool, v: Option<f64>| -> Result<f64> {
        match (active, v) {
            (true, None) => Err(Error::config(name, "term is active but was not computed")),
            (true, Some(v)) => Ok(v),
            (false, _) => Ok(0.0),
        }
    };
    let mut b = LossBreakdown {
        ce: need("ce", true, parts.ce)?,
        pro: need("pro", spec.uses_pro(), parts.pro)?,
        align: need("align", spec.uses_align(), parts.align)?,
        kd: need("kd", spec.uses_kd(), parts.kd)?,
        ewc: need("ewc", spec.uses_ewc(), parts.ewc)?,
        total: 0.0,
    };
    b.total = b.reconstruct(spec);
    Ok(b)
}

/// Mean cross-entropy of row-major `[n x C]` logits, with the gradient with
/// respect to the logits.
pub fn ce_loss(logits: &[f64], n_classes: usize, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let n = labels.len();
    if n == 0 || logits.len() != n * n_classes {
        return Err(Error::Shape(format!(
            "{} logits for {n} rows of {n_classes} classes",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logit".into()));
    }
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= n_classes {
            return Err(Error::Argument(format!("label {y} out of range for {n_classes} classes")));
        }
        let row = &logits[i * n_classes..(i + 1) * n_classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[y];
        let g = &mut grad[i * n_classes..(i + 1) * n_classes];
        for (gc, v) in g.iter_mut().zip(row) {
            *gc = (v - log_z).exp() / n as f64;
        }
        g[y] -= 1.0 / n as f64;
    }
    Ok((loss / n as f64, grad))
}

/// Row-wise softmax.
pub fn softmax(logits: &[f64], n_classes: usize) -> Vec<f64> {
    let mut out = logits.to_vec();
    for row in out.chunks_mut(n_classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Mean squared distance of each embedding to its class prototype.
pub fn proto_loss(emb: &EmbeddingBatch, protos: &ProtoMatrix) -> Result<(f64, Vec<f64>)> {
    if emb.dim() != protos.dim {
        return Err(Error::Shape(format!(
            "embedding width {} vs prototype width {}",
            emb.dim(),
            protos.dim
        )));
    }
    let n = emb.n();
    if n == 0 {
        return Err(Error::Argument("empty embedding batch".into()));
    }
    let mut grad = vec![0.0; emb.values().len()];
    let mut loss = 0.0;
    for i in 0..n {
        let c = emb.labels()[i];
        if c >= protos.n_classes || !protos.present[c] {
            return Err(Error::State(format!("class {c} has no prototype")));
        }
        let g = &mut grad[i * emb.dim()..(i + 1) * emb.dim()];
        for ((gj, z), p) in g.iter_mut().zip(emb.row(i)).zip(protos.row(c)) {
            let diff = z - p;
            loss += diff * diff;
            *gj = 2.0 * diff / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

/// Squared distance between the batch-mean embedding and the prototype centroid.
pub fn align_loss(emb: &EmbeddingBatch, centroid: &[f64]) -> Result<(f64, Vec<f64>)> {
    if emb.n() == 0 {
        return Err(Error::Argument("align loss of an empty batch".into()));
    }
    if centroid.len() != emb.dim() {
        return Err(Error::Shape(format!(
            "embedding width {} vs centroid width {}",
            emb.dim(),
            centroid.len()
        )));
    }
    let n = emb.n() as f64;
    let diff: Vec<f64> = emb.mean().iter().zip(centroid).map(|(m, c)| m - c).collect();
    let loss = diff.iter().map(|v| v * v).sum();
    let row_grad: Vec<f64> = diff.iter().map(|v| 2.0 * v / n).collect();
    let grad = row_grad.iter().copied().cycle().take(emb.values().len()).collect();
    Ok((loss, grad))
}

/// Feature distillation: mean squared distance between student and teacher rows.
pub fn kd_loss(student: &EmbeddingBatch, teacher: &EmbeddingBatch) -> Result<(f64, Vec<f64>)> {
    if student.dim() != teacher.dim() || student.n() != teacher.n() {
        return Err(Error::Shape(format!(
            "student is {}x{}, teacher is {}x{}",
            student.n(),
            student.dim(),
            teacher.n(),
            teacher.dim()
        )));
    }
    let n = student.n();
    if n == 0 {
        return Err(Error::Argument("empty embedding batch".into()));
    }
    let mut loss = 0.0;
    let grad = student
        .values()
        .iter()
        .zip(teacher.values())
        .map(|(s, t)| {
            let diff = s - t;
            loss += diff * diff;
            2.0 * diff / n as f64
        })
        .collect();
    Ok((loss / n as f64, grad))
}

/// Diagonal Fisher estimate and the parameters it was taken at.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherDiag {
    pub values: GradientSet,
    pub anchor: ModelParams,
}

impl FisherDiag {
    /// Fold a new estimate into a running average over `subjects_so_far`
    /// previous estimates; the anchor moves to the new parameters.
    pub fn merge_running(&mut self, new: FisherDiag, subjects_so_far: usize) {
        let k = subjects_so_far as f64;
        for (a, b) in self.values.arrays_mut().iter_mut().zip(new.values.arrays()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = (k * *x + y) / (k + 1.0);
            }
        }
        self.anchor = new.anchor;
    }

    /// Stored reals (Fisher values plus anchor).
    pub fn state_len(&self) -> usize {
        self.values.len() + self.anchor.len()
    }
}

/// Mean of squared per-sample gradients.
pub fn fisher_from_gradients<I>(grads: I) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut acc: Option<Vec<f64>> = None;
    let mut n = 0usize;
    for g in grads {
        let a = acc.get_or_insert_with(|| vec![0.0; g.len()]);
        if a.len() != g.len() {
            return Err(Error::Shape("per-sample gradients differ in length".into()));
        }
        for (x, y) in a.iter_mut().zip(&g) {
            *x += y * y;
        }
        n += 1;
    }
    let mut acc = acc.ok_or_else(|| Error::Argument("no samples for the Fisher estimate".into()))?;
    acc.iter_mut().for_each(|v| *v /= n as f64);
    Ok(acc)
}

/// Empirical diagonal Fisher: mean over up to `n_samples` trials (sampled
/// without replacement) of the squared gradient of `log p(y | x)` at the
/// observed label. Dropout is off.
pub fn estimate_fisher(
    model: &ModelParams,
    data: &TrialTensor,
    n_samples: usize,
    seed: u64,
) -> Result<FisherDiag> {
    use rand::seq::SliceRandom;
    if n_samples == 0 {
        return Err(Error::Argument("Fisher estimate needs n_samples >= 1".into()));
    }
    let mut order: Vec<usize> = (0..data.n_trials()).collect();
    order.shuffle(&mut rng_from(seed));
    order.truncate(n_samples);
    let spec = LossSpec::finetune();
    let aux = AuxInputs {
        dropout: DropoutMode::Off,
        ..AuxInputs::default()
    };
    let mut per_sample = Vec::with_capacity(order.len());
    for &i in &order {
        let single = data.select(&[i])?;
        let (_, g) = forward_backward(model, &single, &aux, &spec)?;
        per_sample.push(g.flatten());
    }
    let flat = fisher_from_gradients(per_sample)?;
    let mut values = GradientSet::zeros_like(model);
    for (i, v) in flat.into_iter().enumerate() {
        values.set_flat(i, v);
    }
    Ok(FisherDiag {
        values,
        anchor: model.clone(),
    })
}

/// `sum_j F_j (theta_j - anchor_j)^2` and its gradient.
pub fn ewc_penalty(model: &ModelParams, fisher: &FisherDiag) -> Result<(f64, GradientSet)> {
    if !fisher.values.is_congruent(model) || fisher.anchor.arch() != model.arch() {
        return Err(Error::Shape("Fisher snapshot is not congruent with the model".into()));
    }
    let mut grad = GradientSet::zeros_like(model);
    let mut penalty = 0.0;
    for (a, g) in grad.arrays_mut().iter_mut().enumerate() {
        let theta = model.array(a);
        let anchor = fisher.anchor.array(a);
        let f = &fisher.values.arrays()[a];
        for j in 0..g.len() {
            let diff = theta[j] - anchor[j];
            penalty += f[j] * diff * diff;
            g[j] = 2.0 * f[j] * diff;
        }
    }
    Ok((penalty, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{init_model, ArchConfig};
    use crate::rng::rng_from;
    use rand::Rng;

    fn emb(rows: &[&[f64]], labels: &[usize]) -> EmbeddingBatch {
        EmbeddingBatch::new(rows[0].len(), rows.concat(), labels.to_vec()).unwrap()
    }

    #[test]
    fn ce_uniform_logits() {
        let (l, _) = ce_loss(&[0.0; 8], 4, &[0, 3]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!((l - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn ce_saturation_and_two_class_closed_form() {
        let (l, _) = ce_loss(&[1000.0, 0.0, 0.0], 3, &[0]).unwrap();
        assert!(l < 1e-6);
        let (l, _) = ce_loss(&[1.0, 2.0], 2, &[1]).unwrap();
        let closed = (1.0 + (-1f64).exp()).ln();
        assert!((l - closed).abs() < 1e-12);
        assert!((l - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn ce_rejects_bad_input() {
        assert!(matches!(ce_loss(&[f64::NAN, 0.0], 2, &[0]), Err(Error::Numeric(_))));
        assert!(ce_loss(&[0.0, 0.0], 2, &[2]).is_err());
    }

    #[test]
    fn ce_shift_invariance() {
        let mut rng = rng_from(1);
        let logits: Vec<f64> = (0..12).map(|_| rng.random_range(-4.0..4.0)).collect();
        let shifted: Vec<f64> = logits.iter().enumerate().map(|(i, v)| v + (i / 4) as f64 * 37.5).collect();
        let (a, _) = ce_loss(&logits, 4, &[0, 1, 2]).unwrap();
        let (b, _) = ce_loss(&shifted, 4, &[0, 1, 2]).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(&[1e3, -1e3, 0.0, 3.0, 3.0, 3.0], 3);
        for row in p.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn proto_loss_cases() {
        let protos = ProtoMatrix {
            n_classes: 2,
            dim: 2,
            rows: vec![0.0, 0.0, 1.0, 1.0],
            present: vec![true, true],
        };
        let (l, _) = proto_loss(&emb(&[&[0.0, 0.0], &[1.0, 1.0]], &[0, 1]), &protos).unwrap();
        assert_eq!(l, 0.0);
        let (l, _) = proto_loss(&emb(&[&[1.0, 0.0]], &[0]), &protos).unwrap();
        assert_eq!(l, 1.0);
        let missing = ProtoMatrix {
            present: vec![true, false],
            ..protos
        };
        assert!(matches!(
            proto_loss(&emb(&[&[1.0, 0.0]], &[1]), &missing),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn proto_loss_matches_direct_sum() {
        let mut rng = rng_from(2);
        let d = 3;
        let rows: Vec<f64> = (0..9 * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
        let protos = ProtoMatrix {
            n_classes: 3,
            dim: d,
            rows: (0..3 * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            present: vec![true; 3],
        };
        let e = EmbeddingBatch::new(d, rows.clone(), labels.clone()).unwrap();
        let (l, _) = proto_loss(&e, &protos).unwrap();
        let mut direct = 0.0;
        for i in 0..9 {
            for j in 0..d {
                direct += (rows[i * d + j] - protos.rows[labels[i] * d + j]).powi(2);
            }
        }
        assert!((l - direct / 9.0).abs() < 1e-12);
    }

    #[test]
    fn align_loss_cases_and_gradient() {
        let (l, _) = align_loss(&emb(&[&[1.0, 3.0], &[3.0, 1.0]], &[0, 0]), &[2.0, 2.0]).unwrap();
        assert_eq!(l, 0.0);
        let (l, _) = align_loss(&emb(&[&[2.0, 0.0]], &[0]), &[0.0, 0.0]).unwrap();
        assert_eq!(l, 4.0);

        let mut rng = rng_from(3);
        let rows: Vec<f64> = (0..5 * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let centroid = [0.3, -0.2, 1.0];
        let e = EmbeddingBatch::new(3, rows.clone(), vec![0; 5]).unwrap();
        let (_, g) = align_loss(&e, &centroid).unwrap();
        let mean = e.mean();
        let eps = 1e-6;
        for k in 0..rows.len() {
            let expect = 2.0 / 5.0 * (mean[k % 3] - centroid[k % 3]);
            assert!((g[k] - expect).abs() < 1e-12);
            let mut plus = rows.clone();
            plus[k] += eps;
            let mut minus = rows.clone();
            minus[k] -= eps;
            let lp = align_loss(&EmbeddingBatch::new(3, plus, vec![0; 5]).unwrap(), &centroid).unwrap().0;
            let lm = align_loss(&EmbeddingBatch::new(3, minus, vec![0; 5]).unwrap(), &centroid).unwrap().0;
            assert!(((lp - lm) / (2.0 * eps) - g[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn kd_loss_cases() {
        let s = emb(&[&[1.0, 1.0]], &[0]);
        let t = emb(&[&[0.0, 0.0]], &[0]);
        assert_eq!(kd_loss(&s, &s).unwrap().0, 0.0);
        assert_eq!(kd_loss(&s, &t).unwrap().0, 2.0);
        let s2 = emb(&[&[4.5, -1.0]], &[0]);
        let t2 = emb(&[&[3.5, -2.0]], &[0]);
        assert_eq!(kd_loss(&s2, &t2).unwrap().0, 2.0, "translation invariance");
        assert!(kd_loss(&s, &emb(&[&[0.0, 0.0, 0.0]], &[0])).is_err());
    }

    #[test]
    fn total_loss_arithmetic_and_missing_terms() {
        let spec = LossSpec::pronecl(0.5, 0.1, 0.0);
        let parts = LossParts {
            ce: Some(1.0),
            pro: Some(2.0),
            align: Some(3.0),
            ..LossParts::default()
        };
        let b = total_loss(&parts, &spec).unwrap();
        assert!((b.total - 2.3).abs() < 1e-12);
        let zero = total_loss(&parts, &LossSpec::pronecl(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(zero.total, 1.0);
        let missing = LossParts {
            align: None,
            ..parts
        };
        assert!(matches!(total_loss(&missing, &spec), Err(Error::Config { field, .. }) if field == "align"));
    }

    #[test]
    fn total_loss_is_affine_in_each_weight() {
        let mut rng = rng_from(5);
        for _ in 0..50 {
            let parts = LossParts {
                ce: Some(rng.random_range(0.0..3.0)),
                pro: Some(rng.random_range(0.0..3.0)),
                align: Some(rng.random_range(0.0..3.0)),
                kd: Some(rng.random_range(0.0..3.0)),
                ewc: None,
            };
            let base = LossSpec::pronecl(rng.random_range(0.1..1.0), rng.random_range(0.1..1.0), rng.random_range(0.1..1.0));
            let t0 = total_loss(&parts, &base).unwrap().total;
            let t1 = total_loss(&parts, &LossSpec { lambda_p: base.lambda_p * 2.0, ..base }).unwrap().total;
            assert!((t1 - t0 - base.lambda_p * parts.pro.unwrap()).abs() < 1e-12);
            let t2 = total_loss(&parts, &LossSpec { lambda_kd: base.lambda_kd + 1.0, ..base }).unwrap().total;
            assert!((t2 - t0 - parts.kd.unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn spec_normalization() {
        let w = LossWeights::default();
        let f = LossSpec::new(Method::Finetune, w).unwrap();
        assert_eq!((f.lambda_p, f.lambda_a, f.lambda_kd, f.lambda_ewc), (0.0, 0.0, 0.0, 0.0));
        let e = LossSpec::new(Method::Ewc, w).unwrap();
        assert_eq!((e.lambda_p, e.lambda_a, e.lambda_kd), (0.0, 0.0, 0.0));
        assert_eq!(e.lambda_ewc, w.lambda_ewc);
        let p = LossSpec::new(Method::Pronecl, w).unwrap();
        assert_eq!(p.lambda_ewc, 0.0);
        assert!(LossSpec::new(Method::Pronecl, LossWeights { lambda_p: -1.0, ..w }).is_err());
    }

    fn toy_fisher(model: &ModelParams, f: f64) -> FisherDiag {
        let mut values = GradientSet::zeros_like(model);
        values.arrays_mut().iter_mut().for_each(|a| a.iter_mut().for_each(|v| *v = f));
        FisherDiag {
            values,
            anchor: model.clone(),
        }
    }

    #[test]
    fn ewc_penalty_cases() {
        let model = init_model(&ArchConfig::tiny(1)).unwrap();
        let fisher = toy_fisher(&model, 2.0);
        assert_eq!(ewc_penalty(&model, &fisher).unwrap().0, 0.0);

        let mut moved = model.clone();
        let mut fisher = toy_fisher(&model, 0.0);
        fisher.values.set_flat(7, 2.0);
        moved.set_flat(7, model.get_flat(7) + 3.0);
        let (p, g) = ewc_penalty(&moved, &fisher).unwrap();
        assert!((p - 18.0).abs() < 1e-12);
        assert!((g.get_flat(7) - 12.0).abs() < 1e-12);
    }

    #[test]
    fn ewc_gradient_matches_finite_differences() {
        let model = init_model(&ArchConfig::tiny(1)).unwrap();
        let mut rng = rng_from(6);
        let mut fisher = toy_fisher(&model, 0.0);
        for i in 0..model.len() {
            fisher.values.set_flat(i, rng.random_range(0.0..2.0));
        }
        let mut theta = model.clone();
        for i in 0..theta.len() {
            theta.set_flat(i, model.get_flat(i) + rng.random_range(-0.5..0.5));
        }
        let (_, g) = ewc_penalty(&theta, &fisher).unwrap();
        let eps = 1e-5;
        for i in (0..theta.len()).step_by(17) {
            let mut p = theta.clone();
            p.set_flat(i, theta.get_flat(i) + eps);
            let mut m = theta.clone();
            m.set_flat(i, theta.get_flat(i) - eps);
            let fd = (ewc_penalty(&p, &fisher).unwrap().0 - ewc_penalty(&m, &fisher).unwrap().0) / (2.0 * eps);
            assert!((fd - g.get_flat(i)).abs() < 1e-8, "{i}: {fd} vs {}", g.get_flat(i));
        }
    }

    #[test]
    fn running_fisher_average() {
        let model = init_model(&ArchConfig::tiny(1)).unwrap();
        let mut acc = toy_fisher(&model, 1.0);
        acc.merge_running(toy_fisher(&model, 4.0), 1);
        assert!(acc.values.flatten().iter().all(|&v| (v - 2.5).abs() < 1e-15));
        acc.merge_running(toy_fisher(&model, 4.0), 2);
        assert!(acc.values.flatten().iter().all(|&v| (v - 3.0).abs() < 1e-15));
    }
}
