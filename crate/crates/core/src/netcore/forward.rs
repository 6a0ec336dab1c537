use rand::Rng as _;

use super::*;
use crate::datastream::TrialTensor;
use crate::losses::{align_loss, ce_loss, ewc_penalty, kd_loss, proto_loss, total_loss, FisherDiag, LossBreakdown, LossParts, LossSpec};
use crate::prototypes::{EmbeddingBatch, ProtoMatrix};

/// Dropout behaviour of a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DropoutMode {
    #[default]
    Off,
    /// Masks drawn from this seed; trial `i` of the batch uses its own stream,
    /// so a pass is reproducible for fixed (seed, batch).
    Seeded(u64),
}

/// Whatever the active loss terms need beyond the batch itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct AuxInputs<'a> {
    /// Prototype targets for the consistency term.
    pub prototypes: Option<&'a ProtoMatrix>,
    /// Global prototype centroid for the alignment term.
    pub centroid: Option<&'a [f64]>,
    /// Teacher embeddings of the same batch, for distillation.
    pub teacher: Option<&'a EmbeddingBatch>,
    pub fisher: Option<&'a FisherDiag>,
    pub dropout: DropoutMode,
}

#[inline]
fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Intermediate values of one trial kept for the backward pass.
struct TrialCache {
    /// Temporal conv output `[F x ch x L1]`.
    h1: Vec<f64>,
    /// Spatial conv pre-activation `[F x L1]`.
    h2: Vec<f64>,
    /// Pooled (and dropped-out) features `[F x L2]`.
    feat: Vec<f64>,
    /// Dropout multipliers (`0` or `1/(1-p)`), empty when dropout is off.
    mask: Vec<f64>,
}

struct EncoderOut {
    embeddings: Vec<f64>,
    caches: Vec<TrialCache>,
}

fn check_batch(arch: &ArchConfig, batch: &TrialTensor) -> Result<()> {
    if batch.n_channels() != arch.n_channels || batch.n_samples() != arch.n_samples {
        return Err(Error::Shape(format!(
            "batch is {} channels x {} samples, model expects {} x {}",
            batch.n_channels(),
            batch.n_samples(),
            arch.n_channels,
            arch.n_samples
        )));
    }
    if let Some(&l) = batch.labels().iter().find(|&&l| l >= arch.n_classes) {
        return Err(Error::Shape(format!(
            "label {l} out of range for a {}-class model",
            arch.n_classes
        )));
    }
    Ok(())
}

fn encode_trial(model: &ModelParams, x: &[f64], mask_seed: Option<u64>, keep_cache: bool, z: &mut [f64]) -> Option<TrialCache> {
    let a = &model.arch;
    let (f_n, k_n, ch_n) = (a.temporal_filters, a.temporal_kernel, a.n_channels);
    let (ns, l1, pool, l2) = (a.n_samples, a.conv_len(), a.pool_factor, a.pooled_len());
    let tw = model.array(TEMPORAL_W);
    let tb = model.array(TEMPORAL_B);
    let sw = model.array(SPATIAL_W);
    let sb = model.array(SPATIAL_B);

    let mut h1 = vec![0.0; f_n * ch_n * l1];
    for f in 0..f_n {
        let w = &tw[f * k_n..(f + 1) * k_n];
        for c in 0..ch_n {
            let xs = &x[c * ns..(c + 1) * ns];
            let out = &mut h1[(f * ch_n + c) * l1..(f * ch_n + c + 1) * l1];
            for (t, o) in out.iter_mut().enumerate() {
                let mut acc = tb[f];
                for (wk, xv) in w.iter().zip(&xs[t..t + k_n]) {
                    acc += wk * xv;
                }
                *o = acc;
            }
        }
    }

    let mut h2 = vec![0.0; f_n * l1];
    for s in 0..f_n {
        let out = &mut h2[s * l1..(s + 1) * l1];
        out.iter_mut().for_each(|v| *v = sb[s]);
        for f in 0..f_n {
            for c in 0..ch_n {
                let w = sw[(s * f_n + f) * ch_n + c];
                let src = &h1[(f * ch_n + c) * l1..(f * ch_n + c + 1) * l1];
                for (o, v) in out.iter_mut().zip(src) {
                    *o += w * v;
                }
            }
        }
    }

    let mut feat = vec![0.0; f_n * l2];
    for s in 0..f_n {
        for j in 0..l2 {
            let window = &h2[s * l1 + j * pool..s * l1 + (j + 1) * pool];
            feat[s * l2 + j] = window.iter().map(|&v| elu(v)).sum::<f64>() / pool as f64;
        }
    }

    let mut mask = Vec::new();
    if let Some(seed) = mask_seed {
        if a.dropout_rate > 0.0 {
            let mut rng = rng_from(seed);
            let keep = 1.0 / (1.0 - a.dropout_rate);
            mask = (0..feat.len())
                .map(|_| if rng.random::<f64>() < a.dropout_rate { 0.0 } else { keep })
                .collect();
            feat.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        }
    }

    let pw = model.array(PROJ_W);
    let pb = model.array(PROJ_B);
    let flat = feat.len();
    for (o, zo) in z.iter_mut().enumerate() {
        let row = &pw[o * flat..(o + 1) * flat];
        *zo = pb[o] + row.iter().zip(&feat).map(|(w, v)| w * v).sum::<f64>();
    }

    keep_cache.then_some(TrialCache { h1, h2, feat, mask })
}

fn trial_mask_seed(mode: DropoutMode, i: usize) -> Option<u64> {
    match mode {
        DropoutMode::Off => None,
        DropoutMode::Seeded(seed) => Some(derive(seed, &[i as u64])),
    }
}

fn run_encoder(model: &ModelParams, batch: &TrialTensor, mode: DropoutMode, keep_cache: bool) -> EncoderOut {
    let d = model.arch.embed_dim;
    let n = batch.n_trials();
    let mut embeddings = vec![0.0; n * d];
    let mut caches = Vec::with_capacity(if keep_cache { n } else { 0 });
    for i in 0..n {
        let cache = encode_trial(
            model,
            batch.trial(i),
            trial_mask_seed(mode, i),
            keep_cache,
            &mut embeddings[i * d..(i + 1) * d],
        );
        if let Some(c) = cache {
            caches.push(c);
        }
    }
    EncoderOut { embeddings, caches }
}

/// Embeddings `Z = E(X)` for every trial of the batch.
pub fn encode(model: &ModelParams, batch: &TrialTensor, mode: DropoutMode) -> Result<EmbeddingBatch> {
    check_batch(&model.arch, batch)?;
    let out = run_encoder(model, batch, mode, false);
    EmbeddingBatch::new(model.arch.embed_dim, out.embeddings, batch.labels().to_vec())
}

impl FrozenModel {
    /// Teacher embeddings; never uses dropout.
    pub fn encode(&self, batch: &TrialTensor) -> Result<EmbeddingBatch> {
        encode(self.params(), batch, DropoutMode::Off)
    }

    pub fn classify(&self, emb: &EmbeddingBatch) -> Result<Vec<f64>> {
        classify(self.params(), emb)
    }
}

struct MlpCache {
    u1: Vec<f64>,
    v1: Vec<f64>,
    u2: Vec<f64>,
    v2: Vec<f64>,
}

fn dense(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, y) in out.iter_mut().enumerate() {
        *y = b[o] + w[o * n_in..(o + 1) * n_in].iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
    }
}

fn run_mlp(model: &ModelParams, z: &[f64], n: usize) -> (Vec<f64>, MlpCache) {
    let a = &model.arch;
    let (d, h, c) = (a.embed_dim, a.mlp_hidden, a.n_classes);
    let mut cache = MlpCache {
        u1: vec![0.0; n * h],
        v1: vec![0.0; n * h],
        u2: vec![0.0; n * h],
        v2: vec![0.0; n * h],
    };
    let mut logits = vec![0.0; n * c];
    for i in 0..n {
        let zi = &z[i * d..(i + 1) * d];
        dense(model.array(FC1_W), model.array(FC1_B), zi, &mut cache.u1[i * h..(i + 1) * h]);
        for j in i * h..(i + 1) * h {
            cache.v1[j] = elu(cache.u1[j]);
        }
        dense(model.array(FC2_W), model.array(FC2_B), &cache.v1[i * h..(i + 1) * h], &mut cache.u2[i * h..(i + 1) * h]);
        for j in i * h..(i + 1) * h {
            cache.v2[j] = elu(cache.u2[j]);
        }
        dense(model.array(OUT_W), model.array(OUT_B), &cache.v2[i * h..(i + 1) * h], &mut logits[i * c..(i + 1) * c]);
    }
    (logits, cache)
}

/// Row-major `[n x C]` logits of the classifier MLP.
pub fn classify(model: &ModelParams, emb: &EmbeddingBatch) -> Result<Vec<f64>> {
    if emb.dim() != model.arch.embed_dim {
        return Err(Error::Shape(format!(
            "embedding width {} but the classifier expects {}",
            emb.dim(),
            model.arch.embed_dim
        )));
    }
    Ok(run_mlp(model, emb.values(), emb.n()).0)
}

/// Backprop through `y = W x + b`: accumulates weight/bias grads and writes
/// `dx` (overwritten).
fn dense_backward(w: &[f64], x: &[f64], dy: &[f64], gw: &mut [f64], gb: &mut [f64], dx: &mut [f64]) {
    let n_in = x.len();
    dx.iter_mut().for_each(|v| *v = 0.0);
    for (o, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        gb[o] += g;
        let row = &w[o * n_in..(o + 1) * n_in];
        let grow = &mut gw[o * n_in..(o + 1) * n_in];
        for j in 0..n_in {
            grow[j] += g * x[j];
            dx[j] += g * row[j];
        }
    }
}

/// Evaluated terms together with the gradients with respect to the logits and
/// the embeddings.
struct TermValues {
    breakdown: LossBreakdown,
    d_logits: Vec<f64>,
    d_emb: Vec<f64>,
    ewc_grad: Option<GradientSet>,
}

fn evaluate_terms(
    model: &ModelParams,
    batch: &TrialTensor,
    emb_values: Vec<f64>,
    logits: &[f64],
    aux: &AuxInputs<'_>,
    spec: &LossSpec,
) -> Result<(TermValues, EmbeddingBatch)> {
    let a = &model.arch;
    let emb = EmbeddingBatch::new(a.embed_dim, emb_values, batch.labels().to_vec())?;
    let (ce, d_logits) = ce_loss(logits, a.n_classes, batch.labels())?;
    let mut d_emb = vec![0.0; emb.values().len()];
    let mut parts = LossParts {
        ce: Some(ce),
        ..LossParts::default()
    };
    let mut add = |g: Vec<f64>, w: f64| d_emb.iter_mut().zip(g).for_each(|(acc, v)| *acc += w * v);
    if spec.uses_pro() {
        let protos = aux.prototypes.ok_or_else(|| Error::config("pro", "prototype targets missing"))?;
        let (v, g) = proto_loss(&emb, protos)?;
        parts.pro = Some(v);
        add(g, spec.lambda_p);
    }
    if spec.uses_align() {
        let centroid = aux.centroid.ok_or_else(|| Error::config("align", "prototype centroid missing"))?;
        let (v, g) = align_loss(&emb, centroid)?;
        parts.align = Some(v);
        add(g, spec.lambda_a);
    }
    if spec.uses_kd() {
        let teacher = aux.teacher.ok_or_else(|| Error::config("kd", "teacher embeddings missing"))?;
        let (v, g) = kd_loss(&emb, teacher)?;
        parts.kd = Some(v);
        add(g, spec.lambda_kd);
    }
    let mut ewc_grad = None;
    if spec.uses_ewc() {
        let fisher = aux.fisher.ok_or_else(|| Error::config("ewc", "Fisher snapshot missing"))?;
        let (v, g) = ewc_penalty(model, fisher)?;
        parts.ewc = Some(v);
        ewc_grad = Some(g);
    }
    let breakdown = total_loss(&parts, spec)?;
    Ok((
        TermValues {
            breakdown,
            d_logits,
            d_emb,
            ewc_grad,
        },
        emb,
    ))
}

/// Objective value only (no gradient). Used by the finite-difference oracle.
pub fn loss_value(model: &ModelParams, batch: &TrialTensor, aux: &AuxInputs<'_>, spec: &LossSpec) -> Result<LossBreakdown> {
    let spec = spec.normalized();
    check_batch(&model.arch, batch)?;
    let enc = run_encoder(model, batch, aux.dropout, false);
    let (logits, _) = run_mlp(model, &enc.embeddings, batch.n_trials());
    Ok(evaluate_terms(model, batch, enc.embeddings, &logits, aux, &spec)?.0.breakdown)
}

/// Objective terms and the exact gradient of the weighted total with respect
/// to every parameter.
pub fn forward_backward(
    model: &ModelParams,
    batch: &TrialTensor,
    aux: &AuxInputs<'_>,
    spec: &LossSpec,
) -> Result<(LossBreakdown, GradientSet)> {
    let spec = spec.normalized();
    check_batch(&model.arch, batch)?;
    let a = &model.arch;
    let (n, d, h, c) = (batch.n_trials(), a.embed_dim, a.mlp_hidden, a.n_classes);
    let enc = run_encoder(model, batch, aux.dropout, true);
    let (logits, mlp) = run_mlp(model, &enc.embeddings, n);
    let (terms, emb) = evaluate_terms(model, batch, enc.embeddings, &logits, aux, &spec)?;
    let z = emb.values();

    let mut grads = GradientSet::zeros_like(model);
    let mut d_emb = terms.d_emb;
    {
        let g = grads.arrays_mut();
        let (mut dv2, mut dv1, mut dz) = (vec![0.0; h], vec![0.0; h], vec![0.0; d]);
        for i in 0..n {
            let rows = i * h..(i + 1) * h;
            let (gw, rest) = g[OUT_W..].split_at_mut(1);
            dense_backward(
                model.array(OUT_W),
                &mlp.v2[rows.clone()],
                &terms.d_logits[i * c..(i + 1) * c],
                &mut gw[0],
                &mut rest[0],
                &mut dv2,
            );
            let du2: Vec<f64> = dv2.iter().zip(&mlp.u2[rows.clone()]).map(|(g, &u)| g * elu_grad(u)).collect();
            let (gw, rest) = g[FC2_W..].split_at_mut(1);
            dense_backward(model.array(FC2_W), &mlp.v1[rows.clone()], &du2, &mut gw[0], &mut rest[0], &mut dv1);
            let du1: Vec<f64> = dv1.iter().zip(&mlp.u1[rows]).map(|(g, &u)| g * elu_grad(u)).collect();
            let (gw, rest) = g[FC1_W..].split_at_mut(1);
            dense_backward(model.array(FC1_W), &z[i * d..(i + 1) * d], &du1, &mut gw[0], &mut rest[0], &mut dz);
            for (acc, v) in d_emb[i * d..(i + 1) * d].iter_mut().zip(&dz) {
                *acc += v;
            }
        }
    }

    let (f_n, k_n, ch_n) = (a.temporal_filters, a.temporal_kernel, a.n_channels);
    let (ns, l1, pool, l2) = (a.n_samples, a.conv_len(), a.pool_factor, a.pooled_len());
    let inv_pool = 1.0 / pool as f64;
    let sw = model.array(SPATIAL_W);
    let mut d_feat = vec![0.0; f_n * l2];
    let mut d_h2 = vec![0.0; f_n * l1];
    let mut d_h1 = vec![0.0; f_n * ch_n * l1];
    for (i, cache) in enc.caches.iter().enumerate() {
        let dzi = &d_emb[i * d..(i + 1) * d];
        {
            let g = grads.arrays_mut();
            let (gw, rest) = g[PROJ_W..].split_at_mut(1);
            dense_backward(model.array(PROJ_W), &cache.feat, dzi, &mut gw[0], &mut rest[0], &mut d_feat);
        }
        if !cache.mask.is_empty() {
            d_feat.iter_mut().zip(&cache.mask).for_each(|(v, m)| *v *= m);
        }
        // Pool and ELU; truncated tail positions receive no gradient.
        d_h2.iter_mut().for_each(|v| *v = 0.0);
        for s in 0..f_n {
            for j in 0..l2 {
                let gp = d_feat[s * l2 + j] * inv_pool;
                for t in j * pool..(j + 1) * pool {
                    d_h2[s * l1 + t] = gp * elu_grad(cache.h2[s * l1 + t]);
                }
            }
        }
        let g = grads.arrays_mut();
        d_h1.iter_mut().for_each(|v| *v = 0.0);
        for s in 0..f_n {
            let ds = &d_h2[s * l1..(s + 1) * l1];
            g[SPATIAL_B][s] += ds.iter().sum::<f64>();
            for f in 0..f_n {
                for ch in 0..ch_n {
                    let widx = (s * f_n + f) * ch_n + ch;
                    let off = (f * ch_n + ch) * l1;
                    let src = &cache.h1[off..off + l1];
                    g[SPATIAL_W][widx] += ds.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                    let w = sw[widx];
                    for (dst, v) in d_h1[off..off + l1].iter_mut().zip(ds) {
                        *dst += w * v;
                    }
                }
            }
        }
        let x = batch.trial(i);
        for f in 0..f_n {
            for ch in 0..ch_n {
                let off = (f * ch_n + ch) * l1;
                let dh = &d_h1[off..off + l1];
                g[TEMPORAL_B][f] += dh.iter().sum::<f64>();
                let xs = &x[ch * ns..(ch + 1) * ns];
                for k in 0..k_n {
                    g[TEMPORAL_W][f * k_n + k] += dh.iter().zip(&xs[k..k + l1]).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
    }

    if let Some(eg) = terms.ewc_grad {
        grads.add_scaled(&eg, spec.lambda_ewc);
    }
    Ok((terms.breakdown, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::softmax;
    use crate::rng::rng_from;
    use rand_distr::StandardNormal;

    fn batch(arch: &ArchConfig, n: usize, seed: u64) -> TrialTensor {
        let mut rng = rng_from(seed);
        let len = n * arch.n_channels * arch.n_samples;
        let data = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        let labels = (0..n).map(|i| i % arch.n_classes).collect();
        TrialTensor::new(arch.n_channels, arch.n_samples, data, labels, vec![0; n]).unwrap()
    }

    #[test]
    fn encode_shape_and_determinism() {
        let arch = ArchConfig::tiny(1);
        let model = init_model(&arch).unwrap();
        let b = batch(&arch, 7, 1);
        let e1 = encode(&model, &b, DropoutMode::Off).unwrap();
        assert_eq!((e1.n(), e1.dim()), (7, arch.embed_dim));
        assert_eq!(e1, encode(&model, &b, DropoutMode::Off).unwrap());
        let t1 = encode(&model, &b, DropoutMode::Seeded(4)).unwrap();
        assert_eq!(t1, encode(&model, &b, DropoutMode::Seeded(4)).unwrap());
        assert_ne!(t1, e1);
    }

    #[test]
    fn zero_input_gives_zero_embedding() {
        let arch = ArchConfig::tiny(1);
        let model = init_model(&arch).unwrap();
        let n = 3;
        let zeros = TrialTensor::new(arch.n_channels, arch.n_samples, vec![0.0; n * 48], vec![0, 1, 2], vec![0; 3]).unwrap();
        let e = encode(&model, &zeros, DropoutMode::Off).unwrap();
        assert!(e.values().iter().all(|&v| v == 0.0));
        let logits = classify(&model, &EmbeddingBatch::new(arch.embed_dim, vec![0.0; 5 * arch.embed_dim], vec![0; 5]).unwrap()).unwrap();
        assert_eq!(logits.len(), 5 * arch.n_classes);
        assert!(logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors() {
        let arch = ArchConfig::tiny(1);
        let model = init_model(&arch).unwrap();
        let wrong = TrialTensor::new(2, 16, vec![0.0; 32], vec![0], vec![0]).unwrap();
        assert!(matches!(encode(&model, &wrong, DropoutMode::Off), Err(Error::Shape(_))));
        let emb = EmbeddingBatch::new(3, vec![0.0; 3], vec![0]).unwrap();
        assert!(matches!(classify(&model, &emb), Err(Error::Shape(_))));
    }

    #[test]
    fn logits_softmax_normalizes() {
        let arch = ArchConfig::tiny(1);
        let model = init_model(&arch).unwrap();
        let e = encode(&model, &batch(&arch, 5, 2), DropoutMode::Off).unwrap();
        let logits = classify(&model, &e).unwrap();
        for row in softmax(&logits, arch.n_classes).chunks(arch.n_classes) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_weights_give_ce_only_total() {
        let arch = ArchConfig::tiny(1);
        let model = init_model(&arch).unwrap();
        let b = batch(&arch, 6, 3);
        let spec = LossSpec::pronecl(0.0, 0.0, 0.0);
        let (br, _) = forward_backward(&model, &b, &AuxInputs::default(), &spec).unwrap();
        assert_eq!(br.total, br.ce);
    }

    #[test]
    fn missing_aux_names_the_term() {
        let arch = ArchConfig::tiny(1);
        let model = init_model(&arch).unwrap();
        let b = batch(&arch, 4, 3);
        let err = forward_backward(&model, &b, &AuxInputs::default(), &LossSpec::pronecl(0.0, 0.0, 1.0)).unwrap_err();
        assert!(matches!(err, Error::Config { field, .. } if field == "kd"));
        let err = forward_backward(&model, &b, &AuxInputs::default(), &LossSpec::ewc(1.0)).unwrap_err();
        assert!(matches!(err, Error::Config { field, .. } if field == "ewc"));
    }
}
