//! DataInf influence scoring restricted to the embedding and output layers.
//!
//! Per layer `l` with validation gradient `v_l` and training gradients `g_li`:
//!
//! ```text
//! λ_l  = m · (n·d_l)⁻¹ · Σ_i ‖g_li‖²          (m = 0.1 by default)
//! c_li = v_lᵀ g_li / (λ_l + ‖g_li‖²)
//! r_l  = Σ_i (v_l − c_li·g_li) / (n·λ_l)
//! ```
//!
//! and a query sample with gradients `g_k` scores `Σ_l r_lᵀ g_lk`. This is the
//! negated influence derivative, so a higher score means upweighting the
//! sample lowers validation loss.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::corpus::{Corpus, Sample};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::proxylm::{GradientBundle, Layer, ModelParams};

pub const DEFAULT_LAMBDA_MULTIPLIER: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceRecord {
    pub sample_id: String,
    pub checkpoint_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointInfluence {
    pub sample_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub layer: Layer,
    pub v: Vec<f64>,
    pub lambda: f64,
    pub r: Vec<f64>,
}

impl LayerState {
    pub fn dim(&self) -> usize {
        self.v.len()
    }
}

/// Immutable per-layer DataInf state for one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerContext {
    pub layers: Vec<LayerState>,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean exported-layer gradient over the validation samples.
pub fn validation_gradient(params: &ModelParams, validation: &[Sample], exec: Exec) -> Result<GradientBundle> {
    if validation.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let grads = params.batch_layer_gradients(validation, exec)?;
    Ok(mean_bundle(&grads, params.vocab(), params.dim(), exec))
}

pub(crate) fn mean_bundle(grads: &[GradientBundle], vocab: usize, dim: usize, exec: Exec) -> GradientBundle {
    let q = grads.len() as f64;
    let mut out = GradientBundle::zeros(vocab, dim);
    for layer in Layer::EXPORTED {
        let len = out.layer(layer).len();
        let sum = exec.sum_vectors(grads.len(), len, |i, acc| {
            for (a, g) in acc.iter_mut().zip(grads[i].layer(layer)) {
                *a += g;
            }
        });
        *out.layer_mut(layer) = sum.into_iter().map(|s| s / q).collect();
    }
    out
}

/// `λ_l = multiplier · (n·d_l)⁻¹ · Σ_i ‖g_li‖²`.
pub fn lambda_l<'a, I>(training_gradients: I, d_l: usize, n: usize, multiplier: f64) -> f64
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let sq: f64 = training_gradients.into_iter().map(|g| dot(g, g)).sum();
    multiplier * sq / (n as f64 * d_l as f64)
}

impl LayerContext {
    /// Builds `v_l`, `λ_l` and `r_l` for both exported layers.
    pub fn build(v: &GradientBundle, train: &[GradientBundle], multiplier: f64, exec: Exec) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("training gradients"));
        }
        let n = train.len();
        let mut layers = Vec::with_capacity(2);
        for layer in Layer::EXPORTED {
            let v_l = v.layer(layer);
            let d_l = v_l.len();
            if let Some(bad) = train.iter().find(|g| g.layer(layer).len() != d_l) {
                return Err(Error::DimensionMismatch {
                    expected: d_l,
                    actual: bad.layer(layer).len(),
                });
            }
            let sq_norms = exec.map(train, |g| dot(g.layer(layer), g.layer(layer)));
            let lambda = multiplier * sq_norms.iter().sum::<f64>() / (n as f64 * d_l as f64);
            if !(lambda > 0.0) {
                return Err(Error::DegenerateLayer { layer: layer.index() });
            }
            let coeffs: Vec<f64> = exec.map_range(n, |i| dot(v_l, train[i].layer(layer)) / (lambda + sq_norms[i]));
            let denom = n as f64 * lambda;
            let r = exec.sum_vectors(n, d_l, |i, acc| {
                let (c, g) = (coeffs[i], train[i].layer(layer));
                for k in 0..d_l {
                    acc[k] += (v_l[k] - c * g[k]) / denom;
                }
            });
            if r.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("inverse-HVP estimate"));
            }
            layers.push(LayerState {
                layer,
                v: v_l.to_vec(),
                lambda,
                r,
            });
        }
        Ok(LayerContext { layers })
    }

    pub fn lambda(&self, layer: Layer) -> f64 {
        self.layers.iter().find(|s| s.layer == layer).map_or(0.0, |s| s.lambda)
    }

    pub fn r(&self, layer: Layer) -> &[f64] {
        self.layers.iter().find(|s| s.layer == layer).map_or(&[], |s| &s.r)
    }
}

/// Gradients of every corpus sample plus the DataInf context of one
/// checkpoint against one validation set.
pub fn datainf_context(
    params: &ModelParams,
    validation: &[Sample],
    corpus: &Corpus,
    multiplier: f64,
    exec: Exec,
) -> Result<(LayerContext, Vec<GradientBundle>)> {
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let v = validation_gradient(params, validation, exec)?;
    let train = params.batch_layer_gradients(corpus.samples(), exec)?;
    let ctx = LayerContext::build(&v, &train, multiplier, exec)?;
    Ok((ctx, train))
}

/// Exported score `Σ_l r_lᵀ g_l`; higher is more beneficial.
pub fn influence_score(ctx: &LayerContext, sample_gradients: &GradientBundle) -> Result<f64> {
    let mut score = 0.0;
    for state in &ctx.layers {
        let g = sample_gradients.layer(state.layer);
        if g.len() != state.r.len() {
            return Err(Error::DimensionMismatch {
                expected: state.r.len(),
                actual: g.len(),
            });
        }
        score += dot(&state.r, g);
    }
    Ok(score)
}

pub fn score_all(ctx: &LayerContext, grads: &[GradientBundle], exec: Exec) -> Result<Vec<f64>> {
    exec.map(grads, |g| influence_score(ctx, g)).into_iter().collect()
}

/// Scores every corpus sample under one checkpoint, in corpus order.
pub fn score_checkpoint(
    params: &ModelParams,
    validation: &[Sample],
    corpus: &Corpus,
    multiplier: f64,
    exec: Exec,
) -> Result<Vec<f64>> {
    let (ctx, grads) = datainf_context(params, validation, corpus, multiplier, exec)?;
    score_all(&ctx, &grads, exec)
}

/// `Σ_j α_j · I(x; θ_j)`. The alphas must cover exactly the scored
/// checkpoints.
pub fn joint_influence(scores: &BTreeMap<String, f64>, alphas: &BTreeMap<String, f64>) -> Result<f64> {
    if let Some(extra) = scores.keys().find(|k| !alphas.contains_key(*k)) {
        return Err(Error::Integrity(format!("score for unselected checkpoint `{extra}`")));
    }
    alphas.iter().try_fold(0.0, |acc, (ckpt, alpha)| {
        let s = scores
            .get(ckpt)
            .ok_or_else(|| Error::Integrity(format!("missing score for checkpoint `{ckpt}`")))?;
        Ok(acc + alpha * s)
    })
}

/// Joint scores for a whole corpus given per-checkpoint score columns.
pub fn joint_scores(per_checkpoint: &BTreeMap<String, Vec<f64>>, alphas: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
    let n = per_checkpoint.values().next().map_or(0, Vec::len);
    if per_checkpoint.values().any(|c| c.len() != n) {
        return Err(Error::Integrity("score columns differ in length".into()));
    }
    (0..n)
        .map(|i| {
            let row: BTreeMap<String, f64> = per_checkpoint.iter().map(|(k, c)| (k.clone(), c[i])).collect();
            joint_influence(&row, alphas)
        })
        .collect()
}

/// Score file: `sample_id<TAB>checkpoint_id<TAB>score`, 12 significant
/// digits.
pub fn scores_to_string(records: &[InfluenceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(out, "{}\t{}\t{:.11e}", r.sample_id, r.checkpoint_id, r.score);
    }
    out
}

pub fn save_scores(records: &[InfluenceRecord], path: &Path) -> Result<()> {
    fs::write(path, scores_to_string(records)).map_err(|e| Error::io(path, e))
}

pub fn load_scores(path: &Path) -> Result<Vec<InfluenceRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            let [sample_id, checkpoint_id, score] = f[..] else {
                return Err(parse_err(i + 1, format!("expected 3 fields, got {}", f.len())));
            };
            let score: f64 = score
                .parse()
                .map_err(|_| parse_err(i + 1, format!("bad score `{score}`")))?;
            if !score.is_finite() {
                return Err(parse_err(i + 1, "non-finite score".into()));
            }
            Ok(InfluenceRecord {
                sample_id: sample_id.into(),
                checkpoint_id: checkpoint_id.into(),
                score,
            })
        })
        .collect()
}
