//! Minimal next-token proxy model: embedding -> tanh hidden -> output logits.
//!
//! `logits_t = Wᵀ · tanh(H · E[x_t] + b)` predicts `x_{t+1}`. Gradients are
//! derived by hand. Only the embedding (layer 1) and output (layer L = 3)
//! gradients are exported for influence scoring; the hidden layer is trained
//! but its gradient never leaves this module.
//!
//! Since the logits at position `t` depend only on `x_t`, a sequence is
//! reduced to its transition counts `n[a][y]` before the forward pass. The
//! loss is `(1/T) Σ_a Σ_y n[a][y] · (logsumexp(logits_a) - logits_a[y])`.
//!
//! All matrices are stored row-major: `E` is `V×d`, `H` is `d×d` (row = output
//! unit), `W` is `d×V`. Gradients are flattened in the same order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::corpus::{Sample, TokenId};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::rng;

/// Layers whose gradients are exported for influence scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Layer {
    Embedding,
    Output,
}

impl Layer {
    pub const EXPORTED: [Layer; 2] = [Layer::Embedding, Layer::Output];

    /// 1-based layer index; the output layer is the last of three.
    pub fn index(self) -> usize {
        match self {
            Layer::Embedding => 1,
            Layer::Output => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Layer> {
        match i {
            1 => Some(Layer::Embedding),
            3 => Some(Layer::Output),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    vocab: usize,
    dim: usize,
    pub embed: Vec<f64>,
    pub hidden: Vec<f64>,
    pub bias: Vec<f64>,
    pub output: Vec<f64>,
}

/// Per-sample gradients of the exported layers, flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub embedding: Vec<f64>,
    pub output: Vec<f64>,
}

impl GradientBundle {
    pub fn zeros(vocab: usize, dim: usize) -> Self {
        GradientBundle {
            embedding: vec![0.0; vocab * dim],
            output: vec![0.0; dim * vocab],
        }
    }

    pub fn layer(&self, layer: Layer) -> &[f64] {
        match layer {
            Layer::Embedding => &self.embedding,
            Layer::Output => &self.output,
        }
    }

    pub fn layer_mut(&mut self, layer: Layer) -> &mut Vec<f64> {
        match layer {
            Layer::Embedding => &mut self.embedding,
            Layer::Output => &mut self.output,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        GradientBundle {
            embedding: self.embedding.iter().map(|x| x * c).collect(),
            output: self.output.iter().map(|x| x * c).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.embedding.iter().chain(&self.output).all(|x| x.is_finite())
    }
}

/// Gradient over every trainable tensor, same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct FullGradient {
    pub embed: Vec<f64>,
    pub hidden: Vec<f64>,
    pub bias: Vec<f64>,
    pub output: Vec<f64>,
}

impl FullGradient {
    fn zeros(vocab: usize, dim: usize) -> Self {
        FullGradient {
            embed: vec![0.0; vocab * dim],
            hidden: vec![0.0; dim * dim],
            bias: vec![0.0; dim],
            output: vec![0.0; dim * vocab],
        }
    }

    fn add_scaled(&mut self, other: &FullGradient, c: f64) {
        for (dst, src) in [
            (&mut self.embed, &other.embed),
            (&mut self.hidden, &other.hidden),
            (&mut self.bias, &other.bias),
            (&mut self.output, &other.output),
        ] {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += c * s;
            }
        }
    }
}

/// Transition counts of one sequence grouped by current token.
struct Transitions {
    /// `(current, [(next, count)])`, sorted by token id.
    rows: Vec<(TokenId, Vec<(TokenId, u32)>)>,
    total: usize,
}

impl Transitions {
    fn of(tokens: &[TokenId]) -> Self {
        let mut pairs: Vec<(TokenId, TokenId)> = tokens.windows(2).map(|w| (w[0], w[1])).collect();
        pairs.sort_unstable();
        let mut rows: Vec<(TokenId, Vec<(TokenId, u32)>)> = Vec::new();
        for (a, y) in pairs {
            match rows.last_mut() {
                Some((cur, targets)) if *cur == a => match targets.last_mut() {
                    Some((t, n)) if *t == y => *n += 1,
                    _ => targets.push((y, 1)),
                },
                _ => rows.push((a, vec![(y, 1)])),
            }
        }
        Transitions {
            rows,
            total: tokens.len().saturating_sub(1),
        }
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl ModelParams {
    pub fn zeros(vocab: usize, dim: usize) -> Self {
        ModelParams {
            vocab,
            dim,
            embed: vec![0.0; vocab * dim],
            hidden: vec![0.0; dim * dim],
            bias: vec![0.0; dim],
            output: vec![0.0; dim * vocab],
        }
    }

    /// Seeded uniform initialisation: `E ~ U(-1, 1)`, `H, W ~ U(-1, 1)/√d`,
    /// `b = 0`.
    pub fn random(vocab: usize, dim: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, "model-init", 0);
        let scale = 1.0 / (dim as f64).sqrt();
        let mut draw = |n: usize, s: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(-s..s)).collect() };
        let embed = draw(vocab * dim, 1.0);
        let hidden = draw(dim * dim, scale);
        let output = draw(dim * vocab, scale);
        ModelParams {
            vocab,
            dim,
            embed,
            hidden,
            bias: vec![0.0; dim],
            output,
        }
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layer_dim(&self, layer: Layer) -> usize {
        match layer {
            Layer::Embedding | Layer::Output => self.vocab * self.dim,
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.embed, &self.hidden, &self.bias, &self.output]
            .iter()
            .all(|m| m.iter().all(|x| x.is_finite()))
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.len() < 2 {
            return Err(Error::SequenceTooShort(tokens.len()));
        }
        match tokens.iter().find(|&&t| t as usize >= self.vocab) {
            Some(&token) => Err(Error::TokenOutOfRange {
                token,
                vocab: self.vocab,
            }),
            None => Ok(()),
        }
    }

    /// Hidden activation for current token `a`.
    fn activation(&self, a: TokenId) -> Vec<f64> {
        let d = self.dim;
        let e = &self.embed[a as usize * d..(a as usize + 1) * d];
        (0..d)
            .map(|i| {
                let row = &self.hidden[i * d..(i + 1) * d];
                (row.iter().zip(e).map(|(h, x)| h * x).sum::<f64>() + self.bias[i]).tanh()
            })
            .collect()
    }

    fn logits_from(&self, h: &[f64]) -> Vec<f64> {
        let v = self.vocab;
        let mut logits = vec![0.0; v];
        for (i, hi) in h.iter().enumerate() {
            let row = &self.output[i * v..(i + 1) * v];
            for (l, w) in logits.iter_mut().zip(row) {
                *l += w * hi;
            }
        }
        logits
    }

    /// Next-token logits for the current token `a`.
    pub fn token_logits(&self, a: TokenId) -> Vec<f64> {
        self.logits_from(&self.activation(a))
    }

    /// One logit row per position, predicting the following token.
    pub fn forward_logits(&self, tokens: &[TokenId]) -> Result<Vec<Vec<f64>>> {
        self.check_tokens(tokens)?;
        Ok(tokens[..tokens.len() - 1].iter().map(|&a| self.token_logits(a)).collect())
    }

    /// Mean token-level cross-entropy over the sample's transitions.
    pub fn sequence_loss(&self, sample: &Sample) -> Result<f64> {
        self.check_tokens(&sample.tokens)?;
        let tr = Transitions::of(&sample.tokens);
        let mut loss = 0.0;
        for (a, targets) in &tr.rows {
            let logits = self.token_logits(*a);
            let lse = log_sum_exp(&logits);
            for &(y, n) in targets {
                loss += f64::from(n) * (lse - logits[y as usize]);
            }
        }
        Ok((loss / tr.total as f64).max(0.0))
    }

    pub fn perplexity(&self, sample: &Sample) -> Result<f64> {
        Ok(self.sequence_loss(sample)?.exp())
    }

    /// Loss and gradient of `sequence_loss`. The hidden/bias gradient is only
    /// accumulated when `full` is set.
    fn backprop(&self, tokens: &[TokenId], full: bool) -> (f64, FullGradient) {
        let (v, d) = (self.vocab, self.dim);
        let tr = Transitions::of(tokens);
        let inv_t = 1.0 / tr.total as f64;
        let mut grad = if full {
            FullGradient::zeros(v, d)
        } else {
            FullGradient {
                embed: vec![0.0; v * d],
                hidden: Vec::new(),
                bias: Vec::new(),
                output: vec![0.0; d * v],
            }
        };
        let mut loss = 0.0;
        let mut g_logits = vec![0.0; v];
        for (a, targets) in &tr.rows {
            let a = *a as usize;
            let h = self.activation(a as TokenId);
            let logits = self.logits_from(&h);
            let lse = log_sum_exp(&logits);
            let count: u32 = targets.iter().map(|&(_, n)| n).sum();
            for (g, l) in g_logits.iter_mut().zip(&logits) {
                *g = f64::from(count) * (l - lse).exp() * inv_t;
            }
            for &(y, n) in targets {
                loss += f64::from(n) * (lse - logits[y as usize]);
                g_logits[y as usize] -= f64::from(n) * inv_t;
            }
            // output layer and back into the hidden activation
            let mut g_z = vec![0.0; d];
            for i in 0..d {
                let w_row = &self.output[i * v..(i + 1) * v];
                let gw_row = &mut grad.output[i * v..(i + 1) * v];
                let mut g_h = 0.0;
                for k in 0..v {
                    gw_row[k] += h[i] * g_logits[k];
                    g_h += w_row[k] * g_logits[k];
                }
                g_z[i] = g_h * (1.0 - h[i] * h[i]);
            }
            let e = &self.embed[a * d..(a + 1) * d];
            let g_e = &mut grad.embed[a * d..(a + 1) * d];
            for i in 0..d {
                let h_row = &self.hidden[i * d..(i + 1) * d];
                for j in 0..d {
                    g_e[j] += h_row[j] * g_z[i];
                }
                if full {
                    let gh_row = &mut grad.hidden[i * d..(i + 1) * d];
                    for j in 0..d {
                        gh_row[j] += g_z[i] * e[j];
                    }
                    grad.bias[i] += g_z[i];
                }
            }
        }
        ((loss * inv_t).max(0.0), grad)
    }

    /// Gradient of `sequence_loss` over all trainable tensors.
    pub fn full_gradient(&self, sample: &Sample) -> Result<FullGradient> {
        self.check_tokens(&sample.tokens)?;
        Ok(self.backprop(&sample.tokens, true).1)
    }

    /// Gradients of `sequence_loss` with respect to the embedding and output
    /// layers only.
    pub fn per_sample_layer_gradients(&self, sample: &Sample) -> Result<GradientBundle> {
        self.check_tokens(&sample.tokens)?;
        let (_, g) = self.backprop(&sample.tokens, false);
        Ok(GradientBundle {
            embedding: g.embed,
            output: g.output,
        })
    }

    /// Layer gradients of many samples, in input order.
    pub fn batch_layer_gradients(&self, samples: &[Sample], exec: Exec) -> Result<Vec<GradientBundle>> {
        exec.map(samples, |s| self.per_sample_layer_gradients(s)).into_iter().collect()
    }

    /// One plain SGD step on the mean batch loss over every tensor.
    pub fn sgd_step(&self, batch: &[Sample], lr: f64) -> Result<ModelParams> {
        if batch.is_empty() {
            return Err(Error::Empty("sgd batch"));
        }
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be a finite non-negative number, got {lr}")));
        }
        for s in batch {
            self.check_tokens(&s.tokens)?;
        }
        let mut mean = FullGradient::zeros(self.vocab, self.dim);
        let c = 1.0 / batch.len() as f64;
        for s in batch {
            mean.add_scaled(&self.backprop(&s.tokens, true).1, c);
        }
        let mut next = self.clone();
        for (p, g) in [
            (&mut next.embed, &mean.embed),
            (&mut next.hidden, &mean.hidden),
            (&mut next.bias, &mean.bias),
            (&mut next.output, &mean.output),
        ] {
            for (x, gx) in p.iter_mut().zip(g) {
                *x -= lr * gx;
            }
        }
        if !next.is_finite() {
            return Err(Error::NonFinite("parameter update"));
        }
        Ok(next)
    }

    /// Argmax next-token prediction; ties go to the lowest token id.
    pub fn predict_next(&self, a: TokenId) -> TokenId {
        let logits = self.token_logits(a);
        let mut best = 0;
        for (k, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = k;
            }
        }
        best as TokenId
    }

    const MAGIC: &'static [u8; 8] = b"AMXPARM1";

    /// Binary checkpoint layout: 8-byte magic, `V` and `d` as little-endian
    /// u64, then `E`, `H`, `b`, `W` row-major as little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.embed.len() + self.hidden.len() + self.bias.len() + self.output.len();
        let mut out = Vec::with_capacity(24 + 8 * n);
        out.extend_from_slice(Self::MAGIC);
        out.extend_from_slice(&(self.vocab as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for m in [&self.embed, &self.hidden, &self.bias, &self.output] {
            for x in m.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Integrity(format!("checkpoint parameters: {msg}"));
        if bytes.len() < 24 || &bytes[..8] != Self::MAGIC {
            return Err(bad("missing header"));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
        let (vocab, dim) = (word(8) as usize, word(16) as usize);
        let n = 2 * vocab * dim + dim * dim + dim;
        if bytes.len() != 24 + 8 * n {
            return Err(bad(&format!("expected {} bytes for V={vocab}, d={dim}, got {}", 24 + 8 * n, bytes.len())));
        }
        let mut vals = bytes[24..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut take = |k: usize| -> Vec<f64> { vals.by_ref().take(k).collect() };
        let embed = take(vocab * dim);
        let hidden = take(dim * dim);
        let bias = take(dim);
        let output = take(dim * vocab);
        let params = ModelParams {
            vocab,
            dim,
            embed,
            hidden,
            bias,
            output,
        };
        if !params.is_finite() {
            return Err(bad("non-finite entries"));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Gradient dump: one line per (sample, layer) with the flattened vector in
/// shortest round-trip decimal form.
pub fn write_gradient_dump(path: &Path, entries: &[(&str, &GradientBundle)]) -> Result<()> {
    let mut out = String::new();
    for (id, bundle) in entries {
        for layer in Layer::EXPORTED {
            let _ = write!(out, "{id}\t{}\t", layer.index());
            for (k, x) in bundle.layer(layer).iter().enumerate() {
                if k > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{x:?}");
            }
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
