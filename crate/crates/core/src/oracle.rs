//! Exact influence under the damped Gauss–Newton surrogate
//! `G_l = λ_l·I + (1/n) Σ_i g_li g_liᵀ`, solved densely per layer.
//!
//! This is the reference DataInf is checked against. For `n = 1` the two
//! coincide exactly (Sherman–Morrison); for larger `n` DataInf swaps the
//! order of averaging and inversion and only preserves the ranking
//! approximately.

use crate::corpus::{Corpus, Sample};
use crate::error::{Error, Result};
use crate::influence::{dot, lambda_l, validation_gradient};
use crate::par::Exec;
use crate::proxylm::{GradientBundle, Layer, ModelParams};

/// Largest `d_1 + d_L` the dense oracle accepts.
pub const MAX_ORACLE_DIM: usize = 2000;

/// Lower-triangular Cholesky factor of a symmetric positive definite
/// row-major `n×n` matrix.
fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s = a[i * n + j] - dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::Integrity("damped Gauss-Newton matrix is not positive definite".into()));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - dot(&l[i * n..i * n + i], &y[..i])) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    x
}

/// `G_l⁻¹ v_l` for one layer.
pub fn damped_gauss_newton_solve(v: &[f64], train: &[&[f64]], lambda: f64) -> Result<Vec<f64>> {
    let d = v.len();
    let n = train.len() as f64;
    let mut g = vec![0.0; d * d];
    for i in 0..d {
        g[i * d + i] = lambda;
    }
    for t in train {
        for i in 0..d {
            if t[i] == 0.0 {
                continue;
            }
            for j in 0..d {
                g[i * d + j] += t[i] * t[j] / n;
            }
        }
    }
    let l = cholesky(&g, d)?;
    Ok(cholesky_solve(&l, d, v))
}

/// Closed-form `(λI + g gᵀ)⁻¹ v`.
pub fn sherman_morrison_solve(lambda: f64, g: &[f64], v: &[f64]) -> Vec<f64> {
    let c = dot(g, v) / (lambda + dot(g, g));
    v.iter().zip(g).map(|(vi, gi)| (vi - c * gi) / lambda).collect()
}

/// Precomputed `G_l⁻¹ v_l` for both exported layers.
#[derive(Debug, Clone)]
pub struct ExactOracle {
    solutions: Vec<(Layer, Vec<f64>)>,
}

impl ExactOracle {
    pub fn build(v: &GradientBundle, train: &[GradientBundle], multiplier: f64) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("training gradients"));
        }
        let total_dim: usize = Layer::EXPORTED.iter().map(|&l| v.layer(l).len()).sum();
        if total_dim > MAX_ORACLE_DIM {
            return Err(Error::Config(format!(
                "exact oracle needs d_1 + d_L <= {MAX_ORACLE_DIM}, got {total_dim}"
            )));
        }
        let mut solutions = Vec::with_capacity(2);
        for layer in Layer::EXPORTED {
            let cols: Vec<&[f64]> = train.iter().map(|g| g.layer(layer)).collect();
            let d_l = v.layer(layer).len();
            let lambda = lambda_l(cols.iter().copied(), d_l, train.len(), multiplier);
            if !(lambda > 0.0) {
                return Err(Error::DegenerateLayer { layer: layer.index() });
            }
            solutions.push((layer, damped_gauss_newton_solve(v.layer(layer), &cols, lambda)?));
        }
        Ok(ExactOracle { solutions })
    }

    /// `Σ_l v_lᵀ G_l⁻¹ g_k`, sign-aligned with DataInf scores.
    pub fn score(&self, query: &GradientBundle) -> Result<f64> {
        let mut s = 0.0;
        for (layer, x) in &self.solutions {
            let g = query.layer(*layer);
            if g.len() != x.len() {
                return Err(Error::DimensionMismatch {
                    expected: x.len(),
                    actual: g.len(),
                });
            }
            s += dot(x, g);
        }
        Ok(s)
    }
}

/// Exact influence of `sample` for a checkpoint, probe and training corpus.
pub fn exact_influence_oracle(
    params: &ModelParams,
    validation: &[Sample],
    corpus: &Corpus,
    sample: &Sample,
    multiplier: f64,
) -> Result<f64> {
    let v = validation_gradient(params, validation, Exec::default())?;
    let train = params.batch_layer_gradients(corpus.samples(), Exec::default())?;
    ExactOracle::build(&v, &train, multiplier)?.score(&params.per_sample_layer_gradients(sample)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::influence::LayerContext;

    #[test]
    fn cholesky_solves_small_system() {
        // [[4,2],[2,3]] x = [2, 1] -> x = [0.5, 0]
        let l = cholesky(&[4.0, 2.0, 2.0, 3.0], 2).unwrap();
        let x = cholesky_solve(&l, 2, &[2.0, 1.0]);
        assert!((x[0] - 0.5).abs() < 1e-15 && x[1].abs() < 1e-15);
        assert!(cholesky(&[0.0, 0.0, 0.0, 1.0], 2).is_err());
    }

    #[test]
    fn sherman_morrison_matches_dense_solve() {
        let g = [0.3, -1.2, 2.0];
        let v = [1.0, 0.5, -0.25];
        let sm = sherman_morrison_solve(0.07, &g, &v);
        let dense = damped_gauss_newton_solve(&v, &[&g[..]], 0.07).unwrap();
        for (a, b) in sm.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_sample_oracle_equals_datainf() {
        let v = GradientBundle {
            embedding: vec![1.0, 0.0],
            output: vec![0.2, -0.4],
        };
        let g = GradientBundle {
            embedding: vec![1.0, 0.0],
            output: vec![0.5, 0.5],
        };
        let ctx = LayerContext::build(&v, std::slice::from_ref(&g), 0.1, Exec::default()).unwrap();
        let oracle = ExactOracle::build(&v, std::slice::from_ref(&g), 0.1).unwrap();
        let a = crate::influence::influence_score(&ctx, &g).unwrap();
        let b = oracle.score(&g).unwrap();
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        let zero = GradientBundle {
            embedding: vec![0.0; 2],
            output: vec![0.0; 2],
        };
        assert_eq!(oracle.score(&zero).unwrap(), 0.0);
    }

    #[test]
    fn oversized_layers_are_refused() {
        let v = GradientBundle {
            embedding: vec![1.0; 1500],
            output: vec![1.0; 1500],
        };
        assert!(matches!(
            ExactOracle::build(&v, std::slice::from_ref(&v), 0.1),
            Err(Error::Config(_))
        ));
    }
}
