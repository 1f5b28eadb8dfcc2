//! Distances, similarities, normalization and overflow-safe exponential
//! reductions shared by every loss kernel.
//!
//! Everything here works on plain `&[f64]` so that [`Embedding`] values,
//! table rows and scratch buffers can all be passed without copying.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense feature vector. Non-empty with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyEmbedding);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Embedding {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Embedding {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    Ok(())
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn euclidean_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(x, y)?;
    let d = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if d.is_finite() {
        Ok(d)
    } else {
        Err(Error::NonFinite)
    }
}

/// Norm of a vector that must be non-zero and representable.
fn nonzero_norm(x: &[f64]) -> Result<f64> {
    let n = norm(x);
    if n == 0.0 {
        Err(Error::ZeroNorm)
    } else if n.is_finite() {
        Ok(n)
    } else {
        Err(Error::NonFinite)
    }
}

/// Distance plus the unit direction `(x - y) / d`, which is the gradient of
/// the distance with respect to `x` (and its negation for `y`).
///
/// At `d == 0` the subgradient is taken as zero.
pub fn euclidean_distance_grad(x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    let d = euclidean_distance(x, y)?;
    let dir = if d > 0.0 {
        x.iter().zip(y).map(|(a, b)| (a - b) / d).collect()
    } else {
        vec![0.0; x.len()]
    };
    Ok((d, dir))
}

pub fn cosine_similarity(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(x, y)?;
    let nx = nonzero_norm(x)?;
    let ny = nonzero_norm(y)?;
    let s = dot(x, y) / (nx * ny);
    if !s.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(s.clamp(-1.0, 1.0))
}

/// Cosine similarity `s` together with `∂s/∂x` and `∂s/∂y`.
pub fn cosine_similarity_grad(x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_dims(x, y)?;
    let nx = nonzero_norm(x)?;
    let ny = nonzero_norm(y)?;
    let inv = 1.0 / (nx * ny);
    // Unclamped here: the gradient must belong to the same function value.
    let s = dot(x, y) * inv;
    if !s.is_finite() {
        return Err(Error::NonFinite);
    }
    let gx = x
        .iter()
        .zip(y)
        .map(|(a, b)| b * inv - s * a / (nx * nx))
        .collect();
    let gy = x
        .iter()
        .zip(y)
        .map(|(a, b)| a * inv - s * b / (ny * ny))
        .collect();
    Ok((s, gx, gy))
}

pub fn l2_normalize(x: &[f64]) -> Result<Vec<f64>> {
    let n = nonzero_norm(x)?;
    Ok(x.iter().map(|v| v / n).collect())
}

/// Pulls a gradient taken with respect to `x / ‖x‖` back to `x`.
pub fn l2_normalize_backward(x: &[f64], grad_unit: &[f64]) -> Result<Vec<f64>> {
    check_dims(x, grad_unit)?;
    let n = nonzero_norm(x)?;
    let proj: f64 = x.iter().zip(grad_unit).map(|(a, g)| a * g).sum::<f64>() / n;
    Ok(x.iter()
        .zip(grad_unit)
        .map(|(a, g)| (g - proj * a / n) / n)
        .collect())
}

/// `log(1 + Σ exp(tᵢ))`, shifted by `max(0, max tᵢ)` so it stays finite for
/// terms far beyond the exp overflow range. Empty input gives 0.
pub fn stable_log1p_sumexp(terms: &[f64]) -> Result<f64> {
    Ok(log1p_sumexp_weights(terms)?.0)
}

/// As [`stable_log1p_sumexp`], also returning `∂/∂tᵢ = exp(tᵢ) / (1 + Σ exp)`.
pub fn log1p_sumexp_weights(terms: &[f64]) -> Result<(f64, Vec<f64>)> {
    if terms.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite);
    }
    let shift = terms.iter().copied().fold(0.0_f64, f64::max);
    let exps: Vec<f64> = terms.iter().map(|t| (t - shift).exp()).collect();
    let denom = (-shift).exp() + exps.iter().sum::<f64>();
    let weights = exps.iter().map(|e| e / denom).collect();
    Ok((shift + denom.ln(), weights))
}

/// `log Σ exp(tᵢ)` over a non-empty list, plus softmax weights.
pub fn log_sum_exp_weights(terms: &[f64]) -> Result<(f64, Vec<f64>)> {
    if terms.is_empty() {
        return Err(Error::InvalidBatch("log-sum-exp over an empty set".into()));
    }
    if terms.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite);
    }
    let shift = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = terms.iter().map(|t| (t - shift).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok((shift + sum.ln(), exps.iter().map(|e| e / sum).collect()))
}

/// `log(1 + exp(z))` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
