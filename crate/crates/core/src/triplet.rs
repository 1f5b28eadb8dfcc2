//! Sample-level triplet losses with analytic gradients.
//!
//! * [`batch_hard_loss`]: furthest positive / closest negative per anchor.
//! * [`cross_modality_batch_hard_loss`]: batch hard plus the hardest triplet
//!   restricted to the anchor's opposite modality.
//! * [`batch_all_loss`]: every valid triplet, hinge form.
//! * [`unified_batch_all_loss`]: every valid triplet over cosine similarity,
//!   with the pair sum factored into a positive and a negative sum.
//!
//! Batch hard and cross-modality batch hard are sums over anchors, the two
//! batch-all losses are means. [`TripletParams::mean_over_anchors`] switches
//! the sum forms to means.
//!
//! Arg-max/arg-min ties go to the lowest batch index. A hinge that is exactly
//! zero contributes no gradient.

use serde::{Deserialize, Serialize};

use crate::batch::{MiniBatch, Modality};
use crate::error::{Error, Result};
use crate::numkit::{axpy, cosine_similarity_grad, sigmoid, softplus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletParams {
    pub margin: f64,
    /// Scale factor for the log-sum-exp losses; ignored by hinge losses.
    pub scale: f64,
    #[serde(default)]
    pub mean_over_anchors: bool,
}

impl TripletParams {
    pub fn new(margin: f64, scale: f64) -> Self {
        Self {
            margin,
            scale,
            mean_over_anchors: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.margin.is_finite() || self.margin < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "margin must be finite and non-negative, got {}",
                self.margin
            )));
        }
        if !self.scale.is_finite() || self.scale <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "scale must be finite and positive, got {}",
                self.scale
            )));
        }
        Ok(())
    }

    pub(crate) fn sum_reduction(&self, anchors: usize) -> f64 {
        if self.mean_over_anchors {
            1.0 / anchors as f64
        } else {
            1.0
        }
    }
}

impl Default for TripletParams {
    fn default() -> Self {
        Self::new(0.3, 12.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    /// One gradient per batch sample, in batch order.
    pub embedding_grads: Vec<Vec<f64>>,
    /// Gradients for classifier columns, when the loss has any.
    pub weight_grads: Option<Vec<Vec<f64>>>,
}

impl LossResult {
    pub(crate) fn check_finite(self) -> Result<Self> {
        let grads_ok = self
            .embedding_grads
            .iter()
            .chain(self.weight_grads.iter().flatten())
            .all(|g| g.iter().all(|v| v.is_finite()));
        if !self.value.is_finite() || !grads_ok {
            return Err(Error::NonFinite);
        }
        Ok(self)
    }
}

/// Euclidean distances between all batch members plus a matrix of
/// `∂L/∂d(a, o)` coefficients that is pushed back onto the embeddings at the
/// end.
pub(crate) struct EuclideanPairs<'a> {
    rows: Vec<&'a [f64]>,
    dist: Vec<f64>,
    coef: Vec<f64>,
}

impl<'a> EuclideanPairs<'a> {
    pub(crate) fn new(rows: Vec<&'a [f64]>) -> Self {
        let n = rows.len();
        let mut dist = vec![0.0; n * n];
        for a in 0..n {
            for o in (a + 1)..n {
                let d = rows[a]
                    .iter()
                    .zip(rows[o])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                dist[a * n + o] = d;
                dist[o * n + a] = d;
            }
        }
        Self {
            coef: vec![0.0; n * n],
            rows,
            dist,
        }
    }

    pub(crate) fn d(&self, a: usize, o: usize) -> f64 {
        self.dist[a * self.rows.len() + o]
    }

    /// Highest distance from `a` among `candidates`, lowest index on ties.
    pub(crate) fn furthest(&self, a: usize, candidates: impl Iterator<Item = usize>) -> usize {
        let mut best: Option<(usize, f64)> = None;
        for c in candidates {
            let d = self.d(a, c);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((c, d));
            }
        }
        best.expect("non-empty candidate set").0
    }

    pub(crate) fn closest(&self, a: usize, candidates: impl Iterator<Item = usize>) -> usize {
        let mut best: Option<(usize, f64)> = None;
        for c in candidates {
            let d = self.d(a, c);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((c, d));
            }
        }
        best.expect("non-empty candidate set").0
    }

    /// Adds `weight · [m + d(a,p) - d(a,n)]_+` and records its gradient.
    pub(crate) fn hinge(&mut self, a: usize, p: usize, n: usize, margin: f64, weight: f64) -> f64 {
        let arg = margin + self.d(a, p) - self.d(a, n);
        if arg <= 0.0 {
            return 0.0;
        }
        let len = self.rows.len();
        self.coef[a * len + p] += weight;
        self.coef[a * len + n] -= weight;
        weight * arg
    }

    pub(crate) fn backward(&self) -> Vec<Vec<f64>> {
        let n = self.rows.len();
        let dim = self.rows[0].len();
        let mut grads = vec![vec![0.0; dim]; n];
        for a in 0..n {
            for o in 0..n {
                let c = self.coef[a * n + o];
                let d = self.d(a, o);
                if c == 0.0 || d == 0.0 {
                    continue;
                }
                for k in 0..dim {
                    let g = c * (self.rows[a][k] - self.rows[o][k]) / d;
                    grads[a][k] += g;
                    grads[o][k] -= g;
                }
            }
        }
        grads
    }
}

fn batch_rows(batch: &MiniBatch) -> Vec<&[f64]> {
    (0..batch.len()).map(|i| batch.embedding(i)).collect()
}

fn same_block(batch: &MiniBatch, a: usize) -> impl Iterator<Item = usize> {
    let width = 2 * batch.k();
    let start = batch.block_of(a) * width;
    (start..start + width).filter(move |&i| i != a)
}

fn other_blocks(batch: &MiniBatch, a: usize) -> impl Iterator<Item = usize> + '_ {
    let block = batch.block_of(a);
    (0..batch.len()).filter(move |&i| batch.block_of(i) != block)
}

fn block_modality(batch: &MiniBatch, block: usize, m: Modality) -> std::ops::Range<usize> {
    let start = batch.index_of(block, m, 0);
    start..start + batch.k()
}

fn other_blocks_modality(batch: &MiniBatch, a: usize, m: Modality) -> impl Iterator<Item = usize> + '_ {
    let block = batch.block_of(a);
    (0..batch.p())
        .filter(move |&b| b != block)
        .flat_map(move |b| block_modality(batch, b, m))
}

fn add_batch_hard_terms(batch: &MiniBatch, pairs: &mut EuclideanPairs<'_>, params: &TripletParams, weight: f64) -> f64 {
    let mut value = 0.0;
    for a in 0..batch.len() {
        let p = pairs.furthest(a, same_block(batch, a));
        let n = pairs.closest(a, other_blocks(batch, a));
        value += pairs.hinge(a, p, n, params.margin, weight);
    }
    value
}

pub fn batch_hard_loss(batch: &MiniBatch, params: &TripletParams) -> Result<LossResult> {
    params.validate()?;
    let mut pairs = EuclideanPairs::new(batch_rows(batch));
    let weight = params.sum_reduction(batch.len());
    let value = add_batch_hard_terms(batch, &mut pairs, params, weight);
    LossResult {
        value,
        embedding_grads: pairs.backward(),
        weight_grads: None,
    }
    .check_finite()
}

pub fn cross_modality_batch_hard_loss(batch: &MiniBatch, params: &TripletParams) -> Result<LossResult> {
    params.validate()?;
    let mut pairs = EuclideanPairs::new(batch_rows(batch));
    let weight = params.sum_reduction(batch.len());
    let mut value = add_batch_hard_terms(batch, &mut pairs, params, weight);
    for a in 0..batch.len() {
        let target = batch.modality_of(a).other();
        let p = pairs.furthest(a, block_modality(batch, batch.block_of(a), target));
        let n = pairs.closest(a, other_blocks_modality(batch, a, target));
        value += pairs.hinge(a, p, n, params.margin, weight);
    }
    LossResult {
        value,
        embedding_grads: pairs.backward(),
        weight_grads: None,
    }
    .check_finite()
}

pub fn batch_all_loss(batch: &MiniBatch, params: &TripletParams) -> Result<LossResult> {
    params.validate()?;
    let mut pairs = EuclideanPairs::new(batch_rows(batch));
    let weight = 1.0 / batch.len() as f64;
    let mut value = 0.0;
    for a in 0..batch.len() {
        for p in same_block(batch, a) {
            for n in other_blocks(batch, a) {
                value += pairs.hinge(a, p, n, params.margin, weight);
            }
        }
    }
    LossResult {
        value,
        embedding_grads: pairs.backward(),
        weight_grads: None,
    }
    .check_finite()
}

/// Per-anchor detail from [`unified_batch_all_loss_instrumented`].
#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedInstrumentation {
    /// `log(1 + Σ_p e^{-γ s_p} · Σ_n e^{γ(s_n + m)})` for each anchor.
    pub per_anchor_terms: Vec<f64>,
    /// Number of pair-term exponentials evaluated for each anchor.
    pub exp_evaluations: Vec<usize>,
}

/// Max-shifted log-sum-exp that counts its exponential evaluations.
fn counted_log_sum_exp(terms: &[f64], counter: &mut usize) -> (f64, Vec<f64>) {
    let shift = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = terms
        .iter()
        .map(|t| {
            *counter += 1;
            (t - shift).exp()
        })
        .collect();
    let sum: f64 = exps.iter().sum();
    (shift + sum.ln(), exps.into_iter().map(|e| e / sum).collect())
}

pub fn unified_batch_all_loss(batch: &MiniBatch, params: &TripletParams) -> Result<LossResult> {
    unified_batch_all_loss_instrumented(batch, params).map(|(r, _)| r)
}

/// Unified batch-all loss in factored form. The positive and negative sums
/// are evaluated separately, so each anchor costs `(2K-1) + 2(P-1)K`
/// exponentials instead of one per `(p, n)` pair.
pub fn unified_batch_all_loss_instrumented(
    batch: &MiniBatch,
    params: &TripletParams,
) -> Result<(LossResult, UnifiedInstrumentation)> {
    params.validate()?;
    let n = batch.len();
    let gamma = params.scale;
    let weight = 1.0 / n as f64;

    let mut sims = vec![0.0; n * n];
    let mut sim_grads: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; n * n];
    for a in 0..n {
        for o in (a + 1)..n {
            let (s, ga, go) = cosine_similarity_grad(batch.embedding(a), batch.embedding(o))?;
            sims[a * n + o] = s;
            sims[o * n + a] = s;
            sim_grads[a * n + o] = Some((ga, go));
        }
    }

    // ∂L/∂S(a, o), accumulated per ordered pair.
    let mut coef = vec![0.0; n * n];
    let mut value = 0.0;
    let mut per_anchor_terms = Vec::with_capacity(n);
    let mut exp_evaluations = Vec::with_capacity(n);
    for a in 0..n {
        let positives: Vec<usize> = same_block(batch, a).collect();
        let negatives: Vec<usize> = other_blocks(batch, a).collect();
        let pos_terms: Vec<f64> = positives.iter().map(|&p| -gamma * sims[a * n + p]).collect();
        let neg_terms: Vec<f64> = negatives
            .iter()
            .map(|&q| gamma * (sims[a * n + q] + params.margin))
            .collect();

        let mut count = 0;
        let (log_pos, w_pos) = counted_log_sum_exp(&pos_terms, &mut count);
        let (log_neg, w_neg) = counted_log_sum_exp(&neg_terms, &mut count);
        let z = log_pos + log_neg;
        let term = softplus(z);
        per_anchor_terms.push(term);
        exp_evaluations.push(count);
        value += weight * term;

        let outer = weight * sigmoid(z);
        for (&p, w) in positives.iter().zip(&w_pos) {
            coef[a * n + p] -= outer * w * gamma;
        }
        for (&q, w) in negatives.iter().zip(&w_neg) {
            coef[a * n + q] += outer * w * gamma;
        }
    }

    let mut grads = batch.zero_grads();
    for a in 0..n {
        for o in (a + 1)..n {
            let c = coef[a * n + o] + coef[o * n + a];
            if c == 0.0 {
                continue;
            }
            let (ga, go) = sim_grads[a * n + o].as_ref().expect("filled above");
            axpy(c, ga, &mut grads[a]);
            axpy(c, go, &mut grads[o]);
        }
    }

    let result = LossResult {
        value,
        embedding_grads: grads,
        weight_grads: None,
    }
    .check_finite()?;
    Ok((
        result,
        UnifiedInstrumentation {
            per_anchor_terms,
            exp_evaluations,
        },
    ))
}

/// Exponentials per anchor for the factored form: `(2K-1) + 2(P-1)K`.
pub fn factored_exp_count(p: usize, k: usize) -> usize {
    (2 * k - 1) + 2 * (p - 1) * k
}

/// Exponentials per anchor for the expanded pair sum: `(2K-1) · 2(P-1)K`.
pub fn expanded_exp_count(p: usize, k: usize) -> usize {
    (2 * k - 1) * 2 * (p - 1) * k
}

/// How often batch-hard mining picks triplets inside the anchor's own
/// modality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiningDiagnostic {
    /// Anchors whose furthest positive shares their modality.
    pub frac_hard_pos_intra: f64,
    /// Anchors whose closest negative shares their modality.
    pub frac_hard_neg_intra: f64,
    /// Anchors where both do.
    pub frac_both_intra: f64,
}

pub fn mining_diagnostic(batch: &MiniBatch) -> MiningDiagnostic {
    let pairs = EuclideanPairs::new(batch_rows(batch));
    let (mut pos, mut neg, mut both) = (0usize, 0usize, 0usize);
    for a in 0..batch.len() {
        let m = batch.modality_of(a);
        let p_intra = batch.modality_of(pairs.furthest(a, same_block(batch, a))) == m;
        let n_intra = batch.modality_of(pairs.closest(a, other_blocks(batch, a))) == m;
        pos += p_intra as usize;
        neg += n_intra as usize;
        both += (p_intra && n_intra) as usize;
    }
    let total = batch.len() as f64;
    MiningDiagnostic {
        frac_hard_pos_intra: pos as f64 / total,
        frac_hard_neg_intra: neg as f64 / total,
        frac_both_intra: both as f64 / total,
    }
}
