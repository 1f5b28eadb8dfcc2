//! Softmax over inner-product logits and cosine softmax with an additive
//! margin on the target logit. Both are bias-free.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{axpy, cosine_similarity_grad, dot, log_sum_exp_weights};
use crate::triplet::LossResult;

/// `C` class-center columns of dimension `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierWeights {
    columns: Vec<Vec<f64>>,
}

impl ClassifierWeights {
    pub fn new(columns: Vec<Vec<f64>>) -> Result<Self> {
        if columns.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "classifier needs at least 2 classes, got {}",
                columns.len()
            )));
        }
        let dim = columns[0].len();
        if dim == 0 {
            return Err(Error::EmptyEmbedding);
        }
        for c in &columns {
            if c.len() != dim {
                return Err(Error::DimensionMismatch {
                    left: dim,
                    right: c.len(),
                });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        Ok(Self { columns })
    }

    pub fn classes(&self) -> usize {
        self.columns.len()
    }

    pub fn dim(&self) -> usize {
        self.columns[0].len()
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    fn check_input(&self, x: &[f64], label: usize) -> Result<()> {
        if label >= self.classes() {
            return Err(Error::LabelOutOfRange {
                label,
                classes: self.classes(),
            });
        }
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                left: x.len(),
                right: self.dim(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyParams {
    pub margin: f64,
    pub scale: f64,
}

impl ClassifyParams {
    pub fn new(margin: f64, scale: f64) -> Self {
        Self { margin, scale }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.margin.is_finite() || self.margin < 0.0 {
            return Err(Error::InvalidConfig(format!("bad margin {}", self.margin)));
        }
        if !self.scale.is_finite() || self.scale <= 0.0 {
            return Err(Error::InvalidConfig(format!("bad scale {}", self.scale)));
        }
        Ok(())
    }
}

impl Default for ClassifyParams {
    fn default() -> Self {
        Self::new(0.3, 64.0)
    }
}

/// Cross-entropy of softmax over `logits`, returning `(loss, ∂loss/∂logits)`.
fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    let (lse, probs) = log_sum_exp_weights(logits)?;
    let target = logits[label];
    // When the target logit is the largest, log1p keeps tiny losses positive.
    let value = if logits.iter().all(|&l| l <= target) {
        logits
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != label)
            .map(|(_, l)| (l - target).exp())
            .sum::<f64>()
            .ln_1p()
    } else {
        lse - target
    };
    let mut dlogits = probs;
    dlogits[label] -= 1.0;
    Ok((value, dlogits))
}

/// `-log softmax(Wᵀx)[y]`. The embedding gradient is the single entry of
/// `embedding_grads`.
pub fn softmax_loss(x: &[f64], label: usize, weights: &ClassifierWeights) -> Result<LossResult> {
    weights.check_input(x, label)?;
    let logits: Vec<f64> = weights.columns.iter().map(|w| dot(w, x)).collect();
    let (value, dlogits) = cross_entropy(&logits, label)?;

    let mut gx = vec![0.0; x.len()];
    let mut gw = Vec::with_capacity(weights.classes());
    for (w, &dl) in weights.columns.iter().zip(&dlogits) {
        axpy(dl, w, &mut gx);
        gw.push(x.iter().map(|v| dl * v).collect());
    }
    LossResult {
        value,
        embedding_grads: vec![gx],
        weight_grads: Some(gw),
    }
    .check_finite()
}

/// Softmax over `γ·cos(W_j, x)` with `m` subtracted from the target cosine.
pub fn cosine_softmax_loss(
    x: &[f64],
    label: usize,
    weights: &ClassifierWeights,
    params: &ClassifyParams,
) -> Result<LossResult> {
    params.validate()?;
    weights.check_input(x, label)?;
    let mut logits = Vec::with_capacity(weights.classes());
    let mut partials = Vec::with_capacity(weights.classes());
    for (j, w) in weights.columns.iter().enumerate() {
        let (s, gw, gx) = cosine_similarity_grad(w, x)?;
        let shifted = if j == label { s - params.margin } else { s };
        logits.push(params.scale * shifted);
        partials.push((gw, gx));
    }
    let (value, dlogits) = cross_entropy(&logits, label)?;

    let mut gx = vec![0.0; x.len()];
    let mut gw_all = Vec::with_capacity(weights.classes());
    for ((gw, gxs), &dl) in partials.iter().zip(&dlogits) {
        let ds = params.scale * dl;
        axpy(ds, gxs, &mut gx);
        gw_all.push(gw.iter().map(|v| ds * v).collect());
    }
    LossResult {
        value,
        embedding_grads: vec![gx],
        weight_grads: Some(gw_all),
    }
    .check_finite()
}

/// Mean of a per-sample classification loss over a set of embeddings, with
/// gradients for every embedding and the shared classifier.
pub fn mean_classification_loss<F>(
    embeddings: &[&[f64]],
    labels: &[usize],
    weights: &ClassifierWeights,
    mut per_sample: F,
) -> Result<LossResult>
where
    F: FnMut(&[f64], usize, &ClassifierWeights) -> Result<LossResult>,
{
    if embeddings.len() != labels.len() || embeddings.is_empty() {
        return Err(Error::InvalidBatch("embedding/label count mismatch".into()));
    }
    let inv = 1.0 / embeddings.len() as f64;
    let mut value = 0.0;
    let mut egrads = Vec::with_capacity(embeddings.len());
    let mut wgrads = vec![vec![0.0; weights.dim()]; weights.classes()];
    for (x, &y) in embeddings.iter().zip(labels) {
        let r = per_sample(x, y, weights)?;
        value += inv * r.value;
        egrads.push(r.embedding_grads[0].iter().map(|g| g * inv).collect());
        for (acc, g) in wgrads.iter_mut().zip(r.weight_grads.iter().flatten()) {
            axpy(inv, g, acc);
        }
    }
    Ok(LossResult {
        value,
        embedding_grads: egrads,
        weight_grads: Some(wgrads),
    })
}
