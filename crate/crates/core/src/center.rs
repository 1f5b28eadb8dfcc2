//! Per-identity, per-modality centers and the two hetero-center triplet
//! losses built on them.
//!
//! Centers are recomputed from the batch on every call. Each anchor center
//! uses the same identity's other-modality center as its positive and both
//! modality centers of every other identity as negatives.

use crate::batch::{MiniBatch, Modality};
use crate::error::Result;
use crate::numkit::{axpy, cosine_similarity_grad, l2_normalize, l2_normalize_backward, log1p_sumexp_weights};
use crate::triplet::{EuclideanPairs, LossResult, TripletParams};

#[derive(Debug, Clone, PartialEq)]
pub struct CenterSet {
    /// Visible center of each identity block, in batch order.
    pub visible: Vec<Vec<f64>>,
    pub infrared: Vec<Vec<f64>>,
    /// Whether members were L2-normalized before averaging.
    pub normalized_inputs: bool,
}

impl CenterSet {
    pub fn len(&self) -> usize {
        self.visible.len() + self.infrared.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, block: usize, modality: Modality) -> &[f64] {
        match modality {
            Modality::Visible => &self.visible[block],
            Modality::Infrared => &self.infrared[block],
        }
    }

    /// Centers interleaved as `[v₀, t₀, v₁, t₁, ...]`; center `c`'s
    /// cross-modality partner is `c ^ 1` and its identity is `c / 2`.
    fn interleaved(&self) -> Vec<&[f64]> {
        self.visible
            .iter()
            .zip(&self.infrared)
            .flat_map(|(v, t)| [v.as_slice(), t.as_slice()])
            .collect()
    }
}

/// Member rows (normalized if requested) that feed each center.
fn member_rows(batch: &MiniBatch, normalize_first: bool) -> Result<Vec<Vec<f64>>> {
    (0..batch.len())
        .map(|i| {
            if normalize_first {
                l2_normalize(batch.embedding(i))
            } else {
                Ok(batch.embedding(i).to_vec())
            }
        })
        .collect()
}

fn centers_from_rows(batch: &MiniBatch, rows: &[Vec<f64>], normalized: bool) -> CenterSet {
    let k = batch.k();
    let mean = |block: usize, m: Modality| {
        let mut c = vec![0.0; batch.dim()];
        for j in 0..k {
            axpy(1.0 / k as f64, &rows[batch.index_of(block, m, j)], &mut c);
        }
        c
    };
    CenterSet {
        visible: (0..batch.p()).map(|b| mean(b, Modality::Visible)).collect(),
        infrared: (0..batch.p()).map(|b| mean(b, Modality::Infrared)).collect(),
        normalized_inputs: normalized,
    }
}

pub fn compute_centers(batch: &MiniBatch, normalize_first: bool) -> Result<CenterSet> {
    let rows = member_rows(batch, normalize_first)?;
    Ok(centers_from_rows(batch, &rows, normalize_first))
}

/// Spreads per-center gradients (interleaved order) over the members: each
/// member of a center receives `g / K`.
fn scatter_to_members(batch: &MiniBatch, center_grads: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let inv_k = 1.0 / batch.k() as f64;
    (0..batch.len())
        .map(|i| {
            let slot = 2 * batch.block_of(i)
                + match batch.modality_of(i) {
                    Modality::Visible => 0,
                    Modality::Infrared => 1,
                };
            center_grads[slot].iter().map(|g| g * inv_k).collect()
        })
        .collect()
}

pub fn batch_hard_hetero_center_loss(batch: &MiniBatch, params: &TripletParams) -> Result<LossResult> {
    params.validate()?;
    let centers = compute_centers(batch, false)?;
    let rows = centers.interleaved();
    let count = rows.len();
    let mut pairs = EuclideanPairs::new(rows);
    let weight = params.sum_reduction(count);
    let mut value = 0.0;
    for anchor in 0..count {
        let identity = anchor / 2;
        let negative = pairs.closest(anchor, (0..count).filter(|c| c / 2 != identity));
        value += pairs.hinge(anchor, anchor ^ 1, negative, params.margin, weight);
    }
    let center_grads = pairs.backward();
    LossResult {
        value,
        embedding_grads: scatter_to_members(batch, &center_grads),
        weight_grads: None,
    }
    .check_finite()
}

pub fn batch_all_hetero_center_loss(batch: &MiniBatch, params: &TripletParams) -> Result<LossResult> {
    params.validate()?;
    let members = member_rows(batch, true)?;
    let centers = centers_from_rows(batch, &members, true);
    let rows = centers.interleaved();
    let count = rows.len();
    let gamma = params.scale;
    let weight = params.sum_reduction(count);

    let mut center_grads = vec![vec![0.0; batch.dim()]; count];
    let mut value = 0.0;
    for anchor in 0..count {
        let positive = anchor ^ 1;
        let (s_pos, ga_pos, gp) = cosine_similarity_grad(rows[anchor], rows[positive])?;
        let negatives: Vec<usize> = (0..count).filter(|c| c / 2 != anchor / 2).collect();
        let mut terms = Vec::with_capacity(negatives.len());
        let mut neg_grads = Vec::with_capacity(negatives.len());
        for &n in &negatives {
            let (s, ga, gn) = cosine_similarity_grad(rows[anchor], rows[n])?;
            terms.push(gamma * (s - s_pos + params.margin));
            neg_grads.push((ga, gn));
        }
        let (term, w) = log1p_sumexp_weights(&terms)?;
        value += weight * term;

        let mut pos_coef = 0.0;
        for ((&n, (ga, gn)), wn) in negatives.iter().zip(&neg_grads).zip(&w) {
            let c = weight * gamma * wn;
            axpy(c, ga, &mut center_grads[anchor]);
            axpy(c, gn, &mut center_grads[n]);
            pos_coef -= c;
        }
        axpy(pos_coef, &ga_pos, &mut center_grads[anchor]);
        axpy(pos_coef, &gp, &mut center_grads[positive]);
    }

    let unit_grads = scatter_to_members(batch, &center_grads);
    let embedding_grads = unit_grads
        .iter()
        .enumerate()
        .map(|(i, g)| l2_normalize_backward(batch.embedding(i), g))
        .collect::<Result<Vec<_>>>()?;
    LossResult {
        value,
        embedding_grads,
        weight_grads: None,
    }
    .check_finite()
}
