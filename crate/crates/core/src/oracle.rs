//! Brute-force reference implementations.
//!
//! Nothing here calls into the loss kernels or `numkit`: distances,
//! similarities and centers are recomputed naively so that agreement with the
//! kernels is independent evidence. Speed is not a concern.

use crate::batch::{MiniBatch, Modality};
use crate::error::{Error, Result};
use crate::triplet::TripletParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    CosineDistance,
}

fn naive_euclid(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..x.len() {
        acc += (x[i] - y[i]).powi(2);
    }
    acc.sqrt()
}

fn naive_cos(x: &[f64], y: &[f64]) -> f64 {
    let mut xy = 0.0;
    let mut xx = 0.0;
    let mut yy = 0.0;
    for i in 0..x.len() {
        xy += x[i] * y[i];
        xx += x[i] * x[i];
        yy += y[i] * y[i];
    }
    xy / (xx.sqrt() * yy.sqrt())
}

fn metric_distance(metric: Metric, x: &[f64], y: &[f64]) -> f64 {
    match metric {
        Metric::Euclidean => naive_euclid(x, y),
        Metric::CosineDistance => 1.0 - naive_cos(x, y),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    /// `m + d(a, p) - d(a, n)` before clipping.
    pub argument: f64,
    /// `[argument]_+`
    pub hinge: f64,
}

pub type TripletEnumeration = Vec<Triplet>;

/// Every `(a, p, n)` with `p ≠ a` sharing `a`'s identity and `n` from another
/// identity, in lexicographic index order.
pub fn enumerate_triplets(
    batch: &MiniBatch,
    params: &TripletParams,
    metric: Metric,
) -> TripletEnumeration {
    let samples = batch.samples();
    let mut out = Vec::new();
    for a in 0..samples.len() {
        for p in 0..samples.len() {
            if p == a || samples[p].identity != samples[a].identity {
                continue;
            }
            for n in 0..samples.len() {
                if samples[n].identity == samples[a].identity {
                    continue;
                }
                let argument = params.margin
                    + metric_distance(metric, &samples[a].embedding, &samples[p].embedding)
                    - metric_distance(metric, &samples[a].embedding, &samples[n].embedding);
                out.push(Triplet {
                    anchor: a,
                    positive: p,
                    negative: n,
                    argument,
                    hinge: argument.max(0.0),
                });
            }
        }
    }
    out
}

/// Per-anchor hardest triplet: largest argument, ties to the lowest `(p, n)`.
pub fn hardest_triplets(triplets: &[Triplet], anchors: usize) -> Vec<Triplet> {
    let mut best: Vec<Option<Triplet>> = vec![None; anchors];
    for t in triplets {
        let slot = &mut best[t.anchor];
        let replace = match slot {
            None => true,
            Some(b) => t.argument > b.argument,
        };
        if replace {
            *slot = Some(*t);
        }
    }
    best.into_iter()
        .map(|b| b.expect("every anchor has a triplet"))
        .collect()
}

/// Mean over anchors of the enumerated hinges.
pub fn batch_all_by_enumeration(batch: &MiniBatch, params: &TripletParams) -> f64 {
    let ts = enumerate_triplets(batch, params, Metric::Euclidean);
    ts.iter().map(|t| t.hinge).sum::<f64>() / batch.len() as f64
}

/// Sum over anchors of the largest enumerated hinge.
pub fn batch_hard_by_enumeration(batch: &MiniBatch, params: &TripletParams) -> f64 {
    let ts = enumerate_triplets(batch, params, Metric::Euclidean);
    hardest_triplets(&ts, batch.len())
        .iter()
        .map(|t| t.hinge)
        .sum()
}

/// Batch-hard value plus, per anchor, the largest hinge over triplets whose
/// positive and negative both come from the other modality.
pub fn cross_modality_batch_hard_by_enumeration(batch: &MiniBatch, params: &TripletParams) -> f64 {
    let samples = batch.samples();
    let ts = enumerate_triplets(batch, params, Metric::Euclidean);
    let mut cross = vec![0.0_f64; samples.len()];
    for t in &ts {
        let am = samples[t.anchor].modality;
        if samples[t.positive].modality != am && samples[t.negative].modality != am {
            cross[t.anchor] = cross[t.anchor].max(t.hinge);
        }
    }
    batch_hard_by_enumeration(batch, params) + cross.iter().sum::<f64>()
}

/// Unified batch-all value from the expanded double sum over `(p, n)` pairs,
/// plus the number of exponentials evaluated for each anchor.
pub fn unified_batch_all_naive(batch: &MiniBatch, params: &TripletParams) -> (f64, Vec<usize>) {
    let samples = batch.samples();
    let mut total = 0.0;
    let mut counts = Vec::new();
    for a in 0..samples.len() {
        let mut inner = 0.0;
        let mut count = 0;
        for p in 0..samples.len() {
            if p == a || samples[p].identity != samples[a].identity {
                continue;
            }
            for n in 0..samples.len() {
                if samples[n].identity == samples[a].identity {
                    continue;
                }
                let sp = naive_cos(&samples[a].embedding, &samples[p].embedding);
                let sn = naive_cos(&samples[a].embedding, &samples[n].embedding);
                inner += (params.scale * (sn - sp + params.margin)).exp();
                count += 1;
            }
        }
        total += (1.0 + inner).ln();
        counts.push(count);
    }
    (total / samples.len() as f64, counts)
}

/// Per-anchor `max(0, max_(p,n) (m + s_n - s_p))`, the hardest cosine-triplet
/// violation.
pub fn hardest_cosine_violation(batch: &MiniBatch, params: &TripletParams) -> Vec<f64> {
    let ts = enumerate_triplets(batch, params, Metric::CosineDistance);
    hardest_triplets(&ts, batch.len())
        .iter()
        .map(|t| t.hinge)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticCounts {
    pub anchors: usize,
    pub hard_pos_intra: usize,
    pub hard_neg_intra: usize,
    pub both_intra: usize,
}

/// Classifies each anchor's enumerated hardest triplet by modality.
pub fn mining_diagnostic_by_enumeration(batch: &MiniBatch) -> DiagnosticCounts {
    let samples = batch.samples();
    let params = TripletParams::new(0.0, 1.0);
    let ts = enumerate_triplets(batch, &params, Metric::Euclidean);
    let mut out = DiagnosticCounts {
        anchors: samples.len(),
        hard_pos_intra: 0,
        hard_neg_intra: 0,
        both_intra: 0,
    };
    for t in hardest_triplets(&ts, samples.len()) {
        let am = samples[t.anchor].modality;
        let pi = samples[t.positive].modality == am;
        let ni = samples[t.negative].modality == am;
        out.hard_pos_intra += pi as usize;
        out.hard_neg_intra += ni as usize;
        out.both_intra += (pi && ni) as usize;
    }
    out
}

/// Centers recomputed from scratch; index `2 * identity_block + modality`
/// with visible first.
pub fn naive_centers(batch: &MiniBatch, normalize_first: bool) -> Vec<Vec<f64>> {
    let samples = batch.samples();
    let dim = samples[0].embedding.len();
    let mut centers = vec![vec![0.0; dim]; 2 * batch.p()];
    for (idx, s) in samples.iter().enumerate() {
        let block = idx / (2 * batch.k());
        let slot = 2 * block
            + match s.modality {
                Modality::Visible => 0,
                Modality::Infrared => 1,
            };
        let scale = if normalize_first {
            let mut sq = 0.0;
            for v in s.embedding.iter() {
                sq += v * v;
            }
            1.0 / sq.sqrt()
        } else {
            1.0
        };
        for d in 0..dim {
            centers[slot][d] += s.embedding[d] * scale / batch.k() as f64;
        }
    }
    centers
}

/// Batch-hard hetero-center value by enumerating every center triplet.
pub fn bh_hetero_center_by_enumeration(batch: &MiniBatch, params: &TripletParams) -> f64 {
    let c = naive_centers(batch, false);
    let mut total = 0.0;
    for anchor in 0..c.len() {
        let positive = anchor ^ 1;
        let mut best = f64::NEG_INFINITY;
        for neg in 0..c.len() {
            if neg / 2 == anchor / 2 {
                continue;
            }
            let arg = params.margin + naive_euclid(&c[anchor], &c[positive])
                - naive_euclid(&c[anchor], &c[neg]);
            best = best.max(arg);
        }
        total += best.max(0.0);
    }
    total
}

/// Batch-all hetero-center value from normalized-member centers.
pub fn ba_hetero_center_naive(batch: &MiniBatch, params: &TripletParams) -> f64 {
    let c = naive_centers(batch, true);
    let mut total = 0.0;
    for anchor in 0..c.len() {
        let positive = anchor ^ 1;
        let mut inner = 0.0;
        for neg in 0..c.len() {
            if neg / 2 == anchor / 2 {
                continue;
            }
            let arg = naive_cos(&c[anchor], &c[neg]) - naive_cos(&c[anchor], &c[positive])
                + params.margin;
            inner += (params.scale * arg).exp();
        }
        total += (1.0 + inner).ln();
    }
    total
}

/// Smallest `|m + d(a,p) - d(a,n)|` over every sample triplet and the
/// smallest gap between two candidate distances an anchor could tie on.
/// Hinge and arg-max/arg-min kinks sit where either is zero.
pub fn sample_kink_distance(batch: &MiniBatch, params: &TripletParams) -> f64 {
    let samples = batch.samples();
    let mut closest = f64::INFINITY;
    for t in enumerate_triplets(batch, params, Metric::Euclidean) {
        closest = closest.min(t.argument.abs());
    }
    for a in 0..samples.len() {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for o in 0..samples.len() {
            if o == a {
                continue;
            }
            let d = naive_euclid(&samples[a].embedding, &samples[o].embedding);
            if samples[o].identity == samples[a].identity {
                pos.push(d);
            } else {
                neg.push(d);
            }
        }
        for set in [&pos, &neg] {
            for i in 0..set.len() {
                for j in (i + 1)..set.len() {
                    closest = closest.min((set[i] - set[j]).abs());
                }
            }
        }
    }
    closest
}

/// Kink distance for the batch-hard hetero-center loss.
pub fn center_kink_distance(batch: &MiniBatch, params: &TripletParams) -> f64 {
    let c = naive_centers(batch, false);
    let mut closest = f64::INFINITY;
    for anchor in 0..c.len() {
        let dp = naive_euclid(&c[anchor], &c[anchor ^ 1]);
        let mut negs = Vec::new();
        for neg in 0..c.len() {
            if neg / 2 != anchor / 2 {
                negs.push(naive_euclid(&c[anchor], &c[neg]));
            }
        }
        for (i, dn) in negs.iter().enumerate() {
            closest = closest.min((params.margin + dp - dn).abs());
            for other in &negs[i + 1..] {
                closest = closest.min((dn - other).abs());
            }
        }
    }
    closest
}

/// Central differences `(f(x + h eᵢ) - f(x - h eᵢ)) / 2h` for every coordinate.
pub fn finite_diff_gradient<F>(mut f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = f(&probe);
        probe[i] = orig - step;
        let minus = f(&probe);
        probe[i] = orig;
        grad.push((plus - minus) / (2.0 * step));
    }
    grad
}

/// Largest component-wise `|a - b| / max(|a|, |b|, floor · max(1, ‖b‖∞))`.
///
/// The floor scales with the gradient so that components far below the
/// finite-difference resolution of the largest one are compared at that
/// resolution instead of against zero.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let mut scale = 1.0_f64;
    for v in numeric {
        scale = scale.max(v.abs());
    }
    let mut worst = 0.0_f64;
    for i in 0..analytic.len() {
        let denom = analytic[i].abs().max(numeric[i].abs()).max(floor * scale);
        worst = worst.max((analytic[i] - numeric[i]).abs() / denom);
    }
    worst
}

/// Average precision of one ranked list: mean over relevant positions `k`
/// of `hits_in_first_k / k`.
pub fn exhaustive_ap(relevance: &[bool]) -> Result<f64> {
    let mut precisions = Vec::new();
    for k in 0..relevance.len() {
        if relevance[k] {
            let hits = relevance[..=k].iter().filter(|&&r| r).count();
            precisions.push(hits as f64 / (k + 1) as f64);
        }
    }
    if precisions.is_empty() {
        return Err(Error::NoRelevantItem);
    }
    Ok(precisions.iter().sum::<f64>() / precisions.len() as f64)
}
