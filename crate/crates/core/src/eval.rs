//! Cross-modality retrieval: cosine-distance ranking, CMC and mAP under
//! single-shot and multi-shot galleries.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::Sample;
use crate::error::{Error, Result};
use crate::numkit::cosine_similarity;

/// `1 − cos(x, y)`, in `[0, 2]`.
pub fn cosine_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(1.0 - cosine_similarity(x, y)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shot {
    /// One randomly drawn gallery sample per identity, repeated over trials.
    Single,
    /// The full gallery, one pass.
    Multi,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Protocol {
    pub shot: Shot,
    pub trials: usize,
    /// Gallery draws are per identity; there are no cameras to draw over.
    pub gallery_draw: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    /// `cmc[r]` is the fraction of queries matched within the top `r + 1`.
    pub cmc: Vec<f64>,
    pub map: f64,
    pub protocol: Protocol,
}

impl RetrievalReport {
    /// CMC at 1-based `rank`; ranks past the gallery depth take the last value.
    pub fn cmc_at(&self, rank: usize) -> f64 {
        assert!(rank >= 1, "ranks are 1-based");
        self.cmc[(rank - 1).min(self.cmc.len() - 1)]
    }
}

/// Average precision of one ranking and the 0-based rank of its first hit.
/// `None` when nothing is relevant.
fn score_ranking(relevant: impl Iterator<Item = bool>) -> Option<(f64, usize)> {
    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    let mut first = None;
    for (rank, rel) in relevant.enumerate() {
        if rel {
            hits += 1;
            precision_sum += hits as f64 / (rank + 1) as f64;
            first.get_or_insert(rank);
        }
    }
    first.map(|f| (precision_sum / hits as f64, f))
}

/// Gallery positions sorted by ascending distance; ties keep gallery order.
pub fn rank_gallery(query: &[f64], gallery: &[&Sample]) -> Result<Vec<usize>> {
    let dist = gallery
        .iter()
        .map(|g| cosine_distance(query, &g.embedding))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..gallery.len()).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
    Ok(order)
}

fn check_inputs(queries: &[Sample], gallery: &[Sample]) -> Result<()> {
    let (Some(q0), Some(_)) = (queries.first(), gallery.first()) else {
        return Err(Error::InvalidBatch("queries and gallery must be non-empty".into()));
    };
    let qm = q0.modality;
    if queries.iter().any(|q| q.modality != qm) || gallery.iter().any(|g| g.modality == qm) {
        return Err(Error::SameModality);
    }
    for q in queries {
        if !gallery.iter().any(|g| g.identity == q.identity) {
            return Err(Error::MissingGalleryIdentity(q.identity));
        }
    }
    Ok(())
}

/// Accumulates CMC counts and AP over all queries against one gallery.
fn score_gallery(queries: &[Sample], gallery: &[&Sample], cmc: &mut [f64], ap_sum: &mut f64) -> Result<()> {
    for q in queries {
        let order = rank_gallery(&q.embedding, gallery)?;
        let (ap, first) = score_ranking(order.iter().map(|&i| gallery[i].identity == q.identity))
            .ok_or(Error::MissingGalleryIdentity(q.identity))?;
        *ap_sum += ap;
        for c in &mut cmc[first..] {
            *c += 1.0;
        }
    }
    Ok(())
}

pub fn evaluate<R: Rng + ?Sized>(
    queries: &[Sample],
    gallery: &[Sample],
    shot: Shot,
    trials: usize,
    rng: &mut R,
) -> Result<RetrievalReport> {
    check_inputs(queries, gallery)?;
    let (trials, galleries): (usize, Vec<Vec<&Sample>>) = match shot {
        Shot::Multi => (1, vec![gallery.iter().collect()]),
        Shot::Single => {
            if trials == 0 {
                return Err(Error::InvalidConfig("single-shot evaluation needs at least one trial".into()));
            }
            let mut by_identity: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (pos, g) in gallery.iter().enumerate() {
                by_identity.entry(g.identity).or_default().push(pos);
            }
            let draws = (0..trials)
                .map(|_| {
                    let mut picks: Vec<usize> = by_identity
                        .values()
                        .map(|members| members[rng.random_range(0..members.len())])
                        .collect();
                    picks.sort_unstable();
                    picks.into_iter().map(|p| &gallery[p]).collect()
                })
                .collect();
            (trials, draws)
        }
    };

    let depth = galleries[0].len();
    let mut cmc = vec![0.0; depth];
    let mut ap_sum = 0.0;
    for g in &galleries {
        score_gallery(queries, g, &mut cmc, &mut ap_sum)?;
    }
    let runs = (queries.len() * trials) as f64;
    for c in &mut cmc {
        *c /= runs;
    }
    Ok(RetrievalReport {
        cmc,
        map: ap_sum / runs,
        protocol: Protocol {
            shot,
            trials,
            gallery_draw: "identity-level".into(),
        },
    })
}
