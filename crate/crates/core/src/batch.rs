//! Identity/modality labels and 2PK mini-batch construction.
//!
//! A [`MiniBatch`] always uses the grouped layout: identity blocks of `2K`
//! samples, each block holding its `K` visible samples followed by its `K`
//! infrared samples. Every kernel and oracle relies on this order.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Embedding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visible,
    Infrared,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Visible => "visible",
            Modality::Infrared => "infrared",
        }
    }

    pub fn other(self) -> Modality {
        match self {
            Modality::Visible => Modality::Infrared,
            Modality::Infrared => Modality::Visible,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub embedding: Embedding,
    pub identity: usize,
    pub modality: Modality,
    /// Index among the samples sharing this `(identity, modality)`.
    pub sample_index: usize,
}

/// `P` persons per batch, `K` images per person and modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSpec {
    p: usize,
    k: usize,
}

impl BatchSpec {
    pub fn new(p: usize, k: usize) -> Result<Self> {
        if p < 2 {
            return Err(Error::TooFewIdentities(p));
        }
        if k < 1 {
            return Err(Error::InvalidBatch("K must be at least 1".into()));
        }
        Ok(Self { p, k })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn batch_size(&self) -> usize {
        2 * self.p * self.k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    samples: Vec<Sample>,
    spec: BatchSpec,
}

impl MiniBatch {
    /// Validates the grouped layout and returns the batch.
    pub fn new(samples: Vec<Sample>, spec: BatchSpec) -> Result<Self> {
        let (p, k) = (spec.p, spec.k);
        if samples.len() != spec.batch_size() {
            return Err(Error::InvalidBatch(format!(
                "expected {} samples for P={p}, K={k}, got {}",
                spec.batch_size(),
                samples.len()
            )));
        }
        let dim = samples[0].embedding.dim();
        let mut seen_ids = HashSet::new();
        let mut seen_keys = HashSet::new();
        for (block, chunk) in samples.chunks(2 * k).enumerate() {
            let id = chunk[0].identity;
            if !seen_ids.insert(id) {
                return Err(Error::InvalidBatch(format!(
                    "identity {id} appears in more than one block"
                )));
            }
            for (j, s) in chunk.iter().enumerate() {
                let want = if j < k {
                    Modality::Visible
                } else {
                    Modality::Infrared
                };
                if s.identity != id || s.modality != want {
                    return Err(Error::InvalidBatch(format!(
                        "block {block} position {j}: expected identity {id} {want}, found identity {} {}",
                        s.identity, s.modality
                    )));
                }
                if s.embedding.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        left: dim,
                        right: s.embedding.dim(),
                    });
                }
                if !seen_keys.insert((s.identity, s.modality, s.sample_index)) {
                    return Err(Error::InvalidBatch(format!(
                        "sample ({}, {}, {}) selected twice",
                        s.identity, s.modality, s.sample_index
                    )));
                }
            }
        }
        Ok(Self { samples, spec })
    }

    /// Builds a batch from embeddings already in grouped order, labelling
    /// block `i` as identity `i`.
    pub fn from_embeddings(p: usize, k: usize, embeddings: Vec<Vec<f64>>) -> Result<Self> {
        let spec = BatchSpec::new(p, k)?;
        if embeddings.len() != spec.batch_size() {
            return Err(Error::InvalidBatch(format!(
                "expected {} embeddings, got {}",
                spec.batch_size(),
                embeddings.len()
            )));
        }
        let samples = embeddings
            .into_iter()
            .enumerate()
            .map(|(idx, e)| {
                let within = idx % (2 * k);
                Ok(Sample {
                    embedding: Embedding::new(e)?,
                    identity: idx / (2 * k),
                    modality: if within < k {
                        Modality::Visible
                    } else {
                        Modality::Infrared
                    },
                    sample_index: within % k,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples, spec)
    }

    /// Same labels, new embedding values.
    pub fn with_embeddings(&self, embeddings: Vec<Vec<f64>>) -> Result<Self> {
        if embeddings.len() != self.samples.len() {
            return Err(Error::InvalidBatch("embedding count changed".into()));
        }
        let samples = self
            .samples
            .iter()
            .zip(embeddings)
            .map(|(s, e)| {
                Ok(Sample {
                    embedding: Embedding::new(e)?,
                    ..s.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples, self.spec)
    }

    pub fn spec(&self) -> BatchSpec {
        self.spec
    }

    pub fn p(&self) -> usize {
        self.spec.p
    }

    pub fn k(&self) -> usize {
        self.spec.k
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].embedding.dim()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn embedding(&self, idx: usize) -> &[f64] {
        &self.samples[idx].embedding
    }

    pub fn embeddings(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.embedding.to_vec()).collect()
    }

    /// Position of the identity block (0..P) containing sample `idx`.
    pub fn block_of(&self, idx: usize) -> usize {
        idx / (2 * self.spec.k)
    }

    pub fn modality_of(&self, idx: usize) -> Modality {
        if idx % (2 * self.spec.k) < self.spec.k {
            Modality::Visible
        } else {
            Modality::Infrared
        }
    }

    /// Batch index of the `j`-th sample of `modality` in block `block`.
    pub fn index_of(&self, block: usize, modality: Modality, j: usize) -> usize {
        let offset = match modality {
            Modality::Visible => 0,
            Modality::Infrared => self.spec.k,
        };
        block * 2 * self.spec.k + offset + j
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        vec![vec![0.0; self.dim()]; self.len()]
    }
}

struct IdentityPool {
    visible: Vec<usize>,
    infrared: Vec<usize>,
}

/// Draws a 2PK batch and returns dataset positions in canonical batch order.
pub fn sample_2pk_indices<R: Rng + ?Sized>(
    dataset: &[Sample],
    spec: BatchSpec,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut pools: BTreeMap<usize, IdentityPool> = BTreeMap::new();
    for (pos, s) in dataset.iter().enumerate() {
        let pool = pools.entry(s.identity).or_insert_with(|| IdentityPool {
            visible: Vec::new(),
            infrared: Vec::new(),
        });
        match s.modality {
            Modality::Visible => pool.visible.push(pos),
            Modality::Infrared => pool.infrared.push(pos),
        }
    }

    let mut eligible = Vec::new();
    let mut first_deficit = None;
    for (&id, pool) in &pools {
        let deficit = [
            (Modality::Visible, pool.visible.len()),
            (Modality::Infrared, pool.infrared.len()),
        ]
        .into_iter()
        .find(|&(_, n)| n < spec.k);
        match deficit {
            None => eligible.push(id),
            Some((m, n)) => {
                first_deficit.get_or_insert(Error::InsufficientSamples {
                    identity: id,
                    modality: m.as_str(),
                    available: n,
                    required: spec.k,
                });
            }
        }
    }
    if eligible.len() < spec.p {
        return Err(first_deficit.unwrap_or(Error::InsufficientIdentities {
            available: eligible.len(),
            required: spec.p,
        }));
    }

    let mut chosen: Vec<usize> = rand::seq::index::sample(rng, eligible.len(), spec.p)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    chosen.sort_unstable();

    let mut out = Vec::with_capacity(spec.batch_size());
    for id in chosen {
        let pool = &pools[&id];
        for members in [&pool.visible, &pool.infrared] {
            let mut picked: Vec<usize> = rand::seq::index::sample(rng, members.len(), spec.k)
                .into_iter()
                .map(|i| members[i])
                .collect();
            picked.sort_unstable();
            out.extend(picked);
        }
    }
    Ok(out)
}

/// Draws P identities, then K visible and K infrared samples of each,
/// without replacement inside the batch.
pub fn sample_2pk<R: Rng + ?Sized>(
    dataset: &[Sample],
    spec: BatchSpec,
    rng: &mut R,
) -> Result<MiniBatch> {
    let indices = sample_2pk_indices(dataset, spec, rng)?;
    let samples = indices.into_iter().map(|i| dataset[i].clone()).collect();
    MiniBatch::new(samples, spec)
}

/// Batches per epoch: `⌊dataset_size / 2PK⌋`, at least one.
pub fn batches_per_epoch(dataset_size: usize, spec: BatchSpec) -> usize {
    (dataset_size / spec.batch_size()).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn dataset(ids: usize, vis: usize, ir: usize) -> Vec<Sample> {
        let mut out = Vec::new();
        for id in 0..ids {
            for (m, n) in [(Modality::Visible, vis), (Modality::Infrared, ir)] {
                for j in 0..n {
                    out.push(Sample {
                        embedding: Embedding::new(vec![id as f64, j as f64 + 1.0]).unwrap(),
                        identity: id,
                        modality: m,
                        sample_index: j,
                    });
                }
            }
        }
        out
    }

    fn cell_counts(batch: &MiniBatch) -> HashMap<(usize, Modality), usize> {
        let mut counts = HashMap::new();
        for s in batch.samples() {
            *counts.entry((s.identity, s.modality)).or_insert(0) += 1;
        }
        counts
    }

    #[test]
    fn reference_batch_size() {
        let data = dataset(6, 8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = sample_2pk(&data, BatchSpec::new(6, 8).unwrap(), &mut rng).unwrap();
        assert_eq!(batch.len(), 96);
        assert!(cell_counts(&batch).values().all(|&c| c == 8));
    }

    #[test]
    fn exhaustive_selection() {
        let data = dataset(2, 1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = sample_2pk(&data, BatchSpec::new(2, 1).unwrap(), &mut rng).unwrap();
        assert_eq!(batch.len(), 4);
        assert_eq!(cell_counts(&batch).len(), 4);
    }

    #[test]
    fn missing_modality_names_identity() {
        let mut data = dataset(2, 1, 1);
        data.retain(|s| !(s.identity == 1 && s.modality == Modality::Infrared));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = sample_2pk(&data, BatchSpec::new(2, 1).unwrap(), &mut rng).unwrap_err();
        match err {
            Error::InsufficientSamples {
                identity, modality, ..
            } => {
                assert_eq!(identity, 1);
                assert_eq!(modality, "infrared");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn spec_rejects_single_identity() {
        assert!(matches!(BatchSpec::new(1, 4), Err(Error::TooFewIdentities(1))));
        assert!(BatchSpec::new(2, 0).is_err());
        assert!(MiniBatch::from_embeddings(1, 1, vec![vec![1.0], vec![2.0]]).is_err());
    }

    #[test]
    fn layout_validation() {
        let good = MiniBatch::from_embeddings(2, 1, vec![vec![1.0]; 4]).unwrap();
        let mut samples = good.samples().to_vec();
        samples.swap(0, 1);
        assert!(MiniBatch::new(samples, good.spec()).is_err());
        assert_eq!(good.index_of(1, Modality::Infrared, 0), 3);
        assert_eq!(good.modality_of(2), Modality::Visible);
        assert_eq!(good.block_of(3), 1);
    }

    #[test]
    fn seeds_control_the_draw() {
        let data = dataset(30, 10, 10);
        let spec = BatchSpec::new(4, 3).unwrap();
        let a = sample_2pk_indices(&data, spec, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = sample_2pk_indices(&data, spec, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let c = sample_2pk_indices(&data, spec, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn epoch_length() {
        let spec = BatchSpec::new(6, 8).unwrap();
        assert_eq!(batches_per_epoch(640, spec), 6);
        assert_eq!(batches_per_epoch(10, spec), 1);
    }

    proptest::proptest! {
        #[test]
        fn every_cell_has_k(seed in 0u64..1000, p in 2usize..5, k in 1usize..4, extra in 0usize..3) {
            let data = dataset(p + extra, k + extra, k + 1);
            let spec = BatchSpec::new(p, k).unwrap();
            let batch = sample_2pk(&data, spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let counts = cell_counts(&batch);
            proptest::prop_assert_eq!(counts.len(), 2 * p);
            proptest::prop_assert!(counts.values().all(|&c| c == k));
        }
    }
}
