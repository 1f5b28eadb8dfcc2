//! Training a free embedding table (one learnable vector per sample) with
//! Adam under a sum of selected losses, plus a synthetic two-modality
//! dataset generator.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::batch::{batches_per_epoch, sample_2pk_indices, BatchSpec, MiniBatch, Modality, Sample};
use crate::center::{batch_all_hetero_center_loss, batch_hard_hetero_center_loss};
use crate::classify::{cosine_softmax_loss, mean_classification_loss, softmax_loss, ClassifierWeights, ClassifyParams};
use crate::error::{Error, Result};
use crate::numkit::{axpy, Embedding};
use crate::triplet::{
    batch_all_loss, batch_hard_loss, cross_modality_batch_hard_loss, unified_batch_all_loss, LossResult,
    TripletParams,
};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    BatchHard,
    CmBatchHard,
    BatchAll,
    UnifiedBatchAll,
    Softmax,
    CosineSoftmax,
    BhHeteroCenter,
    BaHeteroCenter,
}

impl LossKind {
    pub const ALL: [LossKind; 8] = [
        LossKind::BatchHard,
        LossKind::CmBatchHard,
        LossKind::BatchAll,
        LossKind::UnifiedBatchAll,
        LossKind::Softmax,
        LossKind::CosineSoftmax,
        LossKind::BhHeteroCenter,
        LossKind::BaHeteroCenter,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::BatchHard => "batch_hard",
            LossKind::CmBatchHard => "cm_batch_hard",
            LossKind::BatchAll => "batch_all",
            LossKind::UnifiedBatchAll => "unified_batch_all",
            LossKind::Softmax => "softmax",
            LossKind::CosineSoftmax => "cosine_softmax",
            LossKind::BhHeteroCenter => "bh_hetero_center",
            LossKind::BaHeteroCenter => "ba_hetero_center",
        }
    }

    pub fn is_classification(self) -> bool {
        matches!(self, LossKind::Softmax | LossKind::CosineSoftmax)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub identities: usize,
    pub samples_per_modality: usize,
    pub dim: usize,
    /// Radius of the sphere the identity centers are drawn on.
    pub identity_spread: f64,
    pub modality_offset: f64,
    /// Within-identity standard deviation per coordinate.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            identities: 40,
            samples_per_modality: 8,
            dim: 32,
            identity_spread: 1.0,
            modality_offset: 0.6,
            noise: 0.25,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.identities < 2 {
            return Err(Error::InvalidConfig(format!(
                "synthetic.identities must be at least 2, got {}",
                self.identities
            )));
        }
        if self.samples_per_modality == 0 {
            return Err(Error::InvalidConfig("synthetic.samples_per_modality must be positive".into()));
        }
        if self.dim == 0 {
            return Err(Error::InvalidConfig("synthetic.dim must be positive".into()));
        }
        if !(self.identity_spread.is_finite() && self.identity_spread > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "synthetic.identity_spread must be positive, got {}",
                self.identity_spread
            )));
        }
        for (name, v) in [("modality_offset", self.modality_offset), ("noise", self.noise)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("synthetic.{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit_vec<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(rng, dim);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Samples ordered by identity, then visible before infrared, then index.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.identities * spec.samples_per_modality * 2);
    for identity in 0..spec.identities {
        let center: Vec<f64> = unit_vec(&mut rng, spec.dim)
            .into_iter()
            .map(|x| x * spec.identity_spread)
            .collect();
        for modality in [Modality::Visible, Modality::Infrared] {
            let offset = unit_vec(&mut rng, spec.dim);
            let mut base = center.clone();
            axpy(spec.modality_offset, &offset, &mut base);
            for sample_index in 0..spec.samples_per_modality {
                let mut e = base.clone();
                axpy(spec.noise, &gaussian_vec(&mut rng, spec.dim), &mut e);
                out.push(Sample {
                    embedding: Embedding::new(e)?,
                    identity,
                    modality,
                    sample_index,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub spec: BatchSpec,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    /// Margin for the hinge losses; margin and scale for unified batch all.
    pub triplet: TripletParams,
    pub center: TripletParams,
    pub classify: ClassifyParams,
    pub losses: Vec<LossKind>,
    /// Standard deviation of the noise added to table rows at initialization.
    pub init_noise: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            spec: BatchSpec::new(6, 8).expect("valid default"),
            epochs: 24,
            warmup_epochs: 2,
            base_lr: 6e-4,
            weight_decay: 5e-4,
            triplet: TripletParams::new(0.3, 12.0),
            center: TripletParams::new(0.3, 12.0),
            classify: ClassifyParams::new(0.3, 64.0),
            losses: vec![LossKind::UnifiedBatchAll, LossKind::CosineSoftmax, LossKind::BaHeteroCenter],
            init_noise: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        BatchSpec::new(self.spec.p(), self.spec.k())
            .map_err(|e| Error::InvalidConfig(format!("train.spec: {e}")))?;
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("train.epochs must be at least 1".into()));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::InvalidConfig(format!(
                "train.warmup_epochs ({}) must be less than train.epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::InvalidConfig(format!("train.base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "train.weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if !(self.init_noise.is_finite() && self.init_noise >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "train.init_noise must be non-negative, got {}",
                self.init_noise
            )));
        }
        let prefix = |field: &'static str| move |e: Error| Error::InvalidConfig(format!("train.{field}: {e}"));
        self.triplet.validate().map_err(prefix("triplet"))?;
        self.center.validate().map_err(prefix("center"))?;
        self.classify.validate().map_err(prefix("classify"))?;
        if self.losses.is_empty() {
            return Err(Error::InvalidConfig("train.losses must select at least one loss".into()));
        }
        for (i, l) in self.losses.iter().enumerate() {
            if self.losses[..i].contains(l) {
                return Err(Error::InvalidConfig(format!("train.losses lists {l} twice")));
            }
        }
        Ok(())
    }
}

/// Linear warmup to `base_lr`, then cosine annealing towards zero.
pub fn lr_at_epoch(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::EpochOutOfRange {
            epoch,
            epochs: cfg.epochs,
        });
    }
    let (w, e) = (cfg.warmup_epochs, cfg.epochs);
    if epoch < w {
        return Ok(cfg.base_lr * (epoch + 1) as f64 / w as f64);
    }
    let phase = (epoch - w) as f64 / (e - w) as f64;
    Ok(0.5 * cfg.base_lr * (1.0 + (PI * phase).cos()))
}

/// Adam moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    /// One Adam update with `weight_decay · θ` added to the gradient.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                left: params.len().max(grads.len()),
                right: self.m.len(),
            });
        }
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i] + weight_decay * params[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
        Ok(())
    }
}

/// Learnable state: one row per dataset sample plus the classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub embeddings: Vec<Embedding>,
    pub classifier: ClassifierWeights,
}

impl EmbeddingTable {
    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    /// The dataset with every embedding replaced by its table row.
    pub fn samples(&self, dataset: &[Sample]) -> Vec<Sample> {
        dataset
            .iter()
            .zip(&self.embeddings)
            .map(|(s, e)| Sample {
                embedding: e.clone(),
                ..s.clone()
            })
            .collect()
    }
}

/// Loss values and gradients of the selected objective on one batch.
#[derive(Debug, Clone)]
pub struct BatchObjective {
    /// Dataset positions of the batch rows, in batch order.
    pub indices: Vec<usize>,
    /// One value per selected loss, in selection order.
    pub values: Vec<f64>,
    pub total: f64,
    pub embedding_grads: Vec<Vec<f64>>,
    pub classifier_grads: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub losses: Vec<f64>,
    pub total: f64,
}

pub struct Trainer {
    cfg: TrainConfig,
    dataset: Vec<Sample>,
    table: EmbeddingTable,
    class_of: BTreeMap<usize, usize>,
    table_adam: AdamState,
    classifier_adam: AdamState,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(dataset: Vec<Sample>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let first = dataset
            .first()
            .ok_or_else(|| Error::InvalidBatch("empty dataset".into()))?;
        let dim = first.embedding.dim();
        let class_of: BTreeMap<usize, usize> = dataset
            .iter()
            .map(|s| (s.identity, 0))
            .collect::<BTreeMap<_, _>>()
            .into_keys()
            .enumerate()
            .map(|(c, id)| (id, c))
            .collect();
        // Fail early rather than on the first step.
        let mut probe = ChaCha8Rng::seed_from_u64(cfg.seed);
        sample_2pk_indices(&dataset, cfg.spec, &mut probe)?;

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut embeddings = Vec::with_capacity(dataset.len());
        for s in &dataset {
            if s.embedding.dim() != dim {
                return Err(Error::DimensionMismatch {
                    left: dim,
                    right: s.embedding.dim(),
                });
            }
            let mut row = s.embedding.to_vec();
            axpy(cfg.init_noise, &gaussian_vec(&mut rng, dim), &mut row);
            embeddings.push(Embedding::new(row)?);
        }
        let columns = (0..class_of.len()).map(|_| unit_vec(&mut rng, dim)).collect();
        let table = EmbeddingTable {
            embeddings,
            classifier: ClassifierWeights::new(columns)?,
        };
        let classes = class_of.len();
        Ok(Self {
            table_adam: AdamState::new(dataset.len() * dim),
            classifier_adam: AdamState::new(classes * dim),
            cfg,
            dataset,
            table,
            class_of,
            rng,
        })
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    pub fn into_table(self) -> EmbeddingTable {
        self.table
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn dataset(&self) -> &[Sample] {
        &self.dataset
    }

    /// Draws the next 2PK batch from the trainer's own random stream.
    pub fn sample_batch(&mut self) -> Result<Vec<usize>> {
        sample_2pk_indices(&self.dataset, self.cfg.spec, &mut self.rng)
    }

    fn batch_for(&self, indices: &[usize]) -> Result<MiniBatch> {
        let samples = indices
            .iter()
            .map(|&i| Sample {
                embedding: self.table.embeddings[i].clone(),
                ..self.dataset[i].clone()
            })
            .collect();
        MiniBatch::new(samples, self.cfg.spec)
    }

    fn single_loss(&self, kind: LossKind, batch: &MiniBatch) -> Result<LossResult> {
        let cfg = &self.cfg;
        match kind {
            LossKind::BatchHard => batch_hard_loss(batch, &cfg.triplet),
            LossKind::CmBatchHard => cross_modality_batch_hard_loss(batch, &cfg.triplet),
            LossKind::BatchAll => batch_all_loss(batch, &cfg.triplet),
            LossKind::UnifiedBatchAll => unified_batch_all_loss(batch, &cfg.triplet),
            LossKind::BhHeteroCenter => batch_hard_hetero_center_loss(batch, &cfg.center),
            LossKind::BaHeteroCenter => batch_all_hetero_center_loss(batch, &cfg.center),
            LossKind::Softmax | LossKind::CosineSoftmax => {
                let rows: Vec<&[f64]> = (0..batch.len()).map(|i| batch.embedding(i)).collect();
                let labels: Vec<usize> = batch.samples().iter().map(|s| self.class_of[&s.identity]).collect();
                let w = &self.table.classifier;
                if kind == LossKind::Softmax {
                    mean_classification_loss(&rows, &labels, w, softmax_loss)
                } else {
                    mean_classification_loss(&rows, &labels, w, |x, y, w| {
                        cosine_softmax_loss(x, y, w, &cfg.classify)
                    })
                }
            }
        }
    }

    /// Evaluates the selected objective on the batch formed by `indices`.
    pub fn evaluate_batch(&self, indices: &[usize]) -> Result<BatchObjective> {
        let batch = self.batch_for(indices)?;
        let mut values = Vec::with_capacity(self.cfg.losses.len());
        let mut embedding_grads = batch.zero_grads();
        let mut classifier_grads: Option<Vec<Vec<f64>>> = None;
        for &kind in &self.cfg.losses {
            let r = self.single_loss(kind, &batch)?;
            values.push(r.value);
            for (acc, g) in embedding_grads.iter_mut().zip(&r.embedding_grads) {
                axpy(1.0, g, acc);
            }
            if let Some(wg) = r.weight_grads {
                match classifier_grads.as_mut() {
                    None => classifier_grads = Some(wg),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&wg) {
                            axpy(1.0, g, a);
                        }
                    }
                }
            }
        }
        let total = values.iter().sum();
        if !f64::is_finite(total) {
            return Err(Error::NonFinite);
        }
        Ok(BatchObjective {
            indices: indices.to_vec(),
            values,
            total,
            embedding_grads,
            classifier_grads,
        })
    }

    /// Applies one Adam update to the whole table (and the classifier when a
    /// classification loss is selected).
    pub fn apply(&mut self, objective: &BatchObjective, lr: f64) -> Result<()> {
        let dim = self.table.classifier.dim();
        let mut flat: Vec<f64> = self.table.embeddings.iter().flat_map(|e| e.iter().copied()).collect();
        let mut grads = vec![0.0; flat.len()];
        for (&i, g) in objective.indices.iter().zip(&objective.embedding_grads) {
            axpy(1.0, g, &mut grads[i * dim..(i + 1) * dim]);
        }
        self.table_adam.step(&mut flat, &grads, lr, self.cfg.weight_decay)?;
        self.table.embeddings = flat
            .chunks(dim)
            .map(|c| Embedding::new(c.to_vec()))
            .collect::<Result<_>>()?;

        if self.cfg.losses.iter().any(|l| l.is_classification()) {
            let mut w: Vec<f64> = self.table.classifier.columns().concat();
            let g = objective
                .classifier_grads
                .as_ref()
                .map_or_else(|| vec![0.0; w.len()], |g| g.concat());
            self.classifier_adam.step(&mut w, &g, lr, self.cfg.weight_decay)?;
            self.table.classifier = ClassifierWeights::new(w.chunks(dim).map(<[f64]>::to_vec).collect())?;
        }
        Ok(())
    }

    /// Samples a batch, evaluates the objective and applies the update.
    pub fn step(&mut self, lr: f64) -> Result<BatchObjective> {
        let indices = self.sample_batch()?;
        let objective = self.evaluate_batch(&indices)?;
        self.apply(&objective, lr)?;
        Ok(objective)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub table: EmbeddingTable,
    pub trace: Vec<TraceRow>,
}

pub fn train_run(dataset: &[Sample], cfg: &TrainConfig) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(dataset.to_vec(), cfg.clone())?;
    let per_epoch = batches_per_epoch(dataset.len(), cfg.spec);
    let mut trace = Vec::with_capacity(cfg.epochs * per_epoch);
    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(epoch, cfg)?;
        for _ in 0..per_epoch {
            let obj = trainer.step(lr)?;
            trace.push(TraceRow {
                step: trace.len(),
                epoch,
                lr,
                losses: obj.values,
                total: obj.total,
            });
        }
    }
    Ok(TrainOutput {
        table: trainer.into_table(),
        trace,
    })
}

/// Writes the trace as CSV: `step,epoch,lr,<loss...>,total`, reals fixed to
/// six decimals.
pub fn write_trace_csv<W: Write>(mut out: W, losses: &[LossKind], trace: &[TraceRow]) -> Result<()> {
    let mut header = vec!["step".to_string(), "epoch".into(), "lr".into()];
    header.extend(losses.iter().map(|l| l.as_str().to_string()));
    header.push("total".into());
    writeln!(out, "{}", header.join(","))?;
    for row in trace {
        let mut cells = vec![row.step.to_string(), row.epoch.to_string(), format!("{:.6}", row.lr)];
        cells.extend(row.losses.iter().map(|v| format!("{v:.6}")));
        cells.push(format!("{:.6}", row.total));
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}
