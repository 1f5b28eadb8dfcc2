//! Built-in oracle-equivalence and gradient checks on seeded instances.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vireid_lab::center::{batch_all_hetero_center_loss, batch_hard_hetero_center_loss};
use vireid_lab::classify::{cosine_softmax_loss, softmax_loss, ClassifierWeights, ClassifyParams};
use vireid_lab::oracle;
use vireid_lab::triplet::{
    batch_all_loss, batch_hard_loss, cross_modality_batch_hard_loss, expanded_exp_count, factored_exp_count,
    unified_batch_all_loss, unified_batch_all_loss_instrumented,
};
use vireid_lab::{LossResult, MiniBatch, Result, TripletParams};

pub type BatchKernel = fn(&MiniBatch, &TripletParams) -> Result<LossResult>;
pub type ClassifierKernel = fn(&[f64], usize, &ClassifierWeights, &ClassifyParams) -> Result<LossResult>;

const ORACLE_BATCHES: usize = 100;
const GRADIENT_INSTANCES: usize = 25;
const STEP: f64 = 1e-5;
const KINK: f64 = 1e-4;
const TOLERANCE: f64 = 1e-4;
const FLOOR: f64 = 1e-4;

fn plain_softmax(x: &[f64], y: usize, w: &ClassifierWeights, _: &ClassifyParams) -> Result<LossResult> {
    softmax_loss(x, y, w)
}

/// The kernels under test; replaceable so broken implementations can be
/// shown to fail.
#[derive(Clone, Copy)]
pub struct Kernels {
    pub batch_hard: BatchKernel,
    pub cm_batch_hard: BatchKernel,
    pub batch_all: BatchKernel,
    pub unified_batch_all: BatchKernel,
    pub bh_hetero_center: BatchKernel,
    pub ba_hetero_center: BatchKernel,
    pub softmax: ClassifierKernel,
    pub cosine_softmax: ClassifierKernel,
}

impl Default for Kernels {
    fn default() -> Self {
        Self {
            batch_hard: batch_hard_loss,
            cm_batch_hard: cross_modality_batch_hard_loss,
            batch_all: batch_all_loss,
            unified_batch_all: unified_batch_all_loss,
            bh_hetero_center: batch_hard_hetero_center_loss,
            ba_hetero_center: batch_all_hetero_center_loss,
            softmax: plain_softmax,
            cosine_softmax: cosine_softmax_loss,
        }
    }
}

#[derive(Clone, Copy)]
enum Kinks {
    None,
    Samples,
    Centers,
}

type Oracle = fn(&MiniBatch, &TripletParams) -> f64;

fn unified_oracle(b: &MiniBatch, p: &TripletParams) -> f64 {
    oracle::unified_batch_all_naive(b, p).0
}

struct BatchCase {
    name: &'static str,
    kernel: BatchKernel,
    oracle: Oracle,
    /// Relative tolerance against the oracle.
    tolerance: f64,
    scale: f64,
    kinks: Kinks,
}

fn random_batch(rng: &mut ChaCha8Rng, p: usize, k: usize, dim: usize) -> MiniBatch {
    let rows = (0..2 * p * k)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    MiniBatch::from_embeddings(p, k, rows).expect("valid random batch")
}

fn flatten(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.concat()
}

fn unflatten(x: &[f64], dim: usize) -> Vec<Vec<f64>> {
    x.chunks(dim).map(<[f64]>::to_vec).collect()
}

fn report<W: Write>(out: &mut W, ok: bool, line: std::fmt::Arguments) -> io::Result<bool> {
    writeln!(out, "{} {line}", if ok { "PASS" } else { "FAIL" })?;
    Ok(ok)
}

fn oracle_check(case: &BatchCase, batches: usize, seed: u64) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = TripletParams::new(0.3, case.scale);
    let mut passed = 0;
    let mut worst = 0.0f64;
    for _ in 0..batches {
        let (p, k, dim) = (rng.random_range(2..=4), rng.random_range(1..=3), rng.random_range(2..=6));
        let batch = random_batch(&mut rng, p, k, dim);
        let expected = (case.oracle)(&batch, &params);
        let err = match (case.kernel)(&batch, &params) {
            Ok(r) => (r.value - expected).abs() / expected.abs().max(1.0),
            Err(_) => f64::INFINITY,
        };
        worst = worst.max(err);
        if err <= case.tolerance {
            passed += 1;
        }
    }
    (passed, worst)
}

fn gradient_check(case: &BatchCase, instances: usize, seed: u64) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = TripletParams::new(0.3, case.scale);
    let (mut passed, mut checked) = (0, 0);
    let mut worst = 0.0f64;
    while checked < instances {
        let (p, k, dim) = (
            rng.random_range(2..=3),
            rng.random_range(1..=3),
            if rng.random_bool(0.5) { 2 } else { 5 },
        );
        let batch = random_batch(&mut rng, p, k, dim);
        let near = match case.kinks {
            Kinks::None => f64::INFINITY,
            Kinks::Samples => oracle::sample_kink_distance(&batch, &params),
            Kinks::Centers => oracle::center_kink_distance(&batch, &params),
        };
        if near < KINK {
            continue;
        }
        checked += 1;
        let Ok(r) = (case.kernel)(&batch, &params) else {
            worst = f64::INFINITY;
            continue;
        };
        let numeric = oracle::finite_diff_gradient(
            |x| match batch.with_embeddings(unflatten(x, dim)) {
                Ok(b) => (case.kernel)(&b, &params).map_or(f64::NAN, |r| r.value),
                Err(_) => f64::NAN,
            },
            &flatten(&batch.embeddings()),
            STEP,
        );
        let err = oracle::max_relative_error(&flatten(&r.embedding_grads), &numeric, FLOOR);
        let err = if err.is_nan() { f64::INFINITY } else { err };
        worst = worst.max(err);
        if err < TOLERANCE {
            passed += 1;
        }
    }
    (passed, worst)
}

fn classifier_check(kernel: ClassifierKernel, instances: usize, seed: u64) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ClassifyParams::new(0.3, 64.0);
    let mut passed = 0;
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let dim = if rng.random_bool(0.5) { 2 } else { 5 };
        let classes = rng.random_range(2..=5);
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cols: Vec<Vec<f64>> = (0..classes)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let label = rng.random_range(0..classes);
        let eval = |x: &[f64], cols: Vec<Vec<f64>>| {
            ClassifierWeights::new(cols).and_then(|w| kernel(x, label, &w, &params))
        };
        let Ok(r) = eval(&x, cols.clone()) else {
            worst = f64::INFINITY;
            continue;
        };
        let value = |res: Result<LossResult>| res.map_or(f64::NAN, |r| r.value);
        let nx = oracle::finite_diff_gradient(|p| value(eval(p, cols.clone())), &x, STEP);
        let nw = oracle::finite_diff_gradient(|p| value(eval(&x, unflatten(p, dim))), &flatten(&cols), STEP);
        let ex = oracle::max_relative_error(&r.embedding_grads[0], &nx, FLOOR);
        let ew = match &r.weight_grads {
            Some(g) => oracle::max_relative_error(&flatten(g), &nw, FLOOR),
            None => f64::INFINITY,
        };
        let err = ex.max(ew);
        let err = if err.is_nan() { f64::INFINITY } else { err };
        worst = worst.max(err);
        if err < TOLERANCE {
            passed += 1;
        }
    }
    (passed, worst)
}

/// Result of one named check over a number of seeded instances.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: usize,
    pub total: usize,
    /// Largest error seen (relative for gradients, scaled absolute for
    /// oracle comparisons).
    pub worst: f64,
}

impl CheckOutcome {
    pub fn ok(&self) -> bool {
        self.passed == self.total
    }
}

fn batch_cases(kernels: &Kernels) -> [BatchCase; 6] {
    [
        BatchCase {
            name: "batch_hard",
            kernel: kernels.batch_hard,
            oracle: oracle::batch_hard_by_enumeration,
            tolerance: 1e-12,
            scale: 1.0,
            kinks: Kinks::Samples,
        },
        BatchCase {
            name: "cm_batch_hard",
            kernel: kernels.cm_batch_hard,
            oracle: oracle::cross_modality_batch_hard_by_enumeration,
            tolerance: 1e-12,
            scale: 1.0,
            kinks: Kinks::Samples,
        },
        BatchCase {
            name: "batch_all",
            kernel: kernels.batch_all,
            oracle: oracle::batch_all_by_enumeration,
            tolerance: 1e-12,
            scale: 1.0,
            kinks: Kinks::Samples,
        },
        BatchCase {
            name: "unified_batch_all",
            kernel: kernels.unified_batch_all,
            oracle: unified_oracle,
            tolerance: 1e-9,
            scale: 12.0,
            kinks: Kinks::None,
        },
        BatchCase {
            name: "bh_hetero_center",
            kernel: kernels.bh_hetero_center,
            oracle: oracle::bh_hetero_center_by_enumeration,
            tolerance: 1e-12,
            scale: 1.0,
            kinks: Kinks::Centers,
        },
        BatchCase {
            name: "ba_hetero_center",
            kernel: kernels.ba_hetero_center,
            oracle: oracle::ba_hetero_center_naive,
            tolerance: 1e-12,
            scale: 12.0,
            kinks: Kinks::None,
        },
    ]
}

/// Compares each batch kernel with its brute-force oracle on `batches`
/// random batches (P in 2..=4, K in 1..=3).
pub fn oracle_outcomes(kernels: &Kernels, batches: usize) -> Vec<CheckOutcome> {
    batch_cases(kernels)
        .iter()
        .enumerate()
        .map(|(i, case)| {
            let (passed, worst) = oracle_check(case, batches, 100 + i as u64);
            CheckOutcome {
                name: case.name,
                passed,
                total: batches,
                worst,
            }
        })
        .collect()
}

/// Central finite-difference checks of every differentiable loss on
/// `instances` random inputs each, skipping inputs within 1e-4 of a hinge
/// or mining kink.
pub fn gradient_outcomes(kernels: &Kernels, instances: usize) -> Vec<CheckOutcome> {
    let mut out: Vec<CheckOutcome> = batch_cases(kernels)
        .iter()
        .enumerate()
        .map(|(i, case)| {
            let (passed, worst) = gradient_check(case, instances, 200 + i as u64);
            CheckOutcome {
                name: case.name,
                passed,
                total: instances,
                worst,
            }
        })
        .collect();
    for (i, (name, kernel)) in [("softmax", kernels.softmax), ("cosine_softmax", kernels.cosine_softmax)]
        .into_iter()
        .enumerate()
    {
        let (passed, worst) = classifier_check(kernel, instances, 300 + i as u64);
        out.push(CheckOutcome {
            name,
            passed,
            total: instances,
            worst,
        });
    }
    out
}

/// Runs every check, printing one line each. Returns whether all passed.
pub fn run_selftest<W: Write>(out: &mut W, kernels: &Kernels) -> io::Result<bool> {
    let mut all = true;
    for c in oracle_outcomes(kernels, ORACLE_BATCHES) {
        all &= report(
            out,
            c.ok(),
            format_args!("oracle {:<20} {}/{} batches, max error {:.1e}", c.name, c.passed, c.total, c.worst),
        )?;
    }
    for c in gradient_outcomes(kernels, GRADIENT_INSTANCES) {
        all &= report(
            out,
            c.ok(),
            format_args!(
                "gradient {:<18} {}/{} instances, max relative error {:.1e}",
                c.name, c.passed, c.total, c.worst
            ),
        )?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let batch = random_batch(&mut rng, 6, 8, 4);
    let counts = unified_batch_all_loss_instrumented(&batch, &TripletParams::new(0.3, 12.0))
        .map(|(_, inst)| inst.exp_evaluations)
        .unwrap_or_default();
    let expected = factored_exp_count(6, 8);
    all &= report(
        out,
        counts.len() == 96 && counts.iter().all(|&c| c == expected),
        format_args!(
            "complexity P=6 K=8: {expected} exponentials per anchor vs {} expanded",
            expanded_exp_count(6, 8)
        ),
    )?;
    writeln!(out, "{}", if all { "selftest passed" } else { "selftest FAILED" })?;
    Ok(all)
}
