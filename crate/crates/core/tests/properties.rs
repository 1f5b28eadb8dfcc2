mod common;

use common::{random_batch, rng};
use proptest::prelude::*;
use rand::Rng;
use vireid_lab::center::{batch_all_hetero_center_loss, batch_hard_hetero_center_loss};
use vireid_lab::oracle;
use vireid_lab::triplet::{
    batch_all_loss, batch_hard_loss, cross_modality_batch_hard_loss, mining_diagnostic,
    unified_batch_all_loss, unified_batch_all_loss_instrumented,
};
use vireid_lab::{MiniBatch, TripletParams};

fn batch_from(p: usize, k: usize, dim: usize, values: &[f64]) -> MiniBatch {
    let rows = values.chunks(dim).take(2 * p * k).map(|c| c.to_vec()).collect();
    MiniBatch::from_embeddings(p, k, rows).unwrap()
}

fn batch_strategy() -> impl Strategy<Value = MiniBatch> {
    (2usize..=4, 1usize..=3, 2usize..=5).prop_flat_map(|(p, k, dim)| {
        prop::collection::vec(-1.0..1.0f64, 2 * p * k * dim)
            .prop_map(move |v| batch_from(p, k, dim, &v))
    })
}

fn map_rows(batch: &MiniBatch, f: impl Fn(usize, &[f64]) -> Vec<f64>) -> MiniBatch {
    let rows = (0..batch.len()).map(|i| f(i, batch.embedding(i))).collect();
    batch.with_embeddings(rows).unwrap()
}

#[test]
fn oracle_equality_on_seeded_batches() {
    let mut r = rng(2024);
    let params = TripletParams::new(0.3, 4.0);
    for _ in 0..200 {
        let p = r.random_range(2..=4);
        let k = r.random_range(1..=3);
        let dim = r.random_range(2..=6);
        let b = random_batch(&mut r, p, k, dim);
        let pairs = [
            (batch_hard_loss(&b, &params).unwrap().value, oracle::batch_hard_by_enumeration(&b, &params)),
            (
                cross_modality_batch_hard_loss(&b, &params).unwrap().value,
                oracle::cross_modality_batch_hard_by_enumeration(&b, &params),
            ),
            (batch_all_loss(&b, &params).unwrap().value, oracle::batch_all_by_enumeration(&b, &params)),
            (
                batch_hard_hetero_center_loss(&b, &params).unwrap().value,
                oracle::bh_hetero_center_by_enumeration(&b, &params),
            ),
            (
                batch_all_hetero_center_loss(&b, &params).unwrap().value,
                oracle::ba_hetero_center_naive(&b, &params),
            ),
        ];
        for (kernel, brute) in pairs {
            assert!((kernel - brute).abs() < 1e-12, "{kernel} vs {brute}");
        }
        let (fast, _) = unified_batch_all_loss_instrumented(&b, &params).unwrap();
        let (naive, naive_counts) = oracle::unified_batch_all_naive(&b, &params);
        assert!((fast.value - naive).abs() <= 1e-9 * naive.abs());
        assert!(naive_counts.iter().all(|&c| c == (2 * k - 1) * 2 * (p - 1) * k));
    }
}

#[test]
fn unified_term_approaches_hardest_violation() {
    let mut r = rng(99);
    let gamma = 1e4;
    let params = TripletParams::new(0.3, gamma);
    let mut checked = 0;
    while checked < 50 {
        let (p, k) = (r.random_range(2..=3), r.random_range(1..=3));
        let b = random_batch(&mut r, p, k, 4);
        let hardest = oracle::enumerate_triplets(&b, &params, oracle::Metric::CosineDistance);
        let worst = oracle::hardest_triplets(&hardest, b.len());
        if worst.iter().any(|t| t.argument.abs() < 1e-2) {
            continue;
        }
        let count = hardest.len() / b.len();
        let (_, inst) = unified_batch_all_loss_instrumented(&b, &params).unwrap();
        for (term, t) in inst.per_anchor_terms.iter().zip(&worst) {
            let gap = (term / gamma - t.hinge).abs();
            assert!(gap <= (count as f64).ln() / gamma + 1e-9, "gap {gap}");
        }
        checked += 1;
    }
}

#[test]
fn diagnostic_matches_enumeration() {
    let mut r = rng(5);
    for _ in 0..100 {
        let (p, k) = (r.random_range(2..=4), r.random_range(1..=3));
        let b = random_batch(&mut r, p, k, 3);
        let d = mining_diagnostic(&b);
        let c = oracle::mining_diagnostic_by_enumeration(&b);
        let n = c.anchors as f64;
        assert_eq!(d.frac_hard_pos_intra, c.hard_pos_intra as f64 / n);
        assert_eq!(d.frac_hard_neg_intra, c.hard_neg_intra as f64 / n);
        assert_eq!(d.frac_both_intra, c.both_intra as f64 / n);
        assert!(d.frac_both_intra <= d.frac_hard_pos_intra.min(d.frac_hard_neg_intra));
    }
}

proptest! {
    #[test]
    fn translation_invariance(b in batch_strategy(), shift in prop::collection::vec(-5.0..5.0f64, 5)) {
        let params = TripletParams::new(0.3, 1.0);
        let moved = map_rows(&b, |_, e| e.iter().zip(&shift).map(|(x, s)| x + s).collect());
        for f in [batch_hard_loss, cross_modality_batch_hard_loss, batch_all_loss, batch_hard_hetero_center_loss] {
            let before = f(&b, &params).unwrap().value;
            let after = f(&moved, &params).unwrap().value;
            prop_assert!((before - after).abs() < 1e-12 * before.abs().max(1.0));
        }
    }

    #[test]
    fn scale_invariance(b in batch_strategy(), c in 0.01..100.0f64, gamma in 1.0..16.0f64) {
        let params = TripletParams::new(0.3, gamma);
        let scaled = map_rows(&b, |_, e| e.iter().map(|x| x * c).collect());
        let u0 = unified_batch_all_loss(&b, &params).unwrap().value;
        let u1 = unified_batch_all_loss(&scaled, &params).unwrap().value;
        prop_assert!((u0 - u1).abs() < 1e-12 * u0.max(1.0));
        let h0 = batch_all_hetero_center_loss(&b, &params).unwrap().value;
        let h1 = batch_all_hetero_center_loss(&scaled, &params).unwrap().value;
        prop_assert!((h0 - h1).abs() < 1e-12 * h0.max(1.0));
    }

    #[test]
    fn per_embedding_rescaling_leaves_ba_center_loss(b in batch_strategy(), seed in 0u64..1000) {
        let mut r = rng(seed);
        let factors: Vec<f64> = (0..b.len()).map(|_| r.random_range(0.1..10.0)).collect();
        let params = TripletParams::new(0.3, 12.0);
        let scaled = map_rows(&b, |i, e| e.iter().map(|x| x * factors[i]).collect());
        let h0 = batch_all_hetero_center_loss(&b, &params).unwrap().value;
        let h1 = batch_all_hetero_center_loss(&scaled, &params).unwrap().value;
        prop_assert!((h0 - h1).abs() < 1e-12 * h0.max(1.0));
    }

    #[test]
    fn block_permutation_invariance(b in batch_strategy(), seed in 0u64..1000) {
        let params = TripletParams::new(0.3, 8.0);
        let k = b.k();
        let mut r = rng(seed);
        let mut order: Vec<usize> = (0..b.len()).collect();
        for block in order.chunks_mut(k) {
            for i in (1..block.len()).rev() {
                block.swap(i, r.random_range(0..=i));
            }
        }
        let permuted = map_rows(&b, |i, _| b.embedding(order[i]).to_vec());
        let kernels: [fn(&MiniBatch, &TripletParams) -> vireid_lab::Result<vireid_lab::LossResult>; 6] = [
            batch_hard_loss,
            cross_modality_batch_hard_loss,
            batch_all_loss,
            unified_batch_all_loss,
            batch_hard_hetero_center_loss,
            batch_all_hetero_center_loss,
        ];
        for f in kernels {
            let before = f(&b, &params).unwrap().value;
            let after = f(&permuted, &params).unwrap().value;
            prop_assert!((before - after).abs() < 1e-12 * before.abs().max(1.0));
        }
    }

    #[test]
    fn losses_are_nonnegative(b in batch_strategy(), m in 0.0..1.0f64, gamma in 0.5..20.0f64) {
        let params = TripletParams::new(m, gamma);
        prop_assert!(batch_hard_loss(&b, &params).unwrap().value >= 0.0);
        prop_assert!(cross_modality_batch_hard_loss(&b, &params).unwrap().value >= 0.0);
        prop_assert!(batch_all_loss(&b, &params).unwrap().value >= 0.0);
        prop_assert!(batch_hard_hetero_center_loss(&b, &params).unwrap().value >= 0.0);
        prop_assert!(unified_batch_all_loss(&b, &params).unwrap().value > 0.0);
        prop_assert!(batch_all_hetero_center_loss(&b, &params).unwrap().value > 0.0);
    }
}
