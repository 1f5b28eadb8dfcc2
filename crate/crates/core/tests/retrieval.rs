use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vireid_lab::eval::{evaluate, Shot};
use vireid_lab::numkit::Embedding;
use vireid_lab::oracle::exhaustive_ap;
use vireid_lab::{Modality, Sample};

fn sample(e: Vec<f64>, identity: usize, modality: Modality, sample_index: usize) -> Sample {
    Sample {
        embedding: Embedding::new(e).unwrap(),
        identity,
        modality,
        sample_index,
    }
}

/// One query at angle 0 and a gallery whose rank order is the given
/// relevance pattern, realized with strictly increasing angles.
fn ranked_case(pattern: &[bool]) -> (Vec<Sample>, Vec<Sample>) {
    let query = vec![sample(vec![1.0, 0.0], 0, Modality::Infrared, 0)];
    let gallery = pattern
        .iter()
        .enumerate()
        .map(|(r, &rel)| {
            let t = 0.2 * (r + 1) as f64;
            sample(vec![t.cos(), t.sin()], if rel { 0 } else { r + 1 }, Modality::Visible, r)
        })
        .collect();
    (query, gallery)
}

#[test]
fn map_matches_exhaustive_ap_on_small_galleries() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut cases = 0;
    for len in 1..=6 {
        for bits in 1u32..(1 << len) {
            let pattern: Vec<bool> = (0..len).map(|i| bits >> i & 1 == 1).collect();
            let (q, g) = ranked_case(&pattern);
            let r = evaluate(&q, &g, Shot::Multi, 1, &mut rng).unwrap();
            let ap = exhaustive_ap(&pattern).unwrap();
            assert!((r.map - ap).abs() < 1e-12, "{pattern:?}: {} vs {ap}", r.map);
            let first = pattern.iter().position(|&b| b).unwrap();
            for (rank, &c) in r.cmc.iter().enumerate() {
                assert_eq!(c, if rank >= first { 1.0 } else { 0.0 });
            }
            cases += 1;
        }
    }
    assert_eq!(cases, 120);
}

fn random_split(rng: &mut ChaCha8Rng) -> (Vec<Sample>, Vec<Sample>) {
    let ids = rng.random_range(2..=6);
    let dim = 3;
    let mut queries = Vec::new();
    let mut gallery = Vec::new();
    for id in 0..ids {
        for j in 0..rng.random_range(1..=3) {
            let e = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            queries.push(sample(e, id, Modality::Infrared, j));
        }
        for j in 0..rng.random_range(1..=3) {
            let e = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            gallery.push(sample(e, id, Modality::Visible, j));
        }
    }
    (queries, gallery)
}

#[test]
fn cmc_is_monotone_and_complete() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for draw in 0..1000 {
        let (q, g) = random_split(&mut rng);
        let shot = if draw % 2 == 0 { Shot::Single } else { Shot::Multi };
        let r = evaluate(&q, &g, shot, 3, &mut rng).unwrap();
        assert!(r.cmc.windows(2).all(|w| w[0] <= w[1]));
        assert!((r.cmc.last().unwrap() - 1.0).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&r.map));
    }
}

proptest! {
    #[test]
    fn multi_shot_ignores_gallery_order(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (q, g) = random_split(&mut rng);
        let mut shuffled = g.clone();
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let a = evaluate(&q, &g, Shot::Multi, 1, &mut rng).unwrap();
        let b = evaluate(&q, &shuffled, Shot::Multi, 1, &mut rng).unwrap();
        prop_assert!((a.map - b.map).abs() < 1e-12);
        for (x, y) in a.cmc.iter().zip(&b.cmc) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
