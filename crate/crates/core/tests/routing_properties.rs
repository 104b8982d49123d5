mod oracle;

use mind_core::embedding::BehaviorEmbeddings;
use mind_core::routing::{adaptive_interest_count, b2i_routing, route_with_logits, RoutingConfig};
use mind_core::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn rows(m: &Matrix) -> oracle::Rows {
    m.iter_rows().map(<[f64]>::to_vec).collect()
}

fn random(r: usize, c: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-scale..scale)).collect())
}

fn max_diff(a: &oracle::Rows, b: &oracle::Rows) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn matches_literal_transcription() {
    let mut gen = ChaCha8Rng::seed_from_u64(11);
    for case in 0..30u64 {
        let m = gen.random_range(1..=50);
        let k = gen.random_range(1..=8);
        let d = [4, 16, 64][case as usize % 3];
        let e = random(m, d, 1.0, &mut gen);
        let s = random(d, d, (3.0 / d as f64).sqrt(), &mut gen);
        let cfg = RoutingConfig {
            max_interests: k,
            sigma: 1.0,
            ..RoutingConfig::default()
        };
        let out = b2i_routing(&BehaviorEmbeddings::unmasked(e.clone()), &s, &cfg, &mut ChaCha8Rng::seed_from_u64(case)).unwrap();

        let kk = oracle::adaptive_k(m, k);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let b0: oracle::Rows = (0..m).map(|_| (0..kk).map(|_| normal.sample(&mut rng)).collect()).collect();
        let (caps, w) = oracle::routing(&rows(&e), &rows(&s), &b0, cfg.iterations);
        assert!(max_diff(&rows(&out.capsules), &caps) < 1e-10, "case {case}");
        assert!(max_diff(&rows(&out.coupling.weights), &w) < 1e-10, "case {case}");
    }
}

#[test]
fn adaptive_count_table_and_formula() {
    assert_eq!(adaptive_interest_count(1, 4), 1);
    assert_eq!(adaptive_interest_count(8, 4), 3);
    assert_eq!(adaptive_interest_count(100, 5), 5);
    for m in 1..5000 {
        for k in [1, 2, 3, 5, 8, 64] {
            assert_eq!(adaptive_interest_count(m, k), oracle::adaptive_k(m, k), "m={m} k={k}");
        }
    }
}

#[test]
fn equal_logits_give_identical_capsules() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let e = random(12, 8, 1.0, &mut rng);
    let s = random(8, 8, 0.5, &mut rng);
    let out = route_with_logits(&BehaviorEmbeddings::unmasked(e), &s, &RoutingConfig::default(), Matrix::zeros(12, 3)).unwrap();
    for j in 1..3 {
        assert_eq!(out.capsules.row(0), out.capsules.row(j));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn couplings_are_distributions_and_capsules_short(
        m in 1usize..40, k in 1usize..8, d in 1usize..12, sigma in 0.05f64..6.0, seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = random(m, d, 3.0, &mut rng);
        let s = random(d, d, 2.0, &mut rng);
        let cfg = RoutingConfig { max_interests: k, sigma, ..RoutingConfig::default() };
        let out = b2i_routing(&BehaviorEmbeddings::unmasked(e), &s, &cfg, &mut rng).unwrap();
        prop_assert_eq!(out.num_interests(), adaptive_interest_count(m, k));
        for row in out.coupling.weights.iter_rows() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        for cap in out.capsules.iter_rows() {
            prop_assert!(cap.iter().map(|v| v * v).sum::<f64>().sqrt() < 1.0);
        }
    }

    #[test]
    fn padding_is_invisible(m in 1usize..20, pads in 1usize..6, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 5;
        let real = random(m, d, 1.0, &mut rng);
        let s = random(d, d, 1.0, &mut rng);
        let logits = random(m, 2, 1.0, &mut rng);
        let cfg = RoutingConfig::default();
        let plain = route_with_logits(&BehaviorEmbeddings::unmasked(real.clone()), &s, &cfg, logits.clone()).unwrap();

        // interleave padding rows filled with junk
        let mut padded = Vec::new();
        let mut mask = Vec::new();
        for (i, r) in real.iter_rows().enumerate() {
            if i < pads {
                padded.push(vec![9.0; d]);
                mask.push(false);
            }
            padded.push(r.to_vec());
            mask.push(true);
        }
        let n = padded.len();
        let emb = BehaviorEmbeddings { rows: Matrix::from_rows(&padded), mask: mask.clone() };
        let out = route_with_logits(&emb, &s, &cfg, logits).unwrap();
        prop_assert_eq!(&out.capsules, &plain.capsules);
        let real_rows: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
        for (r, &i) in real_rows.iter().enumerate() {
            prop_assert_eq!(out.coupling.weights.row(i), plain.coupling.weights.row(r));
        }
        for i in (0..n).filter(|&i| !mask[i]) {
            prop_assert!(out.coupling.weights.row(i).iter().all(|&w| w == 0.0));
        }
    }
}
