//! Second implementations of the structure, enhanced-alignment and weighted
//! F scores written directly from their definitions on 2-D grids, compared
//! with the library on random pairs.

use ddnet::metrics::{e_measure, f_measure, mae, s_measure, score_pair, weighted_f, GroundTruthMask, SaliencyMap, Threshold};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[path = "support/metric_oracle.rs"]
mod oracle;

use oracle::*;

#[test]
fn e_measure_matches_oracle() {
    for (s, g) in pairs(1, 100, 16, 16) {
        let (a, b) = (e_measure(&s, &g).unwrap(), oracle_e(&grid_of_map(&s), &grid_of_mask(&g)));
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn s_measure_matches_oracle() {
    for (s, g) in pairs(2, 100, 16, 16) {
        let (a, b) = (s_measure(&s, &g).unwrap(), oracle_s(&grid_of_map(&s), &grid_of_mask(&g)));
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn weighted_f_matches_oracle() {
    for (s, g) in pairs(3, 100, 16, 16) {
        let (a, b) = (weighted_f(&s, &g).unwrap(), oracle_wf(&grid_of_map(&s), &grid_of_mask(&g)));
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn weighted_f_matches_oracle_on_wide_maps() {
    for (s, g) in pairs(4, 20, 9, 23) {
        let (a, b) = (weighted_f(&s, &g).unwrap(), oracle_wf(&grid_of_map(&s), &grid_of_mask(&g)));
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn every_score_stays_in_unit_range() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    for i in 0..1000 {
        let (h, w) = (r.random_range(1..20), r.random_range(1..20));
        let g = match i % 5 {
            0 => GroundTruthMask::new(h, w, vec![false; h * w]).unwrap(),
            1 => GroundTruthMask::new(h, w, vec![true; h * w]).unwrap(),
            _ => GroundTruthMask::from_fn(h, w, |_| r.random_bool(0.4)).unwrap(),
        };
        let s = match i % 7 {
            0 => SaliencyMap::new(h, w, vec![0.0; h * w]).unwrap(),
            1 => SaliencyMap::new(h, w, vec![1.0; h * w]).unwrap(),
            _ => random_map(&mut r, &g),
        };
        let sc = score_pair(&s, &g).unwrap();
        for v in sc.as_array() {
            assert!((0.0..=1.0).contains(&v), "pair {i}: {sc:?}");
        }
    }
}

#[test]
fn perfect_and_complement() {
    for (_, g) in pairs(6, 30, 16, 16) {
        let fg = g.foreground();
        if fg == 0 || fg == g.data().len() {
            continue;
        }
        let sc = score_pair(&g.as_map(), &g).unwrap();
        assert_eq!(sc.f_measure, 1.0);
        assert_eq!(sc.mae, 0.0);
        for v in [sc.e_measure, sc.s_measure, sc.weighted_f] {
            assert!((v - 1.0).abs() < 1e-10, "{sc:?}");
        }
        let inv = SaliencyMap::from_fn(16, 16, |i| if g.data()[i] { 0.0 } else { 1.0 }).unwrap();
        assert!(e_measure(&inv, &g).unwrap() < 1e-12);
        assert_eq!(mae(&inv, &g).unwrap(), 1.0);
    }
}

fn shift<T: Clone>(v: &[T], h: usize, w: usize, dy: usize, dx: usize) -> Vec<T> {
    (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            v[((y + dy) % h) * w + (x + dx) % w].clone()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mae_and_f_are_shift_equivariant(seed in 0u64..10_000, dy in 0usize..16, dx in 0usize..16) {
        let (s, g) = pairs(seed, 1, 16, 16).pop().unwrap();
        let s2 = SaliencyMap::new(16, 16, shift(s.data(), 16, 16, dy, dx)).unwrap();
        let g2 = GroundTruthMask::new(16, 16, shift(g.data(), 16, 16, dy, dx)).unwrap();
        prop_assert_eq!(f_measure(&s, &g, Threshold::Adaptive).unwrap(), f_measure(&s2, &g2, Threshold::Adaptive).unwrap());
        prop_assert!((mae(&s, &g).unwrap() - mae(&s2, &g2).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn mae_is_symmetric(seed in 0u64..10_000) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let a = GroundTruthMask::from_fn(8, 8, |_| r.random_bool(0.5)).unwrap();
        let b = GroundTruthMask::from_fn(8, 8, |_| r.random_bool(0.5)).unwrap();
        prop_assert_eq!(mae(&a.as_map(), &b).unwrap(), mae(&b.as_map(), &a).unwrap());
    }
}
