mod common;

use obalex::metric::{avg_score, normalize_explanation, score, ActivationMap, Grid, ScoredImage};
use obalex::Error;
use proptest::prelude::*;

use common::naive_score;

/// Random (h, w, mask, raw explanation) with at least one positive raw cell.
fn mask_and_raw() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>)> {
    (1usize..=24, 1usize..=24).prop_flat_map(|(h, w)| {
        let n = h * w;
        (
            Just(h),
            Just(w),
            prop::collection::vec(0.0..=1.0f64, n),
            prop::collection::vec(-1.0..2.0f64, n),
            0..n,
        )
            .prop_map(|(h, w, a, mut b, hot)| {
                b[hot] = b[hot].abs() + 0.5;
                (h, w, a, b)
            })
    })
}

fn rows(values: &[f64], w: usize) -> Vec<Vec<f64>> {
    values.chunks(w).map(<[f64]>::to_vec).collect()
}

proptest! {
    #[test]
    fn score_in_unit_interval((h, w, a, b) in mask_and_raw()) {
        let mask = ActivationMap::new(Grid::new(h, w, a).unwrap()).unwrap();
        let e = normalize_explanation(&Grid::new(h, w, b).unwrap());
        let s = score(&mask, &e).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn matches_double_loop((h, w, a, b) in mask_and_raw()) {
        let mask = ActivationMap::new(Grid::new(h, w, a.clone()).unwrap()).unwrap();
        let e = normalize_explanation(&Grid::new(h, w, b).unwrap());
        let s = score(&mask, &e).unwrap();
        let oracle = naive_score(&rows(&a, w), &rows(e.values(), w));
        prop_assert!((s - oracle).abs() <= 1e-12 * oracle.abs().max(f64::MIN_POSITIVE));
    }

    #[test]
    fn full_coverage_is_one((h, w, _a, b) in mask_and_raw()) {
        let mask = ActivationMap::new(Grid::filled(h, w, 1.0)).unwrap();
        let e = normalize_explanation(&Grid::new(h, w, b).unwrap());
        prop_assert_eq!(score(&mask, &e).unwrap(), 1.0);
    }

    #[test]
    fn positive_rescaling_is_exact((h, w, a, b) in mask_and_raw(), c in prop::sample::select(vec![0.25, 0.5, 2.0, 4.0, 1024.0])) {
        // Powers of two so c * b is exact and the max stays the same cell.
        let mask = ActivationMap::new(Grid::new(h, w, a).unwrap()).unwrap();
        let e = normalize_explanation(&Grid::new(h, w, b.clone()).unwrap());
        let scaled: Vec<f64> = b.iter().map(|v| v * c).collect();
        let e2 = normalize_explanation(&Grid::new(h, w, scaled).unwrap());
        prop_assert_eq!(score(&mask, &e).unwrap().to_bits(), score(&mask, &e2).unwrap().to_bits());
    }

    #[test]
    fn moving_mass_inside_never_lowers(
        (h, w, _a, b) in mask_and_raw(),
        bits in prop::collection::vec(any::<bool>(), 576),
        frac in 0.0..=1.0f64,
    ) {
        let n = h * w;
        let a: Vec<f64> = bits[..n].iter().map(|&x| if x { 1.0 } else { 0.0 }).collect();
        prop_assume!(a.contains(&1.0) && a.contains(&0.0));
        let mask = ActivationMap::new(Grid::new(h, w, a.clone()).unwrap()).unwrap();
        let e = normalize_explanation(&Grid::new(h, w, b).unwrap());
        let before = score(&mask, &e).unwrap();
        // Shift a fraction of every outside cell onto one inside cell, total
        // fixed. The result can exceed 1, so score it with the oracle.
        let inside = a.iter().position(|&v| v == 1.0).unwrap();
        let mut moved = e.values().to_vec();
        let mut carried = 0.0;
        for (v, &m) in moved.iter_mut().zip(&a) {
            if m == 0.0 {
                carried += *v * frac;
                *v -= *v * frac;
            }
        }
        moved[inside] += carried;
        let after = naive_score(&rows(&a, w), &rows(&moved, w));
        prop_assert!(after >= before - 1e-12, "{} -> {}", before, after);
    }

    #[test]
    fn misclassified_entries_do_not_move_average(
        base in prop::collection::vec((0.0..=1.0f64, any::<bool>()), 1..30),
        extra in prop::collection::vec((0.0..=1.0f64, any::<prop::sample::Index>()), 0..30),
    ) {
        prop_assume!(base.iter().any(|e| e.1));
        let mut scored: Vec<ScoredImage> = base.iter().enumerate().map(|(i, &(s, ok))| ScoredImage {
            image_id: i.to_string(), score: s, correctly_classified: ok,
        }).collect();
        let before = avg_score(&scored).unwrap();
        for (s, at) in &extra {
            let pos = at.index(scored.len() + 1);
            scored.insert(pos, ScoredImage { image_id: "x".into(), score: *s, correctly_classified: false });
        }
        let after = avg_score(&scored).unwrap();
        prop_assert_eq!(before.avg_score.to_bits(), after.avg_score.to_bits());
        prop_assert_eq!(after.n_total, before.n_total + extra.len());
    }
}

#[test]
fn zero_explanation_is_an_error() {
    let mask = ActivationMap::new(Grid::filled(3, 3, 1.0)).unwrap();
    let e = normalize_explanation(&Grid::filled(3, 3, -0.2));
    assert!(matches!(score(&mask, &e), Err(Error::EmptyExplanation)));
}

#[test]
fn fuzzy_mask_weights_membership() {
    let mask = ActivationMap::new(Grid::from_rows(&[[0.5, 0.25]])).unwrap();
    let e = normalize_explanation(&Grid::from_rows(&[[1.0, 1.0]]));
    assert_eq!(score(&mask, &e).unwrap(), 0.375);
}
