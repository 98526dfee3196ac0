mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use limper_core::intervals::{is_eps_dense, IntervalFamily, OpenInterval};
use limper_core::spectrum::{band_edges_exact, ids};
use limper_core::transfer::{bloch_solution, monodromy, range_product, transfer_product};
use limper_core::{PotentialRecipe, ScaledMatrix2};

fn rel_gap(x: &ScaledMatrix2, y: &ScaledMatrix2) -> f64 {
    let (a, b) = (x.unit_entries(), y.unit_entries());
    let d =
        (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| (a[i][j] - b[i][j]).abs()).fold(0.0, f64::max);
    d.max((x.log_norm() - y.log_norm()).abs())
}

fn recipe_from_seed(seed: u64, max_period: u64) -> PotentialRecipe {
    common::random_stage_recipe(&mut ChaCha8Rng::seed_from_u64(seed), max_period)
}

fn periodic_from_seed(seed: u64, max_period: usize) -> PotentialRecipe {
    let vals = common::random_periodic(&mut ChaCha8Rng::seed_from_u64(seed), max_period, 3.0);
    PotentialRecipe::periodic(&vals).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cocycle_splits(seed in any::<u64>(), e in -4.0f64..4.0, start in -5000i64..5000, a in 0u64..3000, b in 0u64..3000) {
        let r = recipe_from_seed(seed, 20_000);
        let whole: ScaledMatrix2 = range_product(&r, e, start, a + b);
        let first: ScaledMatrix2 = range_product(&r, e, start, a);
        let second: ScaledMatrix2 = range_product(&r, e, start + a as i64, b);
        let joined = second * first;
        let tol = 1e-9 * (1.0 + whole.log_norm().abs());
        prop_assert!(rel_gap(&whole, &joined) <= tol, "gap {}", rel_gap(&whole, &joined));
    }

    #[test]
    fn products_have_unit_determinant(seed in any::<u64>(), e in -5.0f64..5.0, n in 1u64..1_000_000) {
        let r = recipe_from_seed(seed, 1 << 40);
        prop_assert!(transfer_product(e, &r, n).det_defect() < 1e-10);
        prop_assert!(monodromy(e, &r).det_defect() < 1e-10);
    }

    #[test]
    fn eps_density_is_monotone(
        ivs in prop::collection::vec((-4.5f64..4.5, 0.001f64..1.0), 0..40),
        e1 in 0.01f64..2.0,
        e2 in 0.01f64..2.0,
    ) {
        let fam = IntervalFamily::root(ivs.iter().map(|&(lo, w)| OpenInterval::new(lo, lo + w).unwrap()).collect());
        let (small, large) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        prop_assert!(!is_eps_dense(&fam, small) || is_eps_dense(&fam, large));
    }
}

#[test]
fn bloch_window_norm_is_shift_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let r = PotentialRecipe::periodic(&common::random_periodic(&mut rng, 7, 2.0)).unwrap();
    let bands = band_edges_exact(&r).unwrap();
    let mut checked = 0;
    for band in bands.iter() {
        for i in 0..20 {
            if checked == 20 {
                break;
            }
            let e = band.alpha + band.width() * (i as f64 + 0.5) / 20.0;
            let Ok(psi) = bloch_solution(e, &r) else { continue };
            let w0 = psi.window_norm(0);
            for off in [1i64, 2, 3, 5, 8, 13, -1, -7, 1000, -99_999] {
                assert!((psi.window_norm(off) - w0).abs() <= 1e-9 * w0, "E={e} offset={off}");
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 20);
}

#[test]
fn ids_is_monotone_in_unit_interval() {
    for seed in 0..4u64 {
        let r = periodic_from_seed(seed, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        for _ in 0..50 {
            let a = rand::Rng::random_range(&mut rng, -6.0..6.0);
            let b = rand::Rng::random_range(&mut rng, -6.0..6.0);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (nl, nh) = (ids(lo, &r).unwrap(), ids(hi, &r).unwrap());
            assert!((0.0..=1.0).contains(&nl) && (0.0..=1.0).contains(&nh));
            assert!(nl <= nh + 1e-12, "N({lo})={nl} > N({hi})={nh}");
        }
    }
}

#[test]
fn materialized_values_match_recipe() {
    for seed in 0..20 {
        let r = recipe_from_seed(seed, 50_000);
        let vals = common::materialize(&r);
        assert_eq!(vals.len() as u64, r.period());
        assert_eq!(vals, r.values(0, vals.len()));
    }
}
