//! Fixture potentials shared by the benchmarks in `benches/`.

use limper_core::{BaseRun, PotentialRecipe, StageOverlay};

/// The step potential `2` on `l` sites, `-2` on `l` sites.
pub fn step_potential(l: u64) -> PotentialRecipe {
    PotentialRecipe::from_runs(vec![BaseRun { value: 2.0, len: l }, BaseRun { value: -2.0, len: l }])
        .expect("valid runs")
}

/// A step potential refined by `levels` overlays with dyadic shifts; the period grows
/// by a factor of `m0 * (copies + 2)` per level.
pub fn staged_potential(levels: u32, m0: u64, copies: u64) -> PotentialRecipe {
    (1..=levels).fold(step_potential(5), |r, k| {
        let s = 0.5f64.powi(k as i32);
        r.with_overlay(StageOverlay { m0, copies, shifts: vec![s, -s] }).expect("period fits")
    })
}

/// `p` fixed pseudo-random values in `[-3, 3]`.
pub fn small_periodic(p: usize) -> PotentialRecipe {
    let mut x: u64 = 0x9e37_79b9_7f4a_7c15;
    let vals: Vec<f64> = (0..p)
        .map(|_| {
            x = x.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1_442_695_040_888_963_407);
            (x >> 11) as f64 / (1u64 << 53) as f64 * 6.0 - 3.0
        })
        .collect();
    PotentialRecipe::periodic(&vals).expect("finite values")
}
