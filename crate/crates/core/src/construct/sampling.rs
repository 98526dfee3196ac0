use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::spectrum::{
    band_confirmed, band_index_at, band_piece, count_position, in_spectrum, spectral_hull, IndexedBand,
    RESOLUTION_FLOOR,
};
use crate::transfer::{finite_lyapunov, lyapunov_periodic, monodromy, PotentialRecipe};

/// Doublings of the node count after the initial pass.
const MAX_DOUBLINGS: u32 = 3;
/// Stop doubling once the sampled sup moves by less than this.
const SUP_SETTLE: f64 = 1e-8;
/// Tolerance on the smallness targets.
pub const SMALLNESS_TOL: f64 = 1e-6;
/// Seeded random energies added per interval on top of the Chebyshev nodes.
const RANDOM_PER_INTERVAL: usize = 2;

/// `n` Chebyshev nodes of the first kind on `[lo, hi]`, plus both endpoints.
pub fn chebyshev_nodes(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (c, r) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    let mut out = Vec::with_capacity(n + 2);
    out.push(lo);
    for i in (0..n).rev() {
        let x = (std::f64::consts::PI * (2 * i + 1) as f64 / (2 * n) as f64).cos();
        out.push((c + r * x).clamp(lo, hi));
    }
    out.push(hi);
    out
}

/// `sum_{s=l+1}^{k+1} 2^{-s}`.
pub fn smallness_target(l: u32, k: u32) -> f64 {
    (l + 1..=k + 1).map(|s| 0.5f64.powi(s as i32)).sum()
}

/// Sampled sup of `(1/p_k) log ||A_{p_k}(E, V^k)||` over energies from one set of intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallnessEntry {
    pub l: u32,
    pub sup: f64,
    pub argmax: Option<f64>,
    pub target: f64,
    pub pass: bool,
    pub samples: usize,
    pub nodes_per_interval: usize,
    /// SHA-256 of the sampled energies, in evaluation order.
    pub manifest_digest: String,
    /// Max over the base samples of the finite-size exponent at `p_k * 2^i`, `i = 0..=3`.
    pub multiples: Vec<f64>,
}

impl SmallnessEntry {
    pub fn margin(&self) -> f64 {
        self.target - self.sup
    }
}

fn sample_energies(intervals: &[(f64, f64)], nodes: usize, seed: u64, l: u32) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (l as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut out = Vec::new();
    for &(lo, hi) in intervals {
        out.extend(chebyshev_nodes(lo, hi, nodes));
        for _ in 0..RANDOM_PER_INTERVAL {
            out.push(lo + (hi - lo) * rng.random::<f64>());
        }
    }
    out
}

fn manifest_digest(energies: &[f64]) -> String {
    let mut h = Sha256::new();
    for e in energies {
        h.update(e.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Certifies smallness of the period-`p_k` growth on samples of the given intervals.
///
/// Node counts double until the sampled sup settles or the doubling budget is spent.
pub fn smallness_entry(
    recipe: &PotentialRecipe,
    intervals: &[(f64, f64)],
    l: u32,
    k: u32,
    nodes: usize,
    seed: u64,
) -> SmallnessEntry {
    let p = recipe.period() as f64;
    let growth = |e: f64| monodromy(e, recipe).log_norm().max(0.0) / p;
    let eval = |energies: &[f64]| -> (f64, Option<f64>) {
        let vals: Vec<f64> = energies.par_iter().map(|&e| growth(e)).collect();
        vals.iter().zip(energies).fold(
            (f64::NEG_INFINITY, None),
            |(s, a), (&v, &e)| {
                if v > s {
                    (v, Some(e))
                } else {
                    (s, a)
                }
            },
        )
    };
    let target = smallness_target(l, k);
    if intervals.is_empty() {
        return SmallnessEntry {
            l,
            sup: 0.0,
            argmax: None,
            target,
            pass: true,
            samples: 0,
            nodes_per_interval: nodes,
            manifest_digest: manifest_digest(&[]),
            multiples: vec![0.0; 4],
        };
    }
    let base = sample_energies(intervals, nodes, seed, l);
    let multiples: Vec<f64> = (0..4u32)
        .map(|i| {
            base.par_iter()
                .map(|&e| monodromy(e, recipe).pow(1 << i).log_norm().max(0.0) / (p * (1u64 << i) as f64))
                .collect::<Vec<f64>>()
                .into_iter()
                .fold(0.0, f64::max)
        })
        .collect();
    let (mut sup, mut argmax) = eval(&base);
    let mut n = nodes;
    let mut energies = base;
    for _ in 0..MAX_DOUBLINGS {
        let next_n = 2 * n;
        let next = sample_energies(intervals, next_n, seed, l);
        let (s, a) = eval(&next);
        let settled = (s.max(sup) - sup).abs() < SUP_SETTLE;
        if s > sup {
            sup = s;
            argmax = a;
        }
        n = next_n;
        energies = next;
        if settled {
            break;
        }
    }
    SmallnessEntry {
        l,
        sup,
        argmax,
        target,
        pass: sup <= target + SMALLNESS_TOL,
        samples: energies.len(),
        nodes_per_interval: n,
        manifest_digest: manifest_digest(&energies),
        multiples,
    }
}

/// Resolvable bands found by a grid scan of `[lo, hi]`: the lowest `bottom` of
/// them plus `spread` more spaced evenly through the rest.
pub fn discover_bands(
    recipe: &PotentialRecipe,
    lo: f64,
    hi: f64,
    grid: usize,
    bottom: usize,
    spread: usize,
) -> Vec<IndexedBand> {
    let (hull_lo, hull_hi) = spectral_hull(recipe);
    let (lo, hi) = (lo.max(hull_lo), hi.min(hull_hi));
    if !(lo < hi) || grid < 2 {
        return Vec::new();
    }
    let step = (hi - lo) / (grid - 1) as f64;
    let hits: Vec<Option<u64>> = (0..grid)
        .into_par_iter()
        .map(|i| {
            let e = lo + step * i as f64;
            in_spectrum(e, recipe).then(|| band_index_at(e, recipe))
        })
        .collect();
    let mut indices: Vec<u64> = hits.into_iter().flatten().collect();
    indices.dedup();
    let mut chosen: Vec<u64> = indices.iter().copied().take(bottom).collect();
    let rest = &indices[chosen.len()..];
    if !rest.is_empty() && spread > 0 {
        let take = spread.min(rest.len());
        for t in 0..take {
            let pos = if take == 1 { 0 } else { t * (rest.len() - 1) / (take - 1) };
            chosen.push(rest[pos]);
        }
    }
    chosen.sort_unstable();
    chosen.dedup();
    let counts = (count_position(lo, recipe), count_position(hi, recipe));
    chosen
        .par_iter()
        .filter_map(|&j| band_piece(recipe, j, (lo, hi), counts).map(|band| IndexedBand { index: j, band }))
        .collect::<Vec<_>>()
        .into_iter()
        .filter(|b| b.band.width() >= RESOLUTION_FLOOR && band_confirmed(recipe, &b.band))
        .collect()
}

/// Outcome of the bit-exact prefix comparison between consecutive stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefixCheck {
    pub checked: usize,
    pub mismatches: usize,
    pub first_mismatch: Option<u64>,
    pub pass: bool,
}

/// Compares `V^k(n)` and `V^{k-1}(n)` bit for bit at both ends of `[0, p_{k-1}]`
/// and at `samples` seeded random sites in between.
pub fn prefix_check(new: &PotentialRecipe, old: &PotentialRecipe, samples: usize, seed: u64) -> PrefixCheck {
    let p = old.period();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
    let mut sites = vec![0u64, p];
    sites.extend((0..samples).map(|_| rng.random_range(0..=p)));
    let bad: Vec<u64> =
        sites.iter().copied().filter(|&n| new.eval(n as i64).to_bits() != old.eval(n as i64).to_bits()).collect();
    PrefixCheck {
        checked: sites.len(),
        mismatches: bad.len(),
        first_mismatch: bad.first().copied(),
        pass: bad.is_empty(),
    }
}

/// One step of a doubling search over `m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MTrial {
    pub m: u64,
    pub period: u64,
    /// Smallest margin over all certified inequalities; negative means failing.
    pub worst_margin: f64,
    pub pass: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepLength {
    /// Exact periodic exponent from the trace.
    Period,
    /// `(1/N) log ||A_N||`.
    Sites(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub e: f64,
    pub l: f64,
    pub in_spectrum: bool,
}

/// `L(E)` on `n` evenly spaced energies of `[a, b]`, evaluated in parallel and
/// returned in grid order.
pub fn sweep_lyapunov(recipe: &PotentialRecipe, a: f64, b: f64, n: usize, length: SweepLength) -> Vec<SweepRow> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let e = if n == 1 { a } else { a + (b - a) * i as f64 / (n - 1) as f64 };
            let l = match length {
                SweepLength::Period => lyapunov_periodic(e, recipe),
                SweepLength::Sites(len) => finite_lyapunov(e, recipe, len),
            };
            SweepRow { e, l, in_spectrum: in_spectrum(e, recipe) }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_include_edges() {
        let n = chebyshev_nodes(-1.0, 1.0, 5);
        assert_eq!(n.len(), 7);
        assert_eq!(n[0], -1.0);
        assert_eq!(n[6], 1.0);
        assert!(n.windows(2).all(|w| w[0] <= w[1]));
        assert!((n[3]).abs() < 1e-15);
    }

    #[test]
    fn targets() {
        assert_eq!(smallness_target(1, 1), 0.25);
        assert_eq!(smallness_target(1, 2), 0.375);
        assert_eq!(smallness_target(2, 2), 0.125);
    }

    #[test]
    fn free_smallness_peaks_at_edges() {
        let free = PotentialRecipe::constant(0.0);
        let e = smallness_entry(&free, &[(-1.0, 1.0)], 1, 1, 9, 3);
        let golden = (0.5 * (1.0 + 5f64.sqrt())).ln();
        assert!((e.sup - golden).abs() < 1e-12);
        assert!(!e.pass);
        let again = smallness_entry(&free, &[(-1.0, 1.0)], 1, 1, 9, 3);
        assert_eq!(e, again);
    }

    #[test]
    fn sweep_is_ordered() {
        let free = PotentialRecipe::constant(0.0);
        let rows = sweep_lyapunov(&free, -3.0, 3.0, 61, SweepLength::Period);
        assert_eq!(rows.len(), 61);
        assert!(rows.iter().all(|r| (r.l == 0.0) == (r.e.abs() <= 2.0 + 1e-12)));
        assert!((rows[60].l - 1.5f64.acosh()).abs() < 1e-12);
    }
}
