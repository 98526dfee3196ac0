use serde::{Deserialize, Serialize};

use super::bands::{Band, BandList, MERGE_TOL};
use crate::transfer::{monodromy, spectral_position, PotentialRecipe};

/// Bands narrower than this are reported as unresolved rather than returned.
pub const RESOLUTION_FLOOR: f64 = 1e-12;

/// Default cap on the number of bands enumerated in one window.
pub const DEFAULT_MAX_BANDS: usize = 4096;

/// Twice the number of bands below `e`, plus one inside a band.
pub fn count_position(e: f64, recipe: &PotentialRecipe) -> u128 {
    spectral_position(e, recipe).half_count()
}

/// `|tr A_p(E)| <= 2`, decided in the scaled representation.
pub fn in_spectrum(e: f64, recipe: &PotentialRecipe) -> bool {
    monodromy(e, recipe).trace_within(2.0)
}

/// Whether the trace agrees that `band` lies in the spectrum: its center and both ends,
/// pulled in by a `1e-9` fraction of the width, satisfy `|tr| <= 2`.
///
/// Counts at very long periods can drift by a few units where the spectrum is
/// exponentially thin; this rejects the spurious pieces that produces.
pub fn band_confirmed(recipe: &PotentialRecipe, band: &Band) -> bool {
    let pad = 1e-9 * band.width();
    [band.alpha + pad, band.midpoint(), band.beta - pad].iter().all(|&e| in_spectrum(e, recipe))
}

/// Energies bracketing every band: `[min V - 2.5, max V + 2.5]`.
pub(crate) fn spectral_hull(recipe: &PotentialRecipe) -> (f64, f64) {
    let (lo, hi) = recipe.value_bounds();
    (lo - 2.5, hi + 2.5)
}

/// Shrinks `[lo, hi]` with `count(lo) < target <= count(hi)` to adjacent floats.
fn boundary(recipe: &PotentialRecipe, mut lo: f64, mut hi: f64, target: u128) -> (f64, f64) {
    for _ in 0..2200 {
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            break;
        }
        if count_position(mid, recipe) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (lo, hi)
}

fn crossing(recipe: &PotentialRecipe, lo: f64, hi: f64, target: u128) -> f64 {
    let (a, b) = boundary(recipe, lo, hi, target);
    0.5 * (a + b)
}

/// Edges of band `j` (zero based, from the bottom) by count bisection.
pub fn band_edges_by_index(recipe: &PotentialRecipe, j: u64) -> Band {
    let (lo, hi) = spectral_hull(recipe);
    let t = 2 * j as u128;
    let (a0, a1) = boundary(recipe, lo, hi, t + 1);
    let alpha = 0.5 * (a0 + a1);
    let beta = crossing(recipe, a0, hi, t + 2);
    Band::new(alpha, beta.max(alpha))
}

/// Part of band `j` inside `[lo, hi]`, given the counts at the window ends.
pub(crate) fn band_piece(
    recipe: &PotentialRecipe,
    j: u64,
    (lo, hi): (f64, f64),
    (c_lo, c_hi): (u128, u128),
) -> Option<Band> {
    let odd = 2 * j as u128 + 1;
    if c_lo > odd || c_hi < odd {
        return None;
    }
    let alpha = if c_lo == odd { lo } else { crossing(recipe, lo, hi, odd) };
    let beta = if c_hi == odd { hi } else { crossing(recipe, alpha, hi, odd + 1) };
    Some(Band::new(alpha, beta.max(alpha)))
}

/// A band tagged with its index from the bottom of the spectrum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexedBand {
    pub index: u64,
    pub band: Band,
}

/// Result of a windowed band search with its resolution metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalBands {
    pub window: (f64, f64),
    pub resolved: Vec<IndexedBand>,
    /// Bands the counts prove exist but whose width is below the floor.
    pub unresolved: Vec<IndexedBand>,
    /// Total number of bands meeting the window, by counting.
    pub band_count: u64,
    /// Whether enumeration stopped at the band cap.
    pub truncated: bool,
    pub floor: f64,
}

impl LocalBands {
    pub fn band_list(&self) -> BandList {
        BandList::merged(self.resolved.iter().map(|b| b.band).collect(), MERGE_TOL)
    }
}

/// `{|tr| <= 2}` inside a window.
pub fn local_bands(recipe: &PotentialRecipe, window: (f64, f64)) -> BandList {
    local_bands_detailed(recipe, window, RESOLUTION_FLOOR, DEFAULT_MAX_BANDS).band_list()
}

/// Windowed band search guided by band counts.
///
/// The band indices meeting the window are read off the counts at its ends; each
/// band's edges are then located by bisection on the count.
pub fn local_bands_detailed(
    recipe: &PotentialRecipe,
    (lo, hi): (f64, f64),
    floor: f64,
    max_bands: usize,
) -> LocalBands {
    let mut out = LocalBands {
        window: (lo, hi),
        resolved: Vec::new(),
        unresolved: Vec::new(),
        band_count: 0,
        truncated: false,
        floor,
    };
    if !(lo < hi) {
        return out;
    }
    let c_lo = count_position(lo, recipe);
    let c_hi = count_position(hi, recipe);
    let first = (c_lo / 2) as u64;
    if c_hi < 2 * first as u128 + 1 {
        return out;
    }
    let last = ((c_hi - 1) / 2) as u64;
    out.band_count = last - first + 1;
    let mut left = lo;
    let mut c_left = c_lo;
    for j in first..=last {
        if out.resolved.len() + out.unresolved.len() >= max_bands {
            out.truncated = true;
            break;
        }
        let Some(piece) = band_piece(recipe, j, (left, hi), (c_left, c_hi)) else { continue };
        let tagged = IndexedBand { index: j, band: piece };
        if piece.width() < floor || !band_confirmed(recipe, &piece) {
            out.unresolved.push(tagged);
        } else {
            out.resolved.push(tagged);
        }
        left = piece.beta;
        c_left = count_position(left, recipe).max(2 * j as u128 + 1);
    }
    out
}

/// Distance from `e` to the nearest band within `search_radius`; `+inf` if none.
pub fn dist_to_spectrum(e: f64, recipe: &PotentialRecipe, search_radius: f64) -> f64 {
    if in_spectrum(e, recipe) {
        return 0.0;
    }
    let c = count_position(e, recipe);
    let mut best = f64::INFINITY;
    let below = e - search_radius;
    if c > 0 && count_position(below, recipe) < c {
        let edge = crossing(recipe, below, e, c);
        best = best.min(e - edge);
    }
    let above = e + search_radius;
    if count_position(above, recipe) > c {
        let edge = crossing(recipe, e, above, c + 1);
        best = best.min(edge - e);
    }
    best
}

/// Bottom of the spectrum, `alpha_1`.
pub fn spectrum_infimum(recipe: &PotentialRecipe) -> f64 {
    let (lo, hi) = spectral_hull(recipe);
    crossing(recipe, lo, hi, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p2() -> PotentialRecipe {
        PotentialRecipe::periodic(&[4.0, 0.0]).unwrap()
    }

    #[test]
    fn membership() {
        let free = PotentialRecipe::constant(0.0);
        assert!(in_spectrum(0.0, &free));
        assert!(!in_spectrum(2.5, &free));
        assert!(!in_spectrum(2.0, &p2()));
    }

    #[test]
    fn windowed_bands() {
        let free = PotentialRecipe::constant(0.0);
        let b = local_bands(&free, (-1.0, 1.0));
        assert_eq!(b.bands(), &[Band::new(-1.0, 1.0)]);
        let b = local_bands(&p2(), (-1.0, 1.0));
        assert_eq!(b.len(), 1);
        assert!((b.bands()[0].alpha - (2.0 - 2.0 * 2f64.sqrt())).abs() < 1e-12);
        assert!(b.bands()[0].beta.abs() < 1e-12);
    }

    #[test]
    fn distances() {
        let free = PotentialRecipe::constant(0.0);
        assert!((dist_to_spectrum(2.5, &free, 1.0) - 0.5).abs() < 1e-12);
        assert_eq!(dist_to_spectrum(0.0, &free, 1.0), 0.0);
        assert!((dist_to_spectrum(2.0, &p2(), 3.0) - 2.0).abs() < 1e-12);
        assert_eq!(dist_to_spectrum(2.0, &p2(), 1.0), f64::INFINITY);
    }

    #[test]
    fn infimum() {
        assert!((spectrum_infimum(&PotentialRecipe::constant(0.0)) + 2.0).abs() < 1e-13);
        assert!((spectrum_infimum(&PotentialRecipe::constant(2.2)) - 0.2).abs() < 1e-13);
        assert!((spectrum_infimum(&p2()) - (2.0 - 2.0 * 2f64.sqrt())).abs() < 1e-13);
    }

    #[test]
    fn edges_are_trace_crossings() {
        let r = PotentialRecipe::periodic(&[1.0, -0.5, 2.0, 0.3, -1.7]).unwrap();
        for j in 0..5 {
            let b = band_edges_by_index(&r, j);
            for e in [b.alpha, b.beta] {
                let t = crate::transfer::discriminant(e, &r).value();
                assert!((t.abs() - 2.0).abs() < 1e-8, "{j} {t}");
            }
        }
    }
}
