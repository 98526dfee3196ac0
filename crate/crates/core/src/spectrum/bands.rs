use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::local::{band_edges_by_index, count_position};
use crate::error::{Error, Result};
use crate::transfer::PotentialRecipe;

/// Default period cap for [`band_edges_exact`].
pub const EXACT_PERIOD_CAP: u64 = 4096;

/// Periods up to this size use dense periodic/antiperiodic eigenproblems.
const DENSE_LIMIT: u64 = 256;

/// Gaps narrower than this are treated as closed when merging bands.
pub const MERGE_TOL: f64 = 1e-11;

/// A closed spectral band `[alpha, beta]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub alpha: f64,
    pub beta: f64,
}

impl Band {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }

    pub fn width(&self) -> f64 {
        self.beta - self.alpha
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.alpha + self.beta)
    }

    pub fn contains(&self, e: f64) -> bool {
        self.alpha <= e && e <= self.beta
    }

    pub fn distance(&self, e: f64) -> f64 {
        if e < self.alpha {
            self.alpha - e
        } else if e > self.beta {
            e - self.beta
        } else {
            0.0
        }
    }
}

/// Sorted, disjoint closed bands.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BandList {
    bands: Vec<Band>,
}

impl BandList {
    /// Validates ordering and disjointness.
    pub fn new(bands: Vec<Band>) -> Result<Self> {
        for b in &bands {
            if !(b.alpha < b.beta) || !b.alpha.is_finite() || !b.beta.is_finite() {
                return Err(Error::InvalidInput(format!("bad band {b:?}")));
            }
        }
        for w in bands.windows(2) {
            if !(w[0].beta < w[1].alpha) {
                return Err(Error::InvalidInput("bands overlap or are unsorted".into()));
            }
        }
        Ok(Self { bands })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Sorts and merges intervals whose gaps are at most `tol`; drops empty ones.
    pub fn merged(mut raw: Vec<Band>, tol: f64) -> Self {
        raw.retain(|b| b.beta > b.alpha);
        raw.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
        let mut out: Vec<Band> = Vec::with_capacity(raw.len());
        for b in raw {
            match out.last_mut() {
                Some(last) if b.alpha <= last.beta + tol => last.beta = last.beta.max(b.beta),
                _ => out.push(b),
            }
        }
        Self { bands: out }
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Band> {
        self.bands.iter()
    }

    pub fn measure(&self) -> f64 {
        self.bands.iter().map(Band::width).sum()
    }

    pub fn contains(&self, e: f64) -> bool {
        self.distance(e) == 0.0
    }

    pub fn distance(&self, e: f64) -> f64 {
        let i = self.bands.partition_point(|b| b.beta < e);
        let mut d = f64::INFINITY;
        if i < self.bands.len() {
            d = d.min(self.bands[i].distance(e));
        }
        if i > 0 {
            d = d.min(self.bands[i - 1].distance(e));
        }
        d
    }

    /// Intersection with the closed window `[lo, hi]`.
    pub fn clipped(&self, lo: f64, hi: f64) -> Self {
        let raw = self.bands.iter().map(|b| Band::new(b.alpha.max(lo), b.beta.min(hi))).collect();
        Self::merged(raw, 0.0)
    }

    /// Hausdorff distance between the union of bands and a finite point set.
    pub fn hausdorff_to_points(&self, points: &[f64]) -> f64 {
        let mut sorted = points.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut h = points.iter().map(|&e| self.distance(e)).fold(0.0, f64::max);
        for b in &self.bands {
            h = h.max(coverage_gap(b, &sorted));
        }
        h
    }

    /// Hausdorff distance between two band unions.
    pub fn hausdorff(&self, other: &BandList) -> f64 {
        fn one_side(a: &BandList, b: &BandList) -> f64 {
            let mut h = 0.0f64;
            for band in a.iter() {
                h = h.max(b.distance(band.alpha)).max(b.distance(band.beta));
                for gap in b.bands.windows(2) {
                    let mid = 0.5 * (gap[0].beta + gap[1].alpha);
                    if band.contains(mid) {
                        h = h.max(b.distance(mid));
                    }
                }
            }
            h
        }
        if self.is_empty() || other.is_empty() {
            return if self.is_empty() && other.is_empty() { 0.0 } else { f64::INFINITY };
        }
        one_side(self, other).max(one_side(other, self))
    }
}

/// Largest distance from a point of `band` to the sorted point cloud.
fn coverage_gap(band: &Band, sorted: &[f64]) -> f64 {
    if sorted.is_empty() {
        return f64::INFINITY;
    }
    let nearest = |e: f64| {
        let i = sorted.partition_point(|&x| x < e);
        let mut d = f64::INFINITY;
        if i < sorted.len() {
            d = d.min((sorted[i] - e).abs());
        }
        if i > 0 {
            d = d.min((e - sorted[i - 1]).abs());
        }
        d
    };
    let mut h = nearest(band.alpha).max(nearest(band.beta));
    let lo = sorted.partition_point(|&x| x < band.alpha);
    let hi = sorted.partition_point(|&x| x <= band.beta);
    for w in sorted[lo..hi].windows(2) {
        h = h.max(0.5 * (w[1] - w[0]));
    }
    h
}

/// Sum of band lengths.
pub fn spectrum_measure(bands: &BandList) -> f64 {
    bands.measure()
}

/// The `p` unmerged bands `[lambda_{2j}, lambda_{2j+1}]`, one per band index.
pub fn raw_band_edges(recipe: &PotentialRecipe, cap: u64) -> Result<Vec<Band>> {
    let p = recipe.period();
    if p > cap {
        return Err(Error::PeriodTooLarge { period: p, cap });
    }
    if p > DENSE_LIMIT {
        return Ok((0..p).map(|j| band_edges_by_index(recipe, j)).collect());
    }
    let v = recipe.values(0, p as usize);
    let mut edges = floquet_eigenvalues(&v, 1.0);
    edges.extend(floquet_eigenvalues(&v, -1.0));
    edges.sort_by(f64::total_cmp);
    Ok(edges.chunks(2).map(|c| Band::new(c[0], c[1])).collect())
}

/// Eigenvalues of one period with boundary phase `wrap` (`+1` periodic, `-1` antiperiodic).
fn floquet_eigenvalues(v: &[f64], wrap: f64) -> Vec<f64> {
    let p = v.len();
    if p == 1 {
        return vec![v[0] + 2.0 * wrap];
    }
    let mut h = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        h[(i, i)] = v[i];
        if i + 1 < p {
            h[(i, i + 1)] = 1.0;
            h[(i + 1, i)] = 1.0;
        }
    }
    h[(0, p - 1)] += wrap;
    h[(p - 1, 0)] += wrap;
    h.symmetric_eigenvalues().iter().copied().collect()
}

/// Band structure of a periodic potential from the Floquet eigenproblems.
pub fn band_edges_exact(recipe: &PotentialRecipe) -> Result<BandList> {
    band_edges_exact_with_cap(recipe, EXACT_PERIOD_CAP)
}

pub fn band_edges_exact_with_cap(recipe: &PotentialRecipe, cap: u64) -> Result<BandList> {
    let raw = raw_band_edges(recipe, cap).map_err(|e| match e {
        Error::PeriodTooLarge { period, cap } => Error::InvalidInput(format!(
            "period {period} exceeds the exact band cap {cap}; use local_bands for windows"
        )),
        other => other,
    })?;
    Ok(BandList::merged(raw, MERGE_TOL))
}

/// Index of the band containing `e`, or of the first band above it.
pub fn band_index_at(e: f64, recipe: &PotentialRecipe) -> u64 {
    (count_position(e, recipe) / 2) as u64
}
