use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;

use super::bands::{raw_band_edges, Band, EXACT_PERIOD_CAP};
use crate::error::Result;
use crate::transfer::{discriminant, spectral_position, PotentialRecipe};

const GL_NODES: usize = 64;
const QUAD_TOL: f64 = 1e-12;
const MAX_PANEL_DEPTH: u32 = 40;

/// Integrated density of states from the band structure and the phase `arccos(tr / 2)`.
pub fn ids(e: f64, recipe: &PotentialRecipe) -> Result<f64> {
    let raw = raw_band_edges(recipe, EXACT_PERIOD_CAP)?;
    Ok(ids_from_bands(e, recipe, &raw))
}

/// As [`ids`], with the unmerged bands already computed.
pub fn ids_from_bands(e: f64, recipe: &PotentialRecipe, raw: &[Band]) -> f64 {
    let p = raw.len() as f64;
    let j = raw.partition_point(|b| b.beta < e);
    if j == raw.len() {
        return 1.0;
    }
    let band = raw[j];
    if e <= band.alpha {
        return j as f64 / p;
    }
    let orient = orientation(recipe, band.alpha);
    let half = (discriminant(e, recipe).value() * 0.5).clamp(-1.0, 1.0);
    let theta = half.acos();
    let frac = if orient > 0.0 { theta / PI } else { 1.0 - theta / PI };
    (j as f64 + frac) / p
}

/// Integrated density of states from the rotation number; valid at any period.
pub fn ids_by_rotation(e: f64, recipe: &PotentialRecipe) -> f64 {
    spectral_position(e, recipe).count() / recipe.period() as f64
}

/// Sign of the discriminant at a band's left edge.
fn orientation(recipe: &PotentialRecipe, left_edge: f64) -> f64 {
    if discriminant(left_edge, recipe).sign >= 0 {
        1.0
    } else {
        -1.0
    }
}

/// Lyapunov exponent from Thouless' formula `L(E) = int log|t - E| dN(t)`.
///
/// Each band is integrated in its phase variable, where the density of states is uniform.
pub fn thouless_lyapunov(e: f64, recipe: &PotentialRecipe) -> Result<f64> {
    let raw = raw_band_edges(recipe, EXACT_PERIOD_CAP)?;
    let rule = GaussLegendre::new(NonZeroUsize::new(GL_NODES).expect("nonzero"));
    let p = raw.len() as f64;
    let mut total = 0.0;
    for band in &raw {
        let phase = BandPhase::new(recipe, *band);
        let f = |u: f64| (phase.energy_at(u) - e).abs().ln();
        total += adaptive(&rule, &f, 0.0, 1.0, rule.integrate(0.0, 1.0, &f), 0);
    }
    Ok(total / p)
}

fn adaptive(rule: &GaussLegendre, f: &impl Fn(f64) -> f64, a: f64, b: f64, whole: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let left = rule.integrate(a, m, f);
    let right = rule.integrate(m, b, f);
    let split = left + right;
    if (split - whole).abs() <= QUAD_TOL * (b - a).max(1e-3) || depth >= MAX_PANEL_DEPTH {
        return split;
    }
    adaptive(rule, f, a, m, left, depth + 1) + adaptive(rule, f, m, b, right, depth + 1)
}

/// Inverse of the density of states on one band: `u in [0, 1]` maps to the energy
/// where the band is filled to fraction `u`.
struct BandPhase<'a> {
    recipe: &'a PotentialRecipe,
    band: Band,
    orient: f64,
}

impl<'a> BandPhase<'a> {
    fn new(recipe: &'a PotentialRecipe, band: Band) -> Self {
        let orient = orientation(recipe, band.alpha);
        Self { recipe, band, orient }
    }

    /// `orient * tr / 2 - cos(pi u)`, decreasing in the energy across the band.
    fn residual(&self, t: f64, target: f64) -> f64 {
        self.orient * 0.5 * discriminant(t, self.recipe).value() - target
    }

    fn energy_at(&self, u: f64) -> f64 {
        let target = (PI * u).cos();
        let (mut a, mut b) = (self.band.alpha, self.band.beta);
        let (mut fa, mut fb) = (1.0 - target, -1.0 - target);
        if fa <= 0.0 {
            return a;
        }
        if fb >= 0.0 {
            return b;
        }
        // Illinois variant of regula falsi.
        let mut side = 0i8;
        let mut x = 0.5 * (a + b);
        for _ in 0..200 {
            x = (a * fb - b * fa) / (fb - fa);
            if !(x > a && x < b) {
                x = 0.5 * (a + b);
            }
            let fx = self.residual(x, target);
            if fx == 0.0 || (b - a) <= 4.0 * f64::EPSILON * a.abs().max(b.abs()).max(1.0) {
                break;
            }
            if fx > 0.0 {
                a = x;
                fa = fx;
                if side == 1 {
                    fb *= 0.5;
                }
                side = 1;
            } else {
                b = x;
                fb = fx;
                if side == -1 {
                    fa *= 0.5;
                }
                side = -1;
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_ids() {
        let free = PotentialRecipe::constant(0.0);
        assert!((ids(0.0, &free).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(ids(-2.0, &free).unwrap(), 0.0);
        assert_eq!(ids(-3.0, &free).unwrap(), 0.0);
        assert_eq!(ids(3.0, &free).unwrap(), 1.0);
        for e in [-1.5, -0.2, 0.9] {
            assert!((ids(e, &free).unwrap() - ids_by_rotation(e, &free)).abs() < 1e-13);
        }
    }

    #[test]
    fn period_two_gap_is_half_filled() {
        let r = PotentialRecipe::periodic(&[4.0, 0.0]).unwrap();
        assert!((ids(2.0, &r).unwrap() - 0.5).abs() < 1e-15);
        for e in [-0.5, 4.3, 6.0] {
            assert!((ids(e, &r).unwrap() - ids_by_rotation(e, &r)).abs() < 1e-12);
        }
    }

    #[test]
    fn thouless_matches_trace() {
        let free = PotentialRecipe::constant(0.0);
        let l = thouless_lyapunov(3.0, &free).unwrap();
        assert!((l - 1.5f64.acosh()).abs() < 1e-10);
        assert!(thouless_lyapunov(0.0, &free).unwrap().abs() < 1e-4);
        let r = PotentialRecipe::periodic(&[1.0, -0.5, 2.0, 0.3]).unwrap();
        for e in [-4.0, 0.05, 1.3, 5.0] {
            let t = thouless_lyapunov(e, &r).unwrap();
            let d = crate::transfer::lyapunov_periodic(e, &r);
            if !super::super::local::in_spectrum(e, &r) {
                assert!((t - d).abs() < 1e-8, "{e}: {t} vs {d}");
            }
        }
    }
}
