use num_complex::Complex64;

use super::product::{level_monodromy, monodromy, Cocycle};
use super::recipe::PotentialRecipe;
use super::scaled::{floor_log2, ldexp, ScaledMatrix2, ScaledScalar};
use crate::error::{Error, Result};

/// A transfer product over a segment together with the quadratic form
/// `G = sum_n A_n^T e1 e1^T A_n`, where `A_n` runs over the partial products.
///
/// For a solution with initial data `x`, `x^T G x` is its square sum over the
/// segment, so Bloch normalizations come out of the same structured product as
/// the monodromy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GramProduct {
    a: ScaledMatrix2,
    /// `[g11, g12, g22]` scaled by `2^g_exp2`.
    g: [f64; 3],
    g_exp2: i64,
}

impl GramProduct {
    pub fn matrix(&self) -> &ScaledMatrix2 {
        &self.a
    }

    /// `x^* G x` for a complex initial vector.
    pub fn quadratic_form(&self, x: [Complex64; 2]) -> ScaledScalar {
        let [g11, g12, g22] = self.g;
        let q = |u: f64, w: f64| g11 * u * u + 2.0 * g12 * u * w + g22 * w * w;
        ScaledScalar::new(q(x[0].re, x[1].re) + q(x[0].im, x[1].im), self.g_exp2)
    }

    fn normalized(g: [f64; 3], exp2: i64) -> ([f64; 3], i64) {
        let max = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max == 0.0 || !max.is_finite() {
            return ([0.0; 3], 0);
        }
        let k = floor_log2(max);
        (g.map(|v| ldexp(v, -k)), exp2 + k)
    }
}

impl Cocycle for GramProduct {
    fn identity() -> Self {
        Self { a: ScaledMatrix2::identity(), g: [0.0; 3], g_exp2: 0 }
    }

    fn step(x: f64) -> Self {
        Self { a: ScaledMatrix2::step(x), g: [1.0, 0.0, 0.0], g_exp2: 0 }
    }

    fn then(&self, later: &Self) -> Self {
        let [p, q, r, s] = self.a.raw();
        let [h11, h12, h22] = later.g;
        // N^T H N for the normalized entries N = [[p, q], [r, s]]
        let c11 = p * (h11 * p + h12 * r) + r * (h12 * p + h22 * r);
        let c12 = p * (h11 * q + h12 * s) + r * (h12 * q + h22 * s);
        let c22 = q * (h11 * q + h12 * s) + s * (h12 * q + h22 * s);
        let (c, ce) = Self::normalized([c11, c12, c22], later.g_exp2 + 2 * self.a.exp2());
        let (g, ge) = if self.g == [0.0; 3] {
            (c, ce)
        } else if c == [0.0; 3] {
            (self.g, self.g_exp2)
        } else {
            let e = ce.max(self.g_exp2);
            let sum = [0, 1, 2].map(|i| ldexp(c[i], ce - e) + ldexp(self.g[i], self.g_exp2 - e));
            Self::normalized(sum, e)
        };
        Self { a: later.a * self.a, g, g_exp2: ge }
    }

    fn power(&self, n: u64) -> Self {
        let mut result = Self::identity();
        let mut base = *self;
        let mut n = n;
        while n > 0 {
            if n & 1 == 1 {
                result = result.then(&base);
            }
            n >>= 1;
            if n > 0 {
                base = base.then(&base);
            }
        }
        result
    }
}

/// Initial data and one-period square sum of a Bloch solution, at any period.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlochBoundary {
    /// Unnormalized `(psi(0), psi(-1))`.
    pub initial: [Complex64; 2],
    /// `sum_{n=0}^{p-1} |psi(n)|^2` for the unnormalized solution.
    pub period_norm_sq: ScaledScalar,
    pub theta: f64,
}

impl BlochBoundary {
    /// `|psi(0)|^2 + |psi(-1)|^2` after window normalization.
    pub fn edge_weight(&self) -> f64 {
        let w = self.initial[0].norm_sqr() + self.initial[1].norm_sqr();
        (w.ln() - self.period_norm_sq.ln_abs()).exp()
    }
}

/// Bloch data without materializing the period, via the structured Gram product.
pub fn bloch_boundary(e: f64, recipe: &PotentialRecipe) -> Result<BlochBoundary> {
    let m = monodromy(e, recipe);
    if !m.trace_within(2.0 + 1e-9) {
        return Err(Error::NotInSpectrum { energy: e, trace_abs: m.trace().to_f64().abs() });
    }
    let [a, b, c, d] = m.raw();
    let scale = ldexp(1.0, -m.exp2());
    let half = ldexp(0.5 * (a + d), m.exp2()).clamp(-1.0, 1.0);
    let theta = half.acos();
    let mu = Complex64::from_polar(scale, theta);
    let v1 = [Complex64::new(b, 0.0), mu - a];
    let v2 = [mu - d, Complex64::new(c, 0.0)];
    let n1 = v1[0].norm_sqr() + v1[1].norm_sqr();
    let n2 = v2[0].norm_sqr() + v2[1].norm_sqr();
    let initial = if n1 == 0.0 && n2 == 0.0 {
        [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]
    } else if n1 >= n2 {
        v1
    } else {
        v2
    };
    let gram: GramProduct = level_monodromy(recipe, recipe.depth(), e);
    Ok(BlochBoundary { initial, period_norm_sq: gram.quadratic_form(initial), theta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transfer::bloch::bloch_solution;
    use crate::transfer::recipe::{BaseRun, StageOverlay};

    #[test]
    fn gram_matches_explicit_square_sum() {
        let r = PotentialRecipe::from_runs(vec![BaseRun { value: 1.0, len: 2 }, BaseRun { value: -0.5, len: 3 }])
            .unwrap()
            .with_overlay(StageOverlay { m0: 3, copies: 2, shifts: vec![0.25, -0.25] })
            .unwrap();
        let e = 0.3;
        let x = [Complex64::new(0.7, 0.1), Complex64::new(-0.2, 0.4)];
        let g: GramProduct = level_monodromy(&r, r.depth(), e);
        let (mut prev, mut cur) = (x[1], x[0]);
        let mut sum = 0.0;
        for n in 0..r.period() as i64 {
            sum += cur.norm_sqr();
            let next = cur * (e - r.eval(n)) - prev;
            prev = cur;
            cur = next;
        }
        let got = g.quadratic_form(x).to_f64();
        assert!((got - sum).abs() <= 1e-9 * sum, "{got} {sum}");
    }

    #[test]
    fn boundary_weight_matches_materialized_bloch() {
        let r = PotentialRecipe::periodic(&[0.4, -1.1, 2.0, 0.0, 0.7]).unwrap();
        let bands = crate::spectrum::band_edges_exact(&r).unwrap();
        for band in bands.iter() {
            let e = band.midpoint();
            let full = bloch_solution(e, &r).unwrap();
            let fast = bloch_boundary(e, &r).unwrap();
            let w = full.at(0).norm_sqr() + full.at(-1).norm_sqr();
            assert!((fast.edge_weight() - w).abs() < 1e-10);
        }
    }
}
