use num_complex::Complex64;

use super::product::monodromy;
use super::recipe::PotentialRecipe;
use crate::error::{Error, Result};

/// Largest period for which a Bloch solution is materialized.
pub const BLOCH_MAX_PERIOD: u64 = 1 << 22;

/// A bounded solution with `psi(n + p) = multiplier * psi(n)` and unit one-period norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BlochVector {
    pub energy: f64,
    /// `psi(0), ..., psi(p - 1)`.
    pub values: Vec<Complex64>,
    /// `psi(-1)`, fixed by the Floquet condition.
    pub before: Complex64,
    /// `psi(p)`, fixed by the Floquet condition.
    pub after: Complex64,
    pub multiplier: Complex64,
    /// Quasimomentum in `[0, pi]`.
    pub theta: f64,
}

impl BlochVector {
    pub fn period(&self) -> usize {
        self.values.len()
    }

    /// `psi(n)` for any integer `n`.
    pub fn at(&self, n: i64) -> Complex64 {
        let p = self.values.len() as i64;
        let q = n.div_euclid(p);
        let r = n.rem_euclid(p) as usize;
        let phase = self.multiplier.arg() * q as f64;
        self.values[r] * Complex64::from_polar(1.0, phase)
    }

    /// `sum_{k=1}^{p} |psi(m + k)|^2`.
    pub fn window_norm(&self, m: i64) -> f64 {
        (1..=self.values.len() as i64).map(|k| self.at(m + k).norm_sqr()).sum()
    }

    /// Largest `|psi(n+1) + psi(n-1) + (V(n) - E) psi(n)|` over one period.
    pub fn max_residual(&self, recipe: &PotentialRecipe) -> f64 {
        let p = self.values.len() as i64;
        (0..p)
            .map(|n| {
                let lhs = self.at(n + 1) + self.at(n - 1) + self.at(n) * (recipe.eval(n) - self.energy);
                lhs.norm()
            })
            .fold(0.0, f64::max)
    }
}

/// Bloch solution at an energy in the spectrum.
pub fn bloch_solution(e: f64, recipe: &PotentialRecipe) -> Result<BlochVector> {
    let p = recipe.period();
    if p > BLOCH_MAX_PERIOD {
        return Err(Error::PeriodTooLarge { period: p, cap: BLOCH_MAX_PERIOD });
    }
    let m = monodromy(e, recipe);
    let rows = m.to_rows().ok_or(Error::NotInSpectrum { energy: e, trace_abs: f64::INFINITY })?;
    let [[a, b], [c, d]] = rows;
    let tr = a + d;
    if tr.abs() > 2.0 + 1e-9 {
        return Err(Error::NotInSpectrum { energy: e, trace_abs: tr.abs() });
    }
    let theta = (0.5 * tr).clamp(-1.0, 1.0).acos();
    let lambda = Complex64::from_polar(1.0, theta);
    // eigenvector of the monodromy, which maps (u(0), u(-1)) to (u(p), u(p-1))
    let v1 = [Complex64::new(b, 0.0), lambda - a];
    let v2 = [lambda - d, Complex64::new(c, 0.0)];
    let n1 = v1[0].norm_sqr() + v1[1].norm_sqr();
    let n2 = v2[0].norm_sqr() + v2[1].norm_sqr();
    let v = if n1 == 0.0 && n2 == 0.0 {
        [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]
    } else if n1 >= n2 {
        v1
    } else {
        v2
    };
    let mut values = Vec::with_capacity(p as usize);
    let (mut prev, mut cur) = (v[1], v[0]);
    for n in 0..p as i64 {
        values.push(cur);
        let next = cur * (e - recipe.eval(n)) - prev;
        prev = cur;
        cur = next;
    }
    let norm = values.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    for z in &mut values {
        *z /= norm;
    }
    let before = values[p as usize - 1] / lambda;
    let after = values[0] * lambda;
    Ok(BlochVector { energy: e, values, before, after, multiplier: lambda, theta })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_wave_for_free_operator() {
        let free = PotentialRecipe::constant(0.0);
        let b = bloch_solution(0.0, &free).unwrap();
        assert_eq!(b.period(), 1);
        assert!((b.values[0].norm() - 1.0).abs() < 1e-15);
        assert!((b.theta - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!(b.max_residual(&free) < 1e-12);
    }

    #[test]
    fn period_two_mid_band() {
        let r = PotentialRecipe::periodic(&[4.0, 0.0]).unwrap();
        let mid = 0.5 * ((2.0 - 2.0 * 2f64.sqrt()) + 0.0);
        let b = bloch_solution(mid, &r).unwrap();
        assert!(b.max_residual(&r) < 1e-12);
        for m in [-7, 0, 3, 10] {
            assert!((b.window_norm(m) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn band_edge_is_real_periodic() {
        let free = PotentialRecipe::constant(0.0);
        let b = bloch_solution(2.0, &free).unwrap();
        assert!(b.theta.abs() < 1e-15);
        assert!((b.multiplier - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!(b.max_residual(&free) < 1e-12);
    }

    #[test]
    fn outside_spectrum_is_rejected() {
        let free = PotentialRecipe::constant(0.0);
        assert!(matches!(bloch_solution(2.5, &free), Err(Error::NotInSpectrum { .. })));
    }
}
