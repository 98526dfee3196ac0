use std::f64::consts::PI;

use super::scaled::{ldexp, ScaledMatrix2};

/// A matrix of determinant one together with a lift of its action on line angles.
///
/// Lines through the origin are parametrized by angles modulo `pi`. The lift `F`
/// is an increasing map of the real line with `F(y + pi) = F(y) + pi`; it is
/// stored through its value `base = F(0)`. Writing the matrix as `R(base) T`
/// with `T` upper triangular with positive diagonal makes `F(y) = base + G_T(y)`
/// where `G_T` maps `[0, pi]` onto `[0, pi]` without any branch ambiguity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LiftedMatrix {
    m: ScaledMatrix2,
    base: f64,
}

/// Where an energy sits relative to the bands of a periodic operator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpectralPosition {
    /// In a spectral gap with `below` bands strictly below.
    Gap { below: u64 },
    /// Inside band `index` (zero based, counted from the bottom); `fraction` in `(0, 1)`
    /// is the share of that band's states below the energy.
    Band { index: u64, fraction: f64 },
}

impl SpectralPosition {
    /// Twice the number of bands below, plus one inside a band. Monotone in the energy.
    pub fn half_count(&self) -> u128 {
        match *self {
            SpectralPosition::Gap { below } => 2 * below as u128,
            SpectralPosition::Band { index, .. } => 2 * index as u128 + 1,
        }
    }

    /// Number of bands below, counting the current one fractionally.
    pub fn count(&self) -> f64 {
        match *self {
            SpectralPosition::Gap { below } => below as f64,
            SpectralPosition::Band { index, fraction } => index as f64 + fraction,
        }
    }

    pub fn in_band(&self) -> bool {
        matches!(self, SpectralPosition::Band { .. })
    }
}

impl LiftedMatrix {
    pub fn identity() -> Self {
        Self { m: ScaledMatrix2::identity(), base: 0.0 }
    }

    /// One transfer step `[[x, -1], [1, 0]]`; the image of the horizontal line
    /// has angle `atan2(1, x)` in `(0, pi)`.
    pub fn step(x: f64) -> Self {
        Self { m: ScaledMatrix2::step(x), base: 1f64.atan2(x) }
    }

    pub fn matrix(&self) -> &ScaledMatrix2 {
        &self.m
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    /// Upper-triangular factor `(t11, t12, t22)` of `R(-base) M` in normalized units.
    fn triangular(&self) -> (f64, f64, f64) {
        let [a, b, c, d] = self.m.raw();
        let (s, co) = self.base.sin_cos();
        let t11 = co * a + s * c;
        let t12 = co * b + s * d;
        let t22_direct = -s * b + co * d;
        let det = self.m.unit_det_normalized();
        let sign = if t11 != 0.0 { t11.signum() } else { t22_direct.signum() };
        let (t11, t12) = (sign * t11, sign * t12);
        let t22 = if t11 * t11 > det { det / t11 } else { (sign * t22_direct).max(0.0) };
        (t11, t12, t22)
    }

    /// Evaluates the lift at angle `y`.
    pub fn eval(&self, y: f64) -> f64 {
        let mut n = (y / PI).floor();
        let mut y0 = y - n * PI;
        if y0 >= PI {
            y0 -= PI;
            n += 1.0;
        } else if y0 < 0.0 {
            y0 += PI;
            n -= 1.0;
        }
        let (t11, t12, t22) = self.triangular();
        let (s, c) = y0.sin_cos();
        let g = (t22 * s).atan2(t11 * c + t12 * s);
        let g = if g < -0.5 * PI { g + 2.0 * PI } else { g };
        self.base + g + n * PI
    }

    /// `later ∘ self`: first `self`, then `later`.
    pub fn then(&self, later: &Self) -> Self {
        Self { m: later.m * self.m, base: later.eval(self.base) }
    }

    pub fn pow(&self, n: u64) -> Self {
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

    /// Translation number `lim F^n(y) / n`, split as `k * pi + phi` with `phi` in `[0, pi)`.
    ///
    /// Returns `(k, None)` when the matrix has a real eigendirection (then the
    /// translation number is exactly `k * pi`), and `(k, Some(phi))` with
    /// `phi` in `(0, pi)` in the elliptic case.
    pub fn translation(&self) -> (i128, Option<f64>) {
        let [a, b, c, d] = self.m.raw();
        let t = a + d;
        let e = self.m.exp2();
        let two = ldexp(2.0, -e);
        if t.abs() >= two {
            let root = ldexp(1.0, -e);
            let disc = ((t.abs() - 2.0 * root) * (t.abs() + 2.0 * root)).max(0.0);
            let mu = t.signum() * 0.5 * (t.abs() + disc.sqrt());
            let v1 = [b, mu - a];
            let v2 = [mu - d, c];
            let v = if v1[0].hypot(v1[1]) >= v2[0].hypot(v2[1]) { v1 } else { v2 };
            let y = v[1].atan2(v[0]).rem_euclid(PI);
            let k = ((self.eval(y) - y) / PI).round() as i128;
            (k, None)
        } else {
            let half = ldexp(t, e - 1).clamp(-1.0, 1.0);
            let theta = half.acos();
            let phi = if c > 0.0 { theta } else { PI - theta };
            let mut best: Option<(f64, f64)> = None;
            for i in 0..4 {
                let y = i as f64 * PI / 4.0;
                let r = (self.eval(y) - y) / PI;
                let centrality = (r - r.floor() - 0.5).abs();
                if best.is_none_or(|(bc, _)| centrality < bc) {
                    best = Some((centrality, r));
                }
            }
            let k = best.map(|(_, r)| r.floor()).unwrap_or(0.0) as i128;
            (k, Some(phi))
        }
    }

    /// Interprets `self` as the monodromy over `period` sites and locates the energy
    /// relative to the bands: the number of bands below is `period - rotation / pi`.
    pub fn spectral_position(&self, period: u64) -> SpectralPosition {
        let p = period as i128;
        match self.translation() {
            (k, None) => SpectralPosition::Gap { below: (p - k).clamp(0, p) as u64 },
            (k, Some(phi)) => {
                let index = (p - k - 1).clamp(0, (p - 1).max(0));
                SpectralPosition::Band { index: index as u64, fraction: 1.0 - phi / PI }
            }
        }
    }
}

impl Default for LiftedMatrix {
    fn default() -> Self {
        Self::identity()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free(e: f64) -> SpectralPosition {
        LiftedMatrix::step(e).spectral_position(1)
    }

    #[test]
    fn free_operator_positions() {
        assert_eq!(free(-3.0), SpectralPosition::Gap { below: 0 });
        assert_eq!(free(3.0), SpectralPosition::Gap { below: 1 });
        match free(0.0) {
            SpectralPosition::Band { index: 0, fraction } => {
                assert!((fraction - 0.5).abs() < 1e-15)
            }
            other => panic!("{other:?}"),
        }
        // N(E) = 1 - arccos(E/2)/pi on the free band
        for &e in &[-1.9, -0.7, 0.4, 1.9] {
            let expected = 1.0 - (e / 2.0f64).acos() / PI;
            assert!((free(e).count() - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn lift_is_increasing_and_equivariant() {
        let m = LiftedMatrix::step(0.7).then(&LiftedMatrix::step(-2.5)).then(&LiftedMatrix::step(4.0));
        let mut prev = f64::NEG_INFINITY;
        for i in 0..200 {
            let y = -3.0 + i as f64 * 0.05;
            let f = m.eval(y);
            assert!(f >= prev);
            assert!((m.eval(y + PI) - f - PI).abs() < 1e-12);
            prev = f;
        }
    }

    #[test]
    fn powers_multiply_translation() {
        let m = LiftedMatrix::step(0.3);
        let p = m.pow(1000);
        let (k, phi) = m.translation();
        let rho = k as f64 * PI + phi.unwrap();
        let (k2, phi2) = p.translation();
        let rho2 = k2 as f64 * PI + phi2.unwrap_or(0.0);
        assert!((rho2 - 1000.0 * rho).abs() < 1e-8);
    }
}
