use super::lift::{LiftedMatrix, SpectralPosition};
use super::recipe::PotentialRecipe;
use super::scaled::{ScaledMatrix2, ScaledScalar};

/// Elements that can stand in for transfer matrices in ordered products.
pub trait Cocycle: Clone + Send + Sync {
    fn identity() -> Self;
    /// The step matrix for `x = E - V(n)`.
    fn step(x: f64) -> Self;
    /// `later * self`.
    fn then(&self, later: &Self) -> Self;
    fn power(&self, n: u64) -> Self;
}

impl Cocycle for ScaledMatrix2 {
    fn identity() -> Self {
        ScaledMatrix2::identity()
    }
    fn step(x: f64) -> Self {
        ScaledMatrix2::step(x)
    }
    fn then(&self, later: &Self) -> Self {
        *later * *self
    }
    fn power(&self, n: u64) -> Self {
        self.pow(n)
    }
}

impl Cocycle for LiftedMatrix {
    fn identity() -> Self {
        LiftedMatrix::identity()
    }
    fn step(x: f64) -> Self {
        LiftedMatrix::step(x)
    }
    fn then(&self, later: &Self) -> Self {
        LiftedMatrix::then(self, later)
    }
    fn power(&self, n: u64) -> Self {
        self.pow(n)
    }
}

/// `[[E - v, -1], [1, 0]]`.
pub fn one_step(e: f64, v: f64) -> [[f64; 2]; 2] {
    [[e - v, -1.0], [1.0, 0.0]]
}

/// Product over one period of the first `level` overlays, by repeated squaring.
pub fn level_monodromy<C: Cocycle>(recipe: &PotentialRecipe, level: usize, e: f64) -> C {
    if level == 0 {
        let mut acc = C::identity();
        for run in recipe.base() {
            acc = acc.then(&C::step(e - run.value).power(run.len));
        }
        return acc;
    }
    let ov = &recipe.overlays()[level - 1];
    let child: C = level_monodromy(recipe, level - 1, e);
    let mut acc = child.power(ov.copies * ov.m0);
    let mut cache: Vec<(u64, C)> = vec![(0f64.to_bits(), child)];
    let mut i = 0;
    while i < ov.shifts.len() {
        let s = ov.shifts[i];
        let mut run = 1;
        while i + run < ov.shifts.len() && ov.shifts[i + run].to_bits() == s.to_bits() {
            run += 1;
        }
        let key = if s == 0.0 { 0f64.to_bits() } else { s.to_bits() };
        let block = match cache.iter().find(|(k, _)| *k == key) {
            Some((_, m)) => m.clone(),
            None => {
                let m: C = level_monodromy(recipe, level - 1, e - s);
                cache.push((key, m.clone()));
                m
            }
        };
        acc = acc.then(&block.power(ov.m0 * run as u64));
        i += run;
    }
    acc
}

/// Transfer matrix over one full period, `A_p(E)`.
pub fn monodromy(e: f64, recipe: &PotentialRecipe) -> ScaledMatrix2 {
    level_monodromy(recipe, recipe.depth(), e)
}

/// Monodromy with the lifted angle action, for rotation-number counting.
pub fn lifted_monodromy(e: f64, recipe: &PotentialRecipe) -> LiftedMatrix {
    level_monodromy(recipe, recipe.depth(), e)
}

/// Band position of `e` from the rotation number of the monodromy.
pub fn spectral_position(e: f64, recipe: &PotentialRecipe) -> SpectralPosition {
    lifted_monodromy(e, recipe).spectral_position(recipe.period())
}

/// Ordered product `T(start + len - 1) ... T(start)`.
pub fn range_product<C: Cocycle>(recipe: &PotentialRecipe, e: f64, start: i64, len: u64) -> C {
    let p = recipe.period();
    let s = (start as i128).rem_euclid(p as i128) as u64;
    range_level(recipe, recipe.depth(), e, s, len)
}

fn range_level<C: Cocycle>(r: &PotentialRecipe, level: usize, e: f64, start: u64, len: u64) -> C {
    if len == 0 {
        return C::identity();
    }
    let p = r.level_period(level);
    let start = start % p;
    let mut left = len;
    let mut acc = C::identity();
    if start != 0 {
        let l = left.min(p - start);
        acc = within_period(r, level, e, start, l);
        left -= l;
    }
    if left >= p {
        let full: C = level_monodromy(r, level, e);
        acc = acc.then(&full.power(left / p));
        left %= p;
    }
    if left > 0 {
        acc = acc.then(&within_period(r, level, e, 0, left));
    }
    acc
}

fn within_period<C: Cocycle>(r: &PotentialRecipe, level: usize, e: f64, start: u64, len: u64) -> C {
    let end = start + len;
    let mut acc = C::identity();
    if level == 0 {
        let mut pos = 0u64;
        for run in r.base() {
            let (a, b) = (pos.max(start), (pos + run.len).min(end));
            if a < b {
                acc = acc.then(&C::step(e - run.value).power(b - a));
            }
            pos += run.len;
            if pos >= end {
                break;
            }
        }
        return acc;
    }
    let ov = &r.overlays()[level - 1];
    let seg = r.level_period(level - 1) * ov.m0;
    let prefix = seg * ov.copies;
    if start < prefix {
        let b = end.min(prefix);
        acc = acc.then(&range_level(r, level - 1, e, start, b - start));
    }
    if end > prefix {
        let first = (start.max(prefix) - prefix) / seg;
        let last = (end - 1 - prefix) / seg;
        for blk in first..=last {
            let s0 = prefix + blk * seg;
            let (a, b) = (start.max(s0), end.min(s0 + seg));
            let shift = ov.shifts[blk as usize];
            acc = acc.then(&range_level(r, level - 1, e - shift, a - s0, b - a));
        }
    }
    acc
}

/// `A_N(E)` from site 0; `N = 0` gives the identity.
pub fn transfer_product(e: f64, recipe: &PotentialRecipe, n: u64) -> ScaledMatrix2 {
    range_product(recipe, e, 0, n)
}

/// Site-by-site ordered product; the test oracle for the structured products.
pub fn naive_transfer_product(e: f64, recipe: &PotentialRecipe, start: i64, n: u64) -> ScaledMatrix2 {
    let mut acc = ScaledMatrix2::identity();
    for i in 0..n as i64 {
        acc = ScaledMatrix2::step(e - recipe.eval(start + i)) * acc;
    }
    acc
}

/// Trace of the monodromy in sign / log-magnitude form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Discriminant {
    pub sign: i8,
    pub log_abs: f64,
    pub scaled: ScaledScalar,
}

impl Discriminant {
    /// Plain value; infinite when it does not fit.
    pub fn value(&self) -> f64 {
        self.scaled.to_f64()
    }
}

pub fn discriminant(e: f64, recipe: &PotentialRecipe) -> Discriminant {
    let t = monodromy(e, recipe).trace();
    Discriminant { sign: t.signum() as i8, log_abs: t.ln_abs(), scaled: t }
}

/// `arccosh(|tr| / 2)` from a scaled trace, accurate near 2 and free of overflow.
pub fn arccosh_half_trace(t: &ScaledScalar) -> f64 {
    let log_abs = t.ln_abs();
    if log_abs > 300.0 {
        let inv = (-2.0 * log_abs).exp() * 4.0;
        return log_abs + (1.0 + (1.0 - inv).sqrt()).ln() - std::f64::consts::LN_2;
    }
    let x = t.to_f64().abs() * 0.5;
    if x <= 1.0 {
        return 0.0;
    }
    let y = x - 1.0;
    (y + (y * (x + 1.0)).sqrt()).ln_1p()
}

/// Lyapunov exponent of a periodic potential from the monodromy trace.
pub fn lyapunov_periodic(e: f64, recipe: &PotentialRecipe) -> f64 {
    let m = monodromy(e, recipe);
    if m.trace_within(2.0) {
        return 0.0;
    }
    arccosh_half_trace(&m.trace()) / recipe.period() as f64
}

/// `(1/N) log ||A_N(E)||` with the spectral norm.
pub fn finite_lyapunov(e: f64, recipe: &PotentialRecipe, n: u64) -> f64 {
    assert!(n >= 1, "finite_lyapunov needs N >= 1");
    transfer_product(e, recipe, n).log_norm().max(0.0) / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transfer::recipe::{BaseRun, StageOverlay};

    fn staged() -> PotentialRecipe {
        PotentialRecipe::from_runs(vec![BaseRun { value: 2.0, len: 3 }, BaseRun { value: -1.5, len: 2 }])
            .unwrap()
            .with_overlay(StageOverlay { m0: 3, copies: 2, shifts: vec![0.25, 0.25, -0.5] })
            .unwrap()
            .with_overlay(StageOverlay { m0: 2, copies: 1, shifts: vec![0.0, 0.125] })
            .unwrap()
    }

    fn close(a: &ScaledMatrix2, b: &ScaledMatrix2, tol: f64) -> bool {
        let (x, y) = (a.unit_entries(), b.unit_entries());
        (a.log_norm() - b.log_norm()).abs() <= tol * a.log_norm().abs().max(1.0)
            && (0..2).all(|i| (0..2).all(|j| (x[i][j] - y[i][j]).abs() < 1e-7))
    }

    #[test]
    fn one_step_examples() {
        assert_eq!(one_step(0.0, 0.0), [[0.0, -1.0], [1.0, 0.0]]);
        assert_eq!(one_step(2.0, 2.0), [[0.0, -1.0], [1.0, 0.0]]);
        assert_eq!(one_step(1.0, -1.0), [[2.0, -1.0], [1.0, 0.0]]);
    }

    #[test]
    fn monodromy_matches_naive() {
        let r = staged();
        for &e in &[-3.1, -0.4, 0.0, 0.77, 2.5, 4.4] {
            let fast = monodromy(e, &r);
            let slow = naive_transfer_product(e, &r, 0, r.period());
            assert!(close(&fast, &slow, 1e-9), "E = {e}");
        }
    }

    #[test]
    fn range_products_match_naive() {
        let r = staged();
        for &(start, len) in &[(0i64, 7u64), (5, 100), (13, 1000), (-40, 333), (89, 1)] {
            let fast: ScaledMatrix2 = range_product(&r, 0.3, start, len);
            let slow = naive_transfer_product(0.3, &r, start, len);
            assert!(close(&fast, &slow, 1e-9), "{start} {len}");
        }
    }

    #[test]
    fn free_examples() {
        let free = PotentialRecipe::constant(0.0);
        assert_eq!(transfer_product(0.0, &free, 0), ScaledMatrix2::identity());
        assert_eq!(transfer_product(0.0, &free, 4), ScaledMatrix2::identity());
        let l = transfer_product(3.0, &free, 1000).log_scale() / 1000.0;
        assert!((l - 1.5f64.acosh()).abs() < 1e-3);
        assert!((lyapunov_periodic(3.0, &free) - ((3.0 + 5f64.sqrt()) / 2.0).ln()).abs() < 1e-15);
        assert_eq!(lyapunov_periodic(1.0, &free), 0.0);
        assert_eq!(lyapunov_periodic(2.0, &free), 0.0);
        assert!((finite_lyapunov(3.0, &free, 2048) - 1.5f64.acosh()).abs() < 1e-3);
        assert_eq!(finite_lyapunov(0.0, &free, 4), 0.0);
    }

    #[test]
    fn discriminant_of_period_two() {
        let r = PotentialRecipe::periodic(&[4.0, 0.0]).unwrap();
        for &e in &[-1.0, 0.5, 3.0, 7.0] {
            let d = discriminant(e, &r);
            assert!((d.value() - (e * e - 4.0 * e - 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn arccosh_near_two_and_huge() {
        let t = ScaledScalar::new(2.0 + 1e-12, 0);
        assert!((arccosh_half_trace(&t) - (1.0 + 0.5e-12f64).acosh()).abs() < 1e-12);
        let big = ScaledScalar::new(1.5, 5000);
        let expected = 1.5f64.ln() + 5000.0 * std::f64::consts::LN_2 - std::f64::consts::LN_2 + 2f64.ln();
        assert!((arccosh_half_trace(&big) - expected).abs() < 1e-9);
    }
}
