//! Independent oracles shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use limper_core::{BaseRun, PotentialRecipe, StageOverlay};

pub fn random_periodic(rng: &mut ChaCha8Rng, max_period: usize, amp: f64) -> Vec<f64> {
    let p = rng.random_range(1..=max_period);
    (0..p).map(|_| rng.random_range(-amp..=amp)).collect()
}

/// Random base runs and up to three overlays, with period at most `max_period`.
pub fn random_stage_recipe(rng: &mut ChaCha8Rng, max_period: u64) -> PotentialRecipe {
    loop {
        let runs: Vec<BaseRun> = (0..rng.random_range(1..=4))
            .map(|_| BaseRun { value: rng.random_range(-3.0..=3.0), len: rng.random_range(1..=6) })
            .collect();
        let mut r = PotentialRecipe::from_runs(runs).expect("valid runs");
        for _ in 0..rng.random_range(0..=3) {
            let ov = StageOverlay {
                m0: rng.random_range(1..=40),
                copies: rng.random_range(1..=30),
                shifts: (0..rng.random_range(0..=3)).map(|_| rng.random_range(-1.0..=1.0)).collect(),
            };
            match r.clone().with_overlay(ov) {
                Ok(next) if next.period() <= max_period => r = next,
                _ => break,
            }
        }
        if r.period() >= 2 {
            return r;
        }
    }
}

/// One period of values, built from the recipe's public structure.
pub fn materialize(recipe: &PotentialRecipe) -> Vec<f64> {
    let mut v: Vec<f64> = recipe.base().iter().flat_map(|r| std::iter::repeat_n(r.value, r.len as usize)).collect();
    for ov in recipe.overlays() {
        let block: Vec<f64> = (0..ov.m0).flat_map(|_| v.iter().copied()).collect();
        let mut next = Vec::with_capacity(block.len() * (ov.copies as usize + ov.shifts.len()));
        for _ in 0..ov.copies {
            next.extend_from_slice(&block);
        }
        for &s in &ov.shifts {
            next.extend(block.iter().map(|x| x + s));
        }
        v = next;
    }
    v
}

/// A 2x2 matrix `exp(log_scale) * m` with `max |m_ij| = 1`.
#[derive(Clone, Copy, Debug)]
pub struct LogMatrix {
    pub m: [[f64; 2]; 2],
    pub log_scale: f64,
}

impl LogMatrix {
    pub fn identity() -> Self {
        Self { m: [[1.0, 0.0], [0.0, 1.0]], log_scale: 0.0 }
    }

    fn renorm(m: [[f64; 2]; 2], log_scale: f64) -> Self {
        let s = m.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs()));
        Self { m: m.map(|r| r.map(|x| x / s)), log_scale: log_scale + s.ln() }
    }

    /// `self * rhs`.
    pub fn mul(&self, rhs: &Self) -> Self {
        let (a, b) = (self.m, rhs.m);
        let mut c = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Self::renorm(c, self.log_scale + rhs.log_scale)
    }

    pub fn pow(&self, mut n: u64) -> Self {
        let mut acc = Self::identity();
        let mut base = *self;
        while n > 0 {
            if n & 1 == 1 {
                acc = base.mul(&acc);
            }
            n >>= 1;
            if n > 0 {
                base = base.mul(&base);
            }
        }
        acc
    }

    pub fn step(x: f64) -> Self {
        Self::renorm([[x, -1.0], [1.0, 0.0]], 0.0)
    }

    /// Natural log of the spectral norm.
    pub fn log_norm(&self) -> f64 {
        let [[a, b], [c, d]] = self.m;
        let f = a * a + b * b + c * c + d * d;
        let det = a * d - b * c;
        let disc = (f * f - 4.0 * det * det).max(0.0);
        0.5 * (0.5 * (f + disc.sqrt())).ln() + self.log_scale
    }

    /// `(sign, ln |trace|)`.
    pub fn log_trace(&self) -> (f64, f64) {
        let t = self.m[0][0] + self.m[1][1];
        (t.signum(), t.abs().ln() + self.log_scale)
    }
}

/// Site-by-site ordered product `T(n-1) ... T(0)` in log scale.
pub fn naive_product(e: f64, values: &[f64]) -> LogMatrix {
    let mut acc = LogMatrix::identity();
    for (i, &v) in values.iter().enumerate() {
        let [[a, b], [c, d]] = acc.m;
        let x = e - v;
        acc.m = [[x * a - c, x * b - d], [a, b]];
        if i % 16 == 15 {
            acc = LogMatrix::renorm(acc.m, acc.log_scale);
        }
    }
    LogMatrix::renorm(acc.m, acc.log_scale)
}

/// One-period monodromy rebuilt from the recipe structure with test-side arithmetic.
pub fn structural_monodromy(e: f64, recipe: &PotentialRecipe) -> LogMatrix {
    fn level(recipe: &PotentialRecipe, depth: usize, e: f64) -> LogMatrix {
        if depth == 0 {
            return recipe
                .base()
                .iter()
                .fold(LogMatrix::identity(), |acc, r| LogMatrix::step(e - r.value).pow(r.len).mul(&acc));
        }
        let ov = &recipe.overlays()[depth - 1];
        let mut acc = level(recipe, depth - 1, e).pow(ov.m0 * ov.copies);
        for &s in &ov.shifts {
            acc = level(recipe, depth - 1, e - s).pow(ov.m0).mul(&acc);
        }
        acc
    }
    level(recipe, recipe.depth(), e)
}

/// `arccosh(|tr| / 2) / p` from a test-side product.
pub fn periodic_lyapunov_oracle(m: &LogMatrix, period: u64) -> f64 {
    let (_, lt) = m.log_trace();
    if lt <= std::f64::consts::LN_2 {
        return 0.0;
    }
    let l = if lt > 30.0 { lt } else { (lt.exp() / 2.0).acosh() };
    l / period as f64
}

/// Eigenvalues of `Delta + V` on the cycle of `p * floor(n / p)` sites, by Bloch reduction:
/// the cyclic operator is the direct sum of the `p x p` Bloch matrices at `theta = 2 pi j / M`.
pub fn cyclic_cloud(values: &[f64], n: usize) -> Vec<f64> {
    let p = values.len();
    let cells = n / p;
    let mut out = Vec::with_capacity(cells * p);
    for j in 0..cells {
        let theta = 2.0 * std::f64::consts::PI * j as f64 / cells as f64;
        let phase = Complex64::from_polar(1.0, theta);
        let mut h = DMatrix::<Complex64>::zeros(p, p);
        for i in 0..p {
            h[(i, i)] = Complex64::new(values[i], 0.0);
        }
        if p == 1 {
            h[(0, 0)] += phase + phase.conj();
        } else {
            for i in 0..p - 1 {
                h[(i, i + 1)] += Complex64::new(1.0, 0.0);
                h[(i + 1, i)] += Complex64::new(1.0, 0.0);
            }
            h[(p - 1, 0)] += phase;
            h[(0, p - 1)] += phase.conj();
        }
        out.extend(h.symmetric_eigenvalues().iter().copied());
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Hausdorff distance between a finite union of closed intervals and a point cloud.
pub fn hausdorff(bands: &[(f64, f64)], cloud: &[f64]) -> f64 {
    let to_bands = |x: f64| {
        bands
            .iter()
            .map(|&(a, b)| {
                if x < a {
                    a - x
                } else if x > b {
                    x - b
                } else {
                    0.0
                }
            })
            .fold(f64::INFINITY, f64::min)
    };
    let to_cloud = |x: f64| {
        let i = cloud.partition_point(|&c| c < x);
        let mut d = f64::INFINITY;
        if i < cloud.len() {
            d = d.min(cloud[i] - x);
        }
        if i > 0 {
            d = d.min(x - cloud[i - 1]);
        }
        d
    };
    let mut h = cloud.iter().map(|&x| to_bands(x)).fold(0.0, f64::max);
    for &(a, b) in bands {
        // the farthest band point from the cloud is an end or a midpoint between cloud points
        h = h.max(to_cloud(a)).max(to_cloud(b));
        let lo = cloud.partition_point(|&c| c < a);
        let hi = cloud.partition_point(|&c| c <= b);
        for w in cloud[lo..hi].windows(2) {
            h = h.max(0.5 * (w[1] - w[0]));
        }
    }
    h
}

/// Trace of the one-period product from test-side arithmetic, as a plain float.
pub fn trace_oracle(e: f64, values: &[f64]) -> f64 {
    let m = naive_product(e, values);
    (m.m[0][0] + m.m[1][1]) * m.log_scale.exp()
}
