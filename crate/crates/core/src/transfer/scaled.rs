use std::f64::consts::LN_2;
use std::ops::Mul;

/// Multiplies `x` by `2^e` without intermediate overflow.
pub fn ldexp(x: f64, e: i64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let mut x = x;
    let mut e = e.clamp(-2400, 2400);
    while e > 1000 {
        x *= 2f64.powi(1000);
        e -= 1000;
    }
    while e < -1000 {
        x *= 2f64.powi(-1000);
        e += 1000;
    }
    x * 2f64.powi(e as i32)
}

/// `floor(log2 |x|)` for finite nonzero `x`.
pub fn floor_log2(x: f64) -> i64 {
    debug_assert!(x != 0.0 && x.is_finite());
    let bits = x.abs().to_bits();
    let biased = ((bits >> 52) & 0x7ff) as i64;
    if biased == 0 {
        floor_log2(x * 2f64.powi(64)) - 64
    } else {
        biased - 1023
    }
}

/// A real number stored as `mantissa * 2^exp2`, used where values overflow `f64`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledScalar {
    pub mantissa: f64,
    pub exp2: i64,
}

impl ScaledScalar {
    pub fn new(mantissa: f64, exp2: i64) -> Self {
        if mantissa == 0.0 {
            return Self { mantissa: 0.0, exp2: 0 };
        }
        let k = floor_log2(mantissa);
        Self { mantissa: ldexp(mantissa, -k), exp2: exp2 + k }
    }

    /// Natural log of the absolute value; `-inf` for zero.
    pub fn ln_abs(&self) -> f64 {
        if self.mantissa == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.mantissa.abs().ln() + self.exp2 as f64 * LN_2
        }
    }

    pub fn signum(&self) -> f64 {
        if self.mantissa == 0.0 {
            0.0
        } else {
            self.mantissa.signum()
        }
    }

    pub fn to_f64(&self) -> f64 {
        ldexp(self.mantissa, self.exp2)
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self::new(self.mantissa * other.mantissa, self.exp2 + other.exp2)
    }
}

/// A 2x2 real matrix `2^exp2 * entries` with the largest entry magnitude in `[1, 2)`.
///
/// Entries are ordered `[a, b, c, d]` for `[[a, b], [c, d]]`. Rescaling is by
/// powers of two only, so normalization never perturbs the represented value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledMatrix2 {
    e: [f64; 4],
    exp2: i64,
}

impl ScaledMatrix2 {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self::normalized([a, b, c, d], 0)
    }

    pub fn from_rows(rows: [[f64; 2]; 2]) -> Self {
        Self::new(rows[0][0], rows[0][1], rows[1][0], rows[1][1])
    }

    pub fn identity() -> Self {
        Self { e: [1.0, 0.0, 0.0, 1.0], exp2: 0 }
    }

    /// The one-step transfer matrix `[[x, -1], [1, 0]]` with `x = E - V(n)`.
    pub fn step(x: f64) -> Self {
        Self::new(x, -1.0, 1.0, 0.0)
    }

    fn normalized(e: [f64; 4], exp2: i64) -> Self {
        let max = e.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max == 0.0 || !max.is_finite() {
            return Self { e, exp2 };
        }
        let k = floor_log2(max);
        if k == 0 {
            return Self { e, exp2 };
        }
        Self { e: e.map(|v| ldexp(v, -k)), exp2: exp2 + k }
    }

    /// Normalized entries as rows.
    pub fn entries(&self) -> [[f64; 2]; 2] {
        [[self.e[0], self.e[1]], [self.e[2], self.e[3]]]
    }

    pub fn raw(&self) -> [f64; 4] {
        self.e
    }

    pub fn exp2(&self) -> i64 {
        self.exp2
    }

    /// `ln` of the scale factor, so the matrix equals `exp(log_scale) * entries`.
    pub fn log_scale(&self) -> f64 {
        self.exp2 as f64 * LN_2
    }

    /// The represented matrix in plain floating point, if it fits.
    pub fn to_rows(&self) -> Option<[[f64; 2]; 2]> {
        if self.exp2 > 1000 {
            return None;
        }
        let r = self.e.map(|v| ldexp(v, self.exp2));
        Some([[r[0], r[1]], [r[2], r[3]]])
    }

    /// Inverse of a determinant-one matrix.
    pub fn sl2_inverse(&self) -> Self {
        let [a, b, c, d] = self.e;
        Self { e: [d, -b, -c, a], exp2: self.exp2 }
    }

    /// `self^n`; elliptic matrices go through [`Self::elliptic_pow`], others through squaring.
    pub fn pow(&self, n: u64) -> Self {
        if n >= 2 {
            if let Some(m) = self.elliptic_pow(n) {
                return m;
            }
        }
        let mut result = Self::identity();
        let mut base = *self;
        let mut n = n;
        while n > 0 {
            if n & 1 == 1 {
                result = base * result;
            }
            n >>= 1;
            if n > 0 {
                base = base * base;
            }
        }
        result
    }

    /// `self^n = a_n self - b_n I` for a determinant-one matrix with `|tr| <= 2`, with the scalar
    /// pair advanced by doubling through `self^2 = tr self - I`.
    ///
    /// Avoids squaring non-normal matrices, which cancels large entries in thin bands.
    fn elliptic_pow(&self, n: u64) -> Option<Self> {
        if self.exp2 > ELLIPTIC_MAX_EXP2 || !self.trace_within(2.0) {
            return None;
        }
        let tr = ldexp(self.e[0] + self.e[3], self.exp2);
        let join = |(a1, b1): (f64, f64), (a2, b2): (f64, f64)| (a1 * a2 * tr - a1 * b2 - b1 * a2, a1 * a2 - b1 * b2);
        let (mut acc, mut base, mut k) = ((0.0, -1.0), (1.0, 0.0), n);
        while k > 0 {
            if k & 1 == 1 {
                acc = join(acc, base);
            }
            k >>= 1;
            if k > 0 {
                base = join(base, base);
            }
        }
        let (a, b) = acc;
        let [p, q, r, s] = self.e.map(|v| a * ldexp(v, self.exp2));
        let out = Self::new(p - b, q, r, s - b);
        out.e.iter().all(|v| v.is_finite()).then(|| out.det_projected())
    }

    /// Trace as a scaled scalar.
    pub fn trace(&self) -> ScaledScalar {
        ScaledScalar::new(self.e[0] + self.e[3], self.exp2)
    }

    /// Whether `|tr| <= bound`, decided exactly in the scaled representation.
    pub fn trace_within(&self, bound: f64) -> bool {
        let t = (self.e[0] + self.e[3]).abs();
        t <= ldexp(bound, -self.exp2)
    }

    /// Determinant of the normalized entries implied by a represented determinant of one.
    pub fn unit_det_normalized(&self) -> f64 {
        ldexp(1.0, -2 * self.exp2)
    }

    /// Relative deviation of the represented determinant from one.
    pub fn det_defect(&self) -> f64 {
        let [a, b, c, d] = self.e;
        let scale = (a * d).abs() + (b * c).abs();
        if scale == 0.0 {
            return f64::INFINITY;
        }
        ((a * d - b * c) - self.unit_det_normalized()).abs() / scale
    }

    /// Rescales onto determinant one when the determinant is computable without cancellation.
    fn det_projected(self) -> Self {
        let [a, b, c, d] = self.e;
        let target = self.unit_det_normalized();
        let det = a * d - b * c;
        let scale = (a * d).abs() + (b * c).abs();
        if det <= 0.0 || scale > DET_PROJECT_CANCEL * target {
            return self;
        }
        let f = (target / det).sqrt();
        Self { e: self.e.map(|v| v * f), exp2: self.exp2 }
    }

    /// Largest singular value of the normalized entries.
    fn normalized_norm(&self) -> f64 {
        let [a, b, c, d] = self.e;
        let f = a * a + b * b + c * c + d * d;
        let minus = (a - d) * (a - d) + (b + c) * (b + c);
        let plus = (a + d) * (a + d) + (b - c) * (b - c);
        (0.5 * (f + (minus * plus).sqrt())).sqrt()
    }

    /// Natural log of the spectral norm of the represented matrix.
    pub fn log_norm(&self) -> f64 {
        self.normalized_norm().ln() + self.log_scale()
    }

    /// Represented matrix divided by its spectral norm.
    pub fn unit_entries(&self) -> [[f64; 2]; 2] {
        let n = self.normalized_norm();
        let [a, b, c, d] = self.e.map(|v| v / n);
        [[a, b], [c, d]]
    }

    /// Applies the normalized entries to a vector.
    pub fn apply_normalized(&self, v: [f64; 2]) -> [f64; 2] {
        [self.e[0] * v[0] + self.e[1] * v[1], self.e[2] * v[0] + self.e[3] * v[1]]
    }
}

/// Largest scale exponent at which powers use the elliptic recurrence.
const ELLIPTIC_MAX_EXP2: i64 = 60;

/// Largest `(|ad| + |bc|) / det` at which products are projected back onto determinant one.
const DET_PROJECT_CANCEL: f64 = 1024.0;

impl Mul for ScaledMatrix2 {
    type Output = ScaledMatrix2;

    fn mul(self, rhs: Self) -> Self {
        let [a, b, c, d] = self.e;
        let [p, q, r, s] = rhs.e;
        Self::normalized([a * p + b * r, a * q + b * s, c * p + d * r, c * q + d * s], self.exp2 + rhs.exp2)
            .det_projected()
    }
}

impl Default for ScaledMatrix2 {
    fn default() -> Self {
        Self::identity()
    }
}
