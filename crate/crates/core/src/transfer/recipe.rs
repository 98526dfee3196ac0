use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A run of `len` consecutive sites carrying the same potential value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseRun {
    pub value: f64,
    pub len: u64,
}

/// One refinement stage: the previous period is treated as `m0` times longer,
/// repeated `copies` times, then followed by one block per entry of `shifts`,
/// each a copy of the refined period with the shift added.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageOverlay {
    pub m0: u64,
    pub copies: u64,
    pub shifts: Vec<f64>,
}

impl StageOverlay {
    /// Largest absolute block shift: the sup-norm change this overlay introduces.
    pub fn sup_norm(&self) -> f64 {
        self.shifts.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RecipeRepr {
    base: Vec<BaseRun>,
    overlays: Vec<StageOverlay>,
}

/// A periodic potential given as a base step function plus a stack of overlays.
///
/// Evaluation costs one lookup per level, never anything proportional to the period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RecipeRepr", into = "RecipeRepr")]
pub struct PotentialRecipe {
    base: Vec<BaseRun>,
    overlays: Vec<StageOverlay>,
    base_ends: Vec<u64>,
    periods: Vec<u64>,
}

impl TryFrom<RecipeRepr> for PotentialRecipe {
    type Error = Error;

    fn try_from(r: RecipeRepr) -> Result<Self> {
        let mut recipe = PotentialRecipe::from_runs(r.base)?;
        for ov in r.overlays {
            recipe.push_overlay(ov)?;
        }
        Ok(recipe)
    }
}

impl From<PotentialRecipe> for RecipeRepr {
    fn from(r: PotentialRecipe) -> Self {
        RecipeRepr { base: r.base, overlays: r.overlays }
    }
}

/// Longest supported period; keeps scaled exponents of all transfer products inside `i64`.
pub const MAX_PERIOD: u64 = 1 << 56;

impl PotentialRecipe {
    pub fn from_runs(runs: Vec<BaseRun>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::InvalidInput("potential needs at least one run".into()));
        }
        let mut ends = Vec::with_capacity(runs.len());
        let mut total: u64 = 0;
        for run in &runs {
            if run.len == 0 || !run.value.is_finite() {
                return Err(Error::InvalidInput(format!("bad run {run:?}")));
            }
            total = total.checked_add(run.len).filter(|&t| t <= MAX_PERIOD).ok_or(Error::PeriodOverflow)?;
            ends.push(total);
        }
        Ok(Self { base: runs, overlays: Vec::new(), base_ends: ends, periods: vec![total] })
    }

    /// One period of values; equal neighbours are merged into runs.
    pub fn periodic(values: &[f64]) -> Result<Self> {
        let mut runs: Vec<BaseRun> = Vec::new();
        for &v in values {
            match runs.last_mut() {
                Some(r) if r.value.to_bits() == v.to_bits() => r.len += 1,
                _ => runs.push(BaseRun { value: v, len: 1 }),
            }
        }
        Self::from_runs(runs)
    }

    pub fn constant(c: f64) -> Self {
        Self::from_runs(vec![BaseRun { value: c, len: 1 }]).expect("finite constant")
    }

    pub fn push_overlay(&mut self, ov: StageOverlay) -> Result<()> {
        if ov.m0 == 0 || ov.copies == 0 {
            return Err(Error::InvalidInput("overlay needs m0 >= 1 and copies >= 1".into()));
        }
        if ov.shifts.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput("non-finite block shift".into()));
        }
        let prev = self.period();
        let blocks = ov.copies.checked_add(ov.shifts.len() as u64).ok_or(Error::PeriodOverflow)?;
        let period = prev
            .checked_mul(ov.m0)
            .and_then(|p| p.checked_mul(blocks))
            .filter(|&p| p <= MAX_PERIOD)
            .ok_or(Error::PeriodOverflow)?;
        self.overlays.push(ov);
        self.periods.push(period);
        Ok(())
    }

    pub fn with_overlay(mut self, ov: StageOverlay) -> Result<Self> {
        self.push_overlay(ov)?;
        Ok(self)
    }

    pub fn base(&self) -> &[BaseRun] {
        &self.base
    }

    pub fn overlays(&self) -> &[StageOverlay] {
        &self.overlays
    }

    /// Number of overlays.
    pub fn depth(&self) -> usize {
        self.overlays.len()
    }

    pub fn period(&self) -> u64 {
        *self.periods.last().expect("at least the base level")
    }

    /// Period after the first `level` overlays.
    pub fn level_period(&self, level: usize) -> u64 {
        self.periods[level]
    }

    /// The recipe formed by the base and the first `levels` overlays.
    pub fn truncated(&self, levels: usize) -> Self {
        let levels = levels.min(self.depth());
        Self {
            base: self.base.clone(),
            overlays: self.overlays[..levels].to_vec(),
            base_ends: self.base_ends.clone(),
            periods: self.periods[..=levels].to_vec(),
        }
    }

    /// Adds `c` to every value.
    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        for run in &mut out.base {
            run.value += c;
        }
        out
    }

    /// Exact minimum and maximum of the potential.
    pub fn value_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for run in &self.base {
            lo = lo.min(run.value);
            hi = hi.max(run.value);
        }
        for ov in &self.overlays {
            let (mut nlo, mut nhi) = (lo, hi);
            for &s in &ov.shifts {
                nlo = nlo.min(lo + s);
                nhi = nhi.max(hi + s);
            }
            lo = nlo;
            hi = nhi;
        }
        (lo, hi)
    }

    pub fn max_abs(&self) -> f64 {
        let (lo, hi) = self.value_bounds();
        lo.abs().max(hi.abs())
    }

    /// Sup-norm change introduced by overlay `level` (zero based).
    pub fn overlay_sup_norm(&self, level: usize) -> f64 {
        self.overlays[level].sup_norm()
    }

    /// `V(n)` for any integer `n`.
    pub fn eval(&self, n: i64) -> f64 {
        let r = (n as i128).rem_euclid(self.period() as i128) as u64;
        self.eval_level(self.depth(), r)
    }

    /// `V(n)` for `n` in `[0, level_period(level))`, using only the first `level` overlays.
    pub(crate) fn eval_level(&self, level: usize, r: u64) -> f64 {
        if level == 0 {
            let i = self.base_ends.partition_point(|&end| end <= r);
            return self.base[i].value;
        }
        let child = self.periods[level - 1];
        let ov = &self.overlays[level - 1];
        let seg = child * ov.m0;
        let idx = r / seg;
        let v = self.eval_level(level - 1, r % child);
        if idx < ov.copies {
            v
        } else {
            v + ov.shifts[(idx - ov.copies) as usize]
        }
    }

    /// Materializes `len` consecutive values starting at site `start`.
    pub fn values(&self, start: i64, len: usize) -> Vec<f64> {
        (0..len as i64).map(|i| self.eval(start + i)).collect()
    }
}
