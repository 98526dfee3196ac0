//! Open-interval families: density checks, subinterval choice, nesting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coverage ties within this distance count as covered.
pub const COVER_TOL: f64 = 1e-12;

/// Left end of the range that families must cover.
pub const COVER_LO: f64 = -4.0;
/// Right end of the range that families must cover.
pub const COVER_HI: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenInterval {
    pub lo: f64,
    pub hi: f64,
}

impl OpenInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo < hi && lo.is_finite() && hi.is_finite() {
            Ok(Self { lo, hi })
        } else {
            Err(Error::InvalidInput(format!("({lo}, {hi}) is not an open interval")))
        }
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn shifted(&self, s: f64) -> Self {
        Self { lo: self.lo + s, hi: self.hi + s }
    }

    pub fn contains(&self, e: f64) -> bool {
        self.lo < e && e < self.hi
    }

    /// `self` is a subset of `other`.
    pub fn within(&self, other: &OpenInterval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }
}

/// Parent of an interval in the previous family, with the shift index `j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParentLink {
    pub parent: usize,
    pub j: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalFamily {
    pub stage: u32,
    pub intervals: Vec<OpenInterval>,
    /// One entry per interval; `None` at stage 0.
    pub links: Vec<Option<ParentLink>>,
}

impl IntervalFamily {
    pub fn root(intervals: Vec<OpenInterval>) -> Self {
        let links = vec![None; intervals.len()];
        Self { stage: 0, intervals, links }
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn push(&mut self, interval: OpenInterval, link: Option<ParentLink>) {
        self.intervals.push(interval);
        self.links.push(link);
    }
}

/// Every `E` in `[-4, 4]` has a member of the family inside `[E - eps, E + eps]`.
///
/// For `I = (a, b)` the admissible `E` form `[b - eps, a + eps]`; the check is a
/// sweep over the union of these closed intervals.
pub fn is_eps_dense(family: &IntervalFamily, eps: f64) -> bool {
    let mut windows: Vec<(f64, f64)> =
        family.intervals.iter().map(|i| (i.hi - eps, i.lo + eps)).filter(|(a, b)| a <= &(b + COVER_TOL)).collect();
    windows.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut reach = COVER_LO;
    for (a, b) in windows {
        if a > reach + COVER_TOL {
            return false;
        }
        reach = reach.max(b);
        if reach >= COVER_HI - COVER_TOL {
            return true;
        }
    }
    false
}

/// Concentric subinterval of length `0.9 * min(|I|, maxlen)`.
pub fn pick_subinterval(i: &OpenInterval, maxlen: f64) -> OpenInterval {
    let half = 0.45 * i.len().min(maxlen);
    let c = i.center();
    let (lo, hi) = (c - half, c + half);
    if lo < hi && i.lo < lo && hi < i.hi {
        OpenInterval { lo, hi }
    } else {
        // below floating resolution: the center with one ulp on each side
        let lo = if lo > i.lo { lo } else { i.lo.next_up() };
        let hi = if hi < i.hi { hi } else { i.hi.next_down() };
        if lo < hi {
            OpenInterval { lo, hi }
        } else {
            *i
        }
    }
}

pub fn min_length(family: &IntervalFamily) -> Result<f64> {
    family.intervals.iter().map(OpenInterval::len).min_by(f64::total_cmp).ok_or(Error::EmptyFamily)
}

/// Shift `j / 2^{k+1}` applied at stage `k`.
pub fn stage_shift(j: i32, k: u32) -> f64 {
    j as f64 / f64::powi(2.0, k as i32 + 1)
}

/// The window `pick_subinterval(parent, 2^{-(k+1)}) + j / 2^{k+1}` that a stage-`k`
/// child with link `j` must lie in.
pub fn link_window(parent: &OpenInterval, j: i32, k: u32) -> OpenInterval {
    pick_subinterval(parent, stage_shift(1, k)).shifted(stage_shift(j, k))
}

/// Nesting between consecutive families.
///
/// Every parent must contain some child, and every linked child must lie in
/// its parent's shifted subinterval.
pub fn verify_nesting(child: &IntervalFamily, parent: &IntervalFamily) -> bool {
    nesting_failures(child, parent).is_empty()
}

/// Human-readable reasons [`verify_nesting`] fails; empty when it passes.
pub fn nesting_failures(child: &IntervalFamily, parent: &IntervalFamily) -> Vec<String> {
    let mut out = Vec::new();
    if child.stage != parent.stage + 1 {
        out.push(format!("stage {} does not follow stage {}", child.stage, parent.stage));
        return out;
    }
    if child.links.len() != child.intervals.len() {
        out.push("link count differs from interval count".into());
        return out;
    }
    for (i, p) in parent.intervals.iter().enumerate() {
        if !child.intervals.iter().any(|c| c.within(p)) {
            out.push(format!("parent interval {i} ({}, {}) contains no child", p.lo, p.hi));
        }
    }
    for (n, (c, link)) in child.intervals.iter().zip(&child.links).enumerate() {
        match link {
            None => out.push(format!("child {n} has no parent link")),
            Some(l) if l.parent >= parent.len() || !(-4..=3).contains(&l.j) => {
                out.push(format!("child {n} has invalid link {l:?}"))
            }
            Some(l) => {
                let w = link_window(&parent.intervals[l.parent], l.j, child.stage);
                if !c.within(&w) {
                    out.push(format!("child {n} leaves its window from parent {} j={}", l.parent, l.j));
                }
            }
        }
    }
    out
}

/// Follows zero-shift children forward from interval `index` of `families[start]`.
///
/// Each step picks the first child of the current interval with `j = 0`, which is
/// contained in it; the chain stops when no such child exists.
pub fn descendant_chain(families: &[IntervalFamily], start: usize, index: usize) -> Vec<OpenInterval> {
    let mut chain = vec![families[start].intervals[index]];
    let mut cur = index;
    for fam in &families[start + 1..] {
        let next = fam.links.iter().position(|l| matches!(l, Some(ParentLink { parent, j: 0 }) if *parent == cur));
        match next {
            Some(n) => {
                chain.push(fam.intervals[n]);
                cur = n;
            }
            None => break,
        }
    }
    chain
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fam(v: &[(f64, f64)]) -> IntervalFamily {
        IntervalFamily::root(v.iter().map(|&(a, b)| OpenInterval::new(a, b).unwrap()).collect())
    }

    #[test]
    fn density_examples() {
        assert!(is_eps_dense(&fam(&[(-0.1, 0.1)]), 4.1));
        assert!(!is_eps_dense(&fam(&[]), 10.0));
        let grid: Vec<(f64, f64)> = (-8..=8).map(|i| (i as f64 / 2.0 - 0.05, i as f64 / 2.0 + 0.05)).collect();
        assert!(is_eps_dense(&fam(&grid), 0.3));
        assert!(!is_eps_dense(&fam(&grid), 0.05));
    }

    #[test]
    fn subinterval_examples() {
        let i = OpenInterval::new(0.0, 1.0).unwrap();
        let s = pick_subinterval(&i, 0.25);
        assert!((s.lo - 0.3875).abs() < 1e-15 && (s.hi - 0.6125).abs() < 1e-15);
        let s = pick_subinterval(&OpenInterval::new(0.0, 0.1).unwrap(), 1.0);
        assert!((s.lo - 0.005).abs() < 1e-15 && (s.hi - 0.095).abs() < 1e-15);
        let tiny = OpenInterval::new(1.0, 1.0 + 4.0 * f64::EPSILON).unwrap();
        let s = pick_subinterval(&tiny, 1.0);
        assert!(s.lo < s.hi && s.within(&tiny));
    }

    #[test]
    fn min_length_examples() {
        assert_eq!(min_length(&fam(&[(0.0, 0.25), (1.0, 1.5)])).unwrap(), 0.25);
        assert!(matches!(min_length(&fam(&[])), Err(Error::EmptyFamily)));
    }

    #[test]
    fn nesting() {
        let parent = fam(&[(0.0, 1.0), (2.0, 3.0)]);
        let mut child = IntervalFamily { stage: 1, intervals: vec![], links: vec![] };
        for (i, p) in parent.intervals.iter().enumerate() {
            let w = link_window(p, 0, 1);
            child.push(pick_subinterval(&w, 1.0), Some(ParentLink { parent: i, j: 0 }));
        }
        assert!(verify_nesting(&child, &parent));
        let mut missing = child.clone();
        missing.intervals.pop();
        missing.links.pop();
        assert!(!verify_nesting(&missing, &parent));
        assert_eq!(descendant_chain(&[parent, child], 0, 1).len(), 2);
    }
}
