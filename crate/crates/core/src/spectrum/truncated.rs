use crate::error::{Error, Result};
use crate::transfer::PotentialRecipe;

/// Largest truncation size accepted by [`truncated_eigenvalues`].
pub const TRUNCATION_CAP: usize = 8192;

/// Sorted eigenvalues of `Delta + V` restricted to sites `0..size` with Dirichlet ends.
pub fn truncated_eigenvalues(recipe: &PotentialRecipe, size: usize) -> Result<Vec<f64>> {
    if size == 0 || size > TRUNCATION_CAP {
        return Err(Error::InvalidInput(format!("truncation size {size} outside 1..={TRUNCATION_CAP}")));
    }
    let mut d = recipe.values(0, size);
    let mut e = vec![1.0; size];
    e[size - 1] = 0.0;
    tridiagonal_ql(&mut d, &mut e)?;
    d.sort_by(f64::total_cmp);
    Ok(d)
}

/// Number of eigenvalues below `x` of the Dirichlet truncation, by Sturm sequence.
pub fn truncated_count(recipe: &PotentialRecipe, size: usize, x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0f64;
    for n in 0..size {
        let off = if n == 0 { 0.0 } else { 1.0 / q };
        q = recipe.eval(n as i64) - x - off;
        if q == 0.0 {
            q = -f64::EPSILON;
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Implicit QL with Wilkinson shifts on a symmetric tridiagonal matrix.
///
/// `d` holds the diagonal and is overwritten by the eigenvalues; `e[i]` couples
/// `i` and `i + 1` and is destroyed.
fn tridiagonal_ql(d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::IterationCap("tridiagonal QL did not converge".into()));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_graph() {
        let ev = truncated_eigenvalues(&PotentialRecipe::constant(0.0), 3).unwrap();
        let s = 2f64.sqrt();
        for (a, b) in ev.iter().zip([-s, 0.0, s]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_shift() {
        let a = truncated_eigenvalues(&PotentialRecipe::constant(0.0), 50).unwrap();
        let b = truncated_eigenvalues(&PotentialRecipe::constant(1.25), 50).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x + 1.25 - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_dense_solver_and_sturm() {
        let r = PotentialRecipe::periodic(&[0.3, -2.1, 1.7, 0.0, 2.9]).unwrap();
        let n = 37;
        let ev = truncated_eigenvalues(&r, n).unwrap();
        let mut h = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            h[(i, i)] = r.eval(i as i64);
            if i + 1 < n {
                h[(i, i + 1)] = 1.0;
                h[(i + 1, i)] = 1.0;
            }
        }
        let mut dense: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
        dense.sort_by(f64::total_cmp);
        for (a, b) in ev.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-12);
        }
        for (k, w) in ev.windows(2).enumerate() {
            assert_eq!(truncated_count(&r, n, 0.5 * (w[0] + w[1])), k + 1);
        }
        let (lo, hi) = r.value_bounds();
        assert!(ev[0] >= lo - 2.0 && ev[n - 1] <= hi + 2.0);
    }
}
