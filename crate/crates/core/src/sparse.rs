//! Sparse direct solves with a residual contract.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};

use crate::error::{Error, Result};

/// Scaled residual bound every returned solution satisfies.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// Square sparse matrix assembled from `(row, col, value)` entries;
/// duplicates are summed.
#[derive(Debug, Clone, Default)]
pub struct SparseBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseBuilder {
    pub fn new(n: usize) -> Self {
        Self { n, entries: Vec::new() }
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    /// Solves `A x = b` by sparse LU with one step of iterative refinement
    /// when the first residual misses [`RESIDUAL_TOL`].
    pub fn solve(mut self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        if rhs.len() != n {
            return Err(Error::Solver(format!("right-hand side has length {}, matrix is {n}x{n}", rhs.len())));
        }
        self.entries.sort_unstable_by_key(|&(r, c, _)| (c, r));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(self.entries.len());
        for (r, c, v) in self.entries {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        let triplets: Vec<Triplet<usize, usize, f64>> = merged.iter().map(|&(r, c, v)| Triplet::new(r, c, v)).collect();
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| Error::Solver(format!("matrix assembly failed: {e:?}")))?;
        let lu = a.sp_lu().map_err(|e| Error::Solver(format!("sparse LU failed: {e:?}")))?;

        let mut x = Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
        lu.solve_in_place(x.as_mut());
        let mut sol: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();

        let row_sum = {
            let mut s = vec![0.0; n];
            for &(r, _, v) in &merged {
                s[r] += v.abs();
            }
            s.into_iter().fold(0.0, f64::max)
        };
        let residual = |sol: &[f64]| -> (Vec<f64>, f64) {
            let mut r: Vec<f64> = rhs.to_vec();
            for &(i, j, v) in &merged {
                r[i] -= v * sol[j];
            }
            let xmax = sol.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let bmax = rhs.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let scale = row_sum * xmax + bmax;
            let rmax = r.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            (r, if scale > 0.0 { rmax / scale } else { rmax })
        };
        let (r, mut rel) = residual(&sol);
        if !(rel <= RESIDUAL_TOL) {
            let mut d = Mat::<f64>::from_fn(n, 1, |i, _| r[i]);
            lu.solve_in_place(d.as_mut());
            for (i, s) in sol.iter_mut().enumerate() {
                *s += d[(i, 0)];
            }
            rel = residual(&sol).1;
        }
        if !(rel <= RESIDUAL_TOL) || sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::Residual { residual: rel, tolerance: RESIDUAL_TOL });
        }
        Ok(sol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_poisson() {
        let n = 50;
        let mut b = SparseBuilder::new(n);
        for i in 0..n {
            b.add(i, i, 2.0);
            if i > 0 {
                b.add(i, i - 1, -1.0);
            }
            if i + 1 < n {
                b.add(i, i + 1, -0.5);
                b.add(i, i + 1, -0.5);
            }
        }
        let rhs = vec![1.0; n];
        let x = b.solve(&rhs).unwrap();
        // exact solution of -x'' = 1 with zero boundary values: x_i = (i+1)(n-i)/2
        for (i, xi) in x.iter().enumerate() {
            let exact = ((i + 1) * (n - i)) as f64 / 2.0;
            assert!((xi - exact).abs() < 1e-9 * exact);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let mut b = SparseBuilder::new(2);
        b.add(0, 0, 1.0);
        b.add(0, 1, 1.0);
        b.add(1, 0, 1.0);
        b.add(1, 1, 1.0);
        assert!(b.solve(&[1.0, 2.0]).is_err());
    }
}
