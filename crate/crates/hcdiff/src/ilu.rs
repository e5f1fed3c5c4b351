//! Thresholded incomplete LU factorization (IKJ variant).
//!
//! During elimination of row i, fill entries (positions outside the original
//! sparsity pattern) are dropped when their magnitude falls below
//! `tau * ||row_i(A)||_2`; entries on the original pattern and the diagonal
//! are always kept. `tau = inf` therefore reproduces ILU(0).

use crate::sparse::Csr;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct IluFactors {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    diag_idx: Vec<usize>,
    pub drop_tolerance: f64,
    /// Number of zero pivots that were shifted during factorization.
    pub shifted_pivots: usize,
}

pub fn ilu_factorize(a: &Csr, tau: f64) -> Result<IluFactors> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension("ILU of a non-square matrix".into()));
    }
    let n = a.nrows();
    let scale = a.max_abs();
    let pivot_shift = 1e-12 * scale;
    let mut shifted = 0usize;

    // Finished rows in CSR, grown one row at a time.
    let mut row_ptr = vec![0usize];
    let mut col_idx: Vec<usize> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut diag_idx = vec![0usize; n];

    // Dense accumulator for the current row.
    let mut work = vec![0.0f64; n];
    let mut in_pattern = vec![false; n];
    let mut touched: Vec<usize> = Vec::new();

    for i in 0..n {
        let (cols, vals) = a.row(i);
        let row_norm = vals.iter().map(|v| v * v).sum::<f64>().sqrt();
        let drop_below = if tau.is_finite() { tau * row_norm } else { f64::INFINITY };
        for (c, v) in cols.iter().zip(vals) {
            work[*c] = *v;
            in_pattern[*c] = true;
            touched.push(*c);
        }
        if !in_pattern[i] {
            // missing structural diagonal; treat as explicit zero
            in_pattern[i] = true;
            touched.push(i);
        }
        touched.sort_unstable();

        // eliminate with previously finished rows k < i
        let mut t = 0;
        while t < touched.len() {
            let k = touched[t];
            if k >= i {
                break;
            }
            let pivot = values[diag_idx[k]];
            let factor = work[k] / pivot;
            work[k] = factor;
            if factor != 0.0 {
                let (ks, ke) = (diag_idx[k] + 1, row_ptr[k + 1]);
                for idx in ks..ke {
                    let j = col_idx[idx];
                    let update = factor * values[idx];
                    if in_pattern[j] {
                        work[j] -= update;
                    } else if update.abs() >= drop_below || j == i {
                        // create fill
                        work[j] = -update;
                        in_pattern[j] = true;
                        let pos = touched.partition_point(|&c| c < j);
                        touched.insert(pos, j);
                    }
                    // else: dropped fill
                }
            }
            t += 1;
        }

        // final drop pass for U-part fill that decayed below the threshold
        // (L-part values are unit-scaled factors after division and were
        // already thresholded at creation, on the row scale)
        for &j in &touched {
            if j <= i {
                continue;
            }
            let original = a.get(i, j) != 0.0;
            if !original && work[j].abs() < drop_below {
                work[j] = 0.0;
            }
        }
        // pivot guard
        if work[i].abs() < pivot_shift.max(f64::MIN_POSITIVE) {
            work[i] += pivot_shift.max(1e-300);
            shifted += 1;
        }
        for &j in &touched {
            if work[j] != 0.0 || j == i {
                if j == i {
                    diag_idx[i] = col_idx.len();
                }
                col_idx.push(j);
                values.push(work[j]);
            }
            work[j] = 0.0;
            in_pattern[j] = false;
        }
        touched.clear();
        row_ptr.push(col_idx.len());
    }

    Ok(IluFactors {
        n,
        row_ptr,
        col_idx,
        values,
        diag_idx,
        drop_tolerance: tau,
        shifted_pivots: shifted,
    })
}

impl IluFactors {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// x = U^{-1} L^{-1} r via forward and backward sweeps.
    pub fn solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.n {
            return Err(Error::Dimension("ILU solve: rhs length".into()));
        }
        let mut x = r.to_vec();
        for i in 0..self.n {
            let mut acc = x[i];
            for idx in self.row_ptr[i]..self.diag_idx[i] {
                acc -= self.values[idx] * x[self.col_idx[idx]];
            }
            x[i] = acc; // unit lower-triangular
        }
        for i in (0..self.n).rev() {
            let mut acc = x[i];
            for idx in (self.diag_idx[i] + 1)..self.row_ptr[i + 1] {
                acc -= self.values[idx] * x[self.col_idx[idx]];
            }
            x[i] = acc / self.values[self.diag_idx[i]];
        }
        Ok(x)
    }

    /// Max-norm of A - L U over the union of both patterns (dense probe,
    /// test use only).
    pub fn residual_max(&self, a: &Csr) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in 0..self.n {
                // (LU)_ij = sum_k L_ik U_kj, L unit lower
                let mut acc = self.u_entry(i, j); // L_ii = 1 contribution
                for idx in self.row_ptr[i]..self.diag_idx[i] {
                    let k = self.col_idx[idx];
                    acc += self.values[idx] * self.u_entry(k, j);
                }
                worst = worst.max((acc - a.get(i, j)).abs());
            }
        }
        worst
    }

    fn u_entry(&self, i: usize, j: usize) -> f64 {
        if j < i {
            return 0.0;
        }
        for idx in self.diag_idx[i]..self.row_ptr[i + 1] {
            if self.col_idx[idx] == j {
                return self.values[idx];
            }
        }
        0.0
    }

    #[cfg(test)]
    fn pattern_of_row(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }
}
