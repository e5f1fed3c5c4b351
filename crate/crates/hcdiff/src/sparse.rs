//! Compressed sparse row storage and the handful of products the solvers
//! need: matvec, transpose, sparse matmul, and the Galerkin triple product.
//!
//! Column indices are sorted within each row and no explicit zeros are
//! stored. Summation orders are fixed (ascending column index), so repeated
//! products are bitwise reproducible.

use crate::dense::DenseMatrix;
use crate::{Error, Result};
use std::io::{BufRead, Write};

#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Builds a matrix from (row, col, value) triplets. Duplicates are
    /// summed; exact zeros are dropped.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        for &(r, c, _) in triplets {
            if r >= nrows || c >= ncols {
                return Err(Error::Dimension(format!(
                    "triplet ({r},{c}) outside {nrows}x{ncols}"
                )));
            }
        }
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(r, c, v) in triplets {
            per_row[r].push((c, v));
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in per_row.iter_mut() {
            row.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut v = 0.0;
                while k < row.len() && row[k].0 == c {
                    v += row[k].1;
                    k += 1;
                }
                if v != 0.0 {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Csr {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Csr {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols))
            .map(|i| self.get(i, i))
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// y = K x with a deterministic (ascending column) summation order.
    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols {
            return Err(Error::Dimension(format!(
                "spmv: operand length {} vs {} columns",
                x.len(),
                self.ncols
            )));
        }
        let mut y = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            y[i] = acc;
        }
        Ok(y)
    }

    pub fn transpose(&self) -> Csr {
        let mut counts = vec![0usize; self.ncols];
        for &c in &self.col_idx {
            counts[c] += 1;
        }
        let mut row_ptr = vec![0usize; self.ncols + 1];
        for i in 0..self.ncols {
            row_ptr[i + 1] = row_ptr[i] + counts[i];
        }
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        let mut next = row_ptr.clone();
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                let slot = next[*c];
                col_idx[slot] = i;
                values[slot] = *v;
                next[*c] += 1;
            }
        }
        Csr {
            nrows: self.ncols,
            ncols: self.nrows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Sparse matrix product.
    pub fn matmul(&self, other: &Csr) -> Result<Csr> {
        if self.ncols != other.nrows {
            return Err(Error::Dimension(format!(
                "matmul: {}x{} times {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut acc = vec![0.0; other.ncols];
        let mut touched: Vec<usize> = Vec::new();
        let mut row_ptr = Vec::with_capacity(self.nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (k, v) in cols.iter().zip(vals) {
                let (bcols, bvals) = other.row(*k);
                for (c, w) in bcols.iter().zip(bvals) {
                    if acc[*c] == 0.0 && !touched.contains(c) {
                        touched.push(*c);
                    }
                    acc[*c] += v * w;
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                if acc[c] != 0.0 {
                    col_idx.push(c);
                    values.push(acc[c]);
                }
                acc[c] = 0.0;
            }
            touched.clear();
            row_ptr.push(col_idx.len());
        }
        Ok(Csr {
            nrows: self.nrows,
            ncols: other.ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Extracts the submatrix with the given row and column index lists,
    /// in the given order.
    pub fn extract(&self, rows: &[usize], cols: &[usize]) -> Result<Csr> {
        const UNSET: usize = usize::MAX;
        let mut col_map = vec![UNSET; self.ncols];
        for (new, &old) in cols.iter().enumerate() {
            if old >= self.ncols {
                return Err(Error::Dimension(format!("extract: column {old} out of range")));
            }
            col_map[old] = new;
        }
        let mut triplets = Vec::new();
        for (new_r, &old_r) in rows.iter().enumerate() {
            if old_r >= self.nrows {
                return Err(Error::Dimension(format!("extract: row {old_r} out of range")));
            }
            let (cs, vs) = self.row(old_r);
            for (c, v) in cs.iter().zip(vs) {
                if col_map[*c] != UNSET {
                    triplets.push((new_r, col_map[*c], *v));
                }
            }
        }
        Csr::from_triplets(rows.len(), cols.len(), &triplets)
    }

    /// Scales every stored value by `s`.
    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                *d.at_mut(i, *c) = *v;
            }
        }
        d
    }

    /// Writes the matrix in Matrix Market coordinate format with 17
    /// significant digits, so values round-trip exactly through decimal.
    pub fn write_matrix_market<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                writeln!(w, "{} {} {:.16e}", i + 1, c + 1, v)?;
            }
        }
        Ok(())
    }

    pub fn read_matrix_market<R: BufRead>(r: &mut R) -> Result<Csr> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("empty matrix market stream".into()))??;
        if !header.starts_with("%%MatrixMarket") {
            return Err(Error::Config("missing MatrixMarket header".into()));
        }
        let mut dims: Option<(usize, usize, usize)> = None;
        let mut triplets = Vec::new();
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('%') {
                continue;
            }
            let mut it = line.split_whitespace();
            if dims.is_none() {
                let n: usize = parse_field(it.next())?;
                let m: usize = parse_field(it.next())?;
                let nnz: usize = parse_field(it.next())?;
                dims = Some((n, m, nnz));
            } else {
                let i: usize = parse_field(it.next())?;
                let j: usize = parse_field(it.next())?;
                let v: f64 = parse_field(it.next())?;
                triplets.push((i - 1, j - 1, v));
            }
        }
        let (n, m, _) = dims.ok_or_else(|| Error::Config("missing size line".into()))?;
        Csr::from_triplets(n, m, &triplets)
    }
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Config("malformed matrix market line".into()))
}

/// Galerkin coarse operator R K P, symmetrized by averaging with its
/// transpose. Requires R = P^T (checked structurally via dimensions).
pub fn galerkin_triple_product(r: &Csr, k: &Csr, p: &Csr) -> Result<Csr> {
    if r.ncols() != k.nrows() || k.ncols() != p.nrows() || r.nrows() != p.ncols() {
        return Err(Error::Dimension(format!(
            "triple product: {}x{} * {}x{} * {}x{}",
            r.nrows(),
            r.ncols(),
            k.nrows(),
            k.ncols(),
            p.nrows(),
            p.ncols()
        )));
    }
    let kp = k.matmul(p)?;
    let rkp = r.matmul(&kp)?;
    // Round-off symmetrization: (T + T^T)/2 over the union pattern.
    let t = rkp.transpose();
    let mut triplets = Vec::with_capacity(2 * rkp.nnz());
    for i in 0..rkp.nrows() {
        let (cols, vals) = rkp.row(i);
        for (c, v) in cols.iter().zip(vals) {
            triplets.push((i, *c, 0.5 * v));
        }
        let (cols, vals) = t.row(i);
        for (c, v) in cols.iter().zip(vals) {
            triplets.push((i, *c, 0.5 * v));
        }
    }
    Csr::from_triplets(rkp.nrows(), rkp.ncols(), &triplets)
}
