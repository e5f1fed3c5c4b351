//! Dense kernels for the desk-scale work: LU with partial pivoting for
//! coarsest-level and reference solves, and a cyclic Jacobi eigensolver for
//! symmetric matrices (used by the spectral studies and verification tests).

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        DenseMatrix {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            *m.at_mut(i, i) = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let nrows = rows.len();
        let ncols = if nrows > 0 { rows[0].len() } else { 0 };
        let mut m = Self::zeros(nrows, ncols);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), ncols);
            m.data[i * ncols..(i + 1) * ncols].copy_from_slice(r);
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.ncols + j]
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.ncols, self.nrows);
        for i in 0..self.nrows {
            for j in 0..self.ncols {
                *t.at_mut(j, i) = self.at(i, j);
            }
        }
        t
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.ncols != other.nrows {
            return Err(Error::Dimension(format!(
                "dense matmul: {}x{} times {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut out = DenseMatrix::zeros(self.nrows, other.ncols);
        for i in 0..self.nrows {
            for k in 0..self.ncols {
                let a = self.at(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.ncols {
                    *out.at_mut(i, j) += a * other.at(k, j);
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols {
            return Err(Error::Dimension("dense matvec shape".into()));
        }
        let mut y = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            let mut acc = 0.0;
            for j in 0..self.ncols {
                acc += self.at(i, j) * x[j];
            }
            y[i] = acc;
        }
        Ok(y)
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.nrows {
            for j in (i + 1)..self.ncols {
                worst = worst.max((self.at(i, j) - self.at(j, i)).abs());
            }
        }
        worst
    }

    /// (A + A^T)/2 in place; cheap way to scrub round-off asymmetry before
    /// handing a product to the eigensolver.
    pub fn symmetrize(&mut self) {
        for i in 0..self.nrows {
            for j in (i + 1)..self.ncols {
                let v = 0.5 * (self.at(i, j) + self.at(j, i));
                *self.at_mut(i, j) = v;
                *self.at_mut(j, i) = v;
            }
        }
    }
}

/// LU factorization with partial pivoting.
#[derive(Debug, Clone)]
pub struct DenseLu {
    n: usize,
    lu: DenseMatrix,
    piv: Vec<usize>,
}

impl DenseLu {
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Dimension("LU of a non-square matrix".into()));
        }
        let n = a.nrows();
        let scale = a.max_abs();
        let mut lu = a.clone();
        let mut piv: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = lu.at(k, k).abs();
            for i in (k + 1)..n {
                let v = lu.at(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best < 1e-14 * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::Numerical(format!(
                    "singular pivot at column {k} (|pivot| = {best:.3e})"
                )));
            }
            if p != k {
                piv.swap(k, p);
                for j in 0..n {
                    let tmp = lu.at(k, j);
                    *lu.at_mut(k, j) = lu.at(p, j);
                    *lu.at_mut(p, j) = tmp;
                }
            }
            let d = lu.at(k, k);
            for i in (k + 1)..n {
                let f = lu.at(i, k) / d;
                *lu.at_mut(i, k) = f;
                if f != 0.0 {
                    for j in (k + 1)..n {
                        *lu.at_mut(i, j) -= f * lu.at(k, j);
                    }
                }
            }
        }
        Ok(DenseLu { n, lu, piv })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::Dimension("LU solve: rhs length".into()));
        }
        let mut x: Vec<f64> = self.piv.iter().map(|&p| b[p]).collect();
        for i in 1..self.n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu.at(i, j) * x[j];
            }
            x[i] = acc;
        }
        for i in (0..self.n).rev() {
            let mut acc = x[i];
            for j in (i + 1)..self.n {
                acc -= self.lu.at(i, j) * x[j];
            }
            x[i] = acc / self.lu.at(i, i);
        }
        Ok(x)
    }

    pub fn dim(&self) -> usize {
        self.n
    }
}

/// One-shot dense solve.
pub fn dense_lu_solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    DenseLu::factor(a)?.solve(b)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Returns eigenvalues in ascending order and the orthogonal eigenvector
/// matrix (columns). Sweeps run until the off-diagonal Frobenius norm drops
/// below 1e-13 times the initial Frobenius norm.
pub fn jacobi_eigendecomposition(a: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension("eigendecomposition of non-square matrix".into()));
    }
    if a.max_asymmetry() > 1e-12 * a.max_abs().max(1.0) {
        return Err(Error::Numerical(format!(
            "matrix is not symmetric (max asymmetry {:.3e})",
            a.max_asymmetry()
        )));
    }
    let n = a.nrows();
    let mut m = a.clone();
    m.symmetrize();
    let mut z = DenseMatrix::identity(n);
    let frob: f64 = m.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    let target = 1e-13 * frob;
    let off = |m: &DenseMatrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += 2.0 * m.at(i, j) * m.at(i, j);
            }
        }
        s.sqrt()
    };
    let max_sweeps = 60;
    for _ in 0..max_sweeps {
        if off(&m) <= target {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.at(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = m.at(p, p);
                let aqq = m.at(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.at(k, p);
                    let mkq = m.at(k, q);
                    *m.at_mut(k, p) = c * mkp - s * mkq;
                    *m.at_mut(k, q) = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m.at(p, k);
                    let mqk = m.at(q, k);
                    *m.at_mut(p, k) = c * mpk - s * mqk;
                    *m.at_mut(q, k) = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let zkp = z.at(k, p);
                    let zkq = z.at(k, q);
                    *z.at_mut(k, p) = c * zkp - s * zkq;
                    *z.at_mut(k, q) = s * zkp + c * zkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.at(i, i).partial_cmp(&m.at(j, j)).unwrap());
    let eigs: Vec<f64> = order.iter().map(|&i| m.at(i, i)).collect();
    let mut vecs = DenseMatrix::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            *vecs.at_mut(k, new) = z.at(k, old);
        }
    }
    Ok((eigs, vecs))
}

/// Symmetric eigenvalues only.
pub fn symmetric_eigenvalues(a: &DenseMatrix) -> Result<Vec<f64>> {
    Ok(jacobi_eigendecomposition(a)?.0)
}

/// Spectral norm of a (possibly rectangular) dense matrix via the
/// eigenvalues of M M^T.
pub fn spectral_norm(m: &DenseMatrix) -> Result<f64> {
    let mmt = m.matmul(&m.transpose())?;
    let eigs = symmetric_eigenvalues(&mmt)?;
    Ok(eigs.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}
