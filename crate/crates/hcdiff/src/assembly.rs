//! Cell-centered finite volume assembly.
//!
//! Interior faces carry the harmonic mean of the two adjacent cell
//! diffusivities; boundary faces impose homogeneous Dirichlet data through a
//! half-cell ghost, i.e. a face transmissibility of `2 * alpha_cell`. With
//! square cells the geometric face factors cancel, so the matrix entries are
//! the transmissibilities themselves and the right-hand side carries the
//! cell measure.

use crate::geometry::{CoefficientField, DofPartition, Grid, IslandSpec};
use crate::sparse::Csr;
use crate::{Error, Result};

/// Harmonic mean 2ab/(a+b) of two diffusivities.
pub fn harmonic_mean(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::Numerical(format!(
            "harmonic mean needs positive arguments, got ({a}, {b})"
        )));
    }
    Ok(2.0 * a * b / (a + b))
}

/// Harmonic mean of `m` and 1, the only face value the binary coefficient
/// field produces across the island interface.
pub fn hbar(m: f64) -> f64 {
    2.0 * m / (m + 1.0)
}

/// m -> infinity limit of the face transmissibility: equal coefficients pass
/// through, mixed faces converge to twice the smaller one (2 in the binary
/// regime).
fn face_limit(a: f64, b: f64) -> f64 {
    if a == b {
        a
    } else {
        2.0 * a.min(b)
    }
}

/// Explicit per-cell coefficients for strip grids (1D reference problems).
pub fn strip_coefficients(values: &[f64]) -> CoefficientField {
    let high_mask = values.iter().map(|&v| v > 1.0).collect();
    CoefficientField {
        values: values.to_vec(),
        high_mask,
    }
}

fn assemble_with<F>(grid: &Grid, coeff: &CoefficientField, face: F) -> Result<Csr>
where
    F: Fn(f64, f64) -> f64,
{
    let n = grid.cells();
    if coeff.values.len() != n {
        return Err(Error::Dimension(format!(
            "coefficient field has {} values for {} cells",
            coeff.values.len(),
            n
        )));
    }
    let al = &coeff.values;
    let mut triplets = Vec::with_capacity(5 * n);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let p = grid.idx(i, j);
            let mut diag = 0.0;
            // x faces
            if i > 0 {
                let q = grid.idx(i - 1, j);
                let t = face(al[p], al[q]);
                diag += t;
                triplets.push((p, q, -t));
            } else {
                diag += 2.0 * al[p];
            }
            if i + 1 < grid.nx {
                let q = grid.idx(i + 1, j);
                let t = face(al[p], al[q]);
                diag += t;
                triplets.push((p, q, -t));
            } else {
                diag += 2.0 * al[p];
            }
            // y faces only exist on genuinely 2D grids
            if !grid.is_one_dimensional() {
                if j > 0 {
                    let q = grid.idx(i, j - 1);
                    let t = face(al[p], al[q]);
                    diag += t;
                    triplets.push((p, q, -t));
                } else {
                    diag += 2.0 * al[p];
                }
                if j + 1 < grid.ny {
                    let q = grid.idx(i, j + 1);
                    let t = face(al[p], al[q]);
                    diag += t;
                    triplets.push((p, q, -t));
                } else {
                    diag += 2.0 * al[p];
                }
            }
            triplets.push((p, p, diag));
        }
    }
    Csr::from_triplets(n, n, &triplets)
}

/// Assembles the 5-point operator K(m) with harmonic-mean faces.
pub fn assemble_operator(grid: &Grid, coeff: &CoefficientField) -> Result<Csr> {
    assemble_with(grid, coeff, |a, b| 2.0 * a * b / (a + b))
}

/// Assembles the limiting operator whose mixed faces carry the m -> infinity
/// transmissibility. Only its L-block and HL-block are meaningful.
pub fn assemble_operator_limit(grid: &Grid, coeff: &CoefficientField) -> Result<Csr> {
    assemble_with(grid, coeff, face_limit)
}

/// b_p = |cell| * f(center_p), the midpoint rule for the cell mean.
pub fn assemble_rhs<F>(grid: &Grid, f: F) -> Vec<f64>
where
    F: Fn(f64, f64) -> f64,
{
    let measure = if grid.is_one_dimensional() {
        grid.kx()
    } else {
        grid.kx() * grid.ky()
    };
    (0..grid.cells())
        .map(|p| {
            let (x, y) = grid.center(p);
            measure * f(x, y)
        })
        .collect()
}

/// Operator, right-hand side and partition for one (grid, islands, source)
/// configuration.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub grid: Grid,
    pub islands: IslandSpec,
    pub k: Csr,
    pub b: Vec<f64>,
    pub partition: DofPartition,
    pub contrast: f64,
}

impl AssembledSystem {
    pub fn build<F>(grid: Grid, islands: IslandSpec, f: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> f64,
    {
        let field = crate::geometry::build_coefficient_field(&grid, &islands)?;
        let k = assemble_operator(&grid, &field)?;
        let b = assemble_rhs(&grid, f);
        let partition = DofPartition::from_field(&grid, &field)?;
        let contrast = islands.contrast;
        Ok(AssembledSystem {
            grid,
            islands,
            k,
            b,
            partition,
            contrast,
        })
    }
}

/// The four subblocks of K under the L-then-H permutation.
#[derive(Debug, Clone)]
pub struct BlockView {
    pub k_hh: Csr,
    pub k_hl: Csr,
    pub k_lh: Csr,
    pub k_ll: Csr,
    /// Global cell index of each permuted position (L block first).
    pub perm: Vec<usize>,
}

/// Extracts the 2x2 block view of `k` under the partition. Fails on an
/// empty H set (the block form is only used by the island preconditioner).
pub fn split_blocks(k: &Csr, partition: &DofPartition) -> Result<BlockView> {
    if partition.n_h() == 0 {
        return Err(Error::Config(
            "block splitting requires a nonempty highly-diffusive set".into(),
        ));
    }
    if partition.n_h() + partition.n_l() != k.nrows() {
        return Err(Error::Dimension(
            "partition does not cover the operator".into(),
        ));
    }
    let h = &partition.h_indices;
    let l = &partition.l_indices;
    let mut perm = Vec::with_capacity(k.nrows());
    perm.extend_from_slice(l);
    perm.extend_from_slice(h);
    Ok(BlockView {
        k_hh: k.extract(h, h)?,
        k_hl: k.extract(h, l)?,
        k_lh: k.extract(l, h)?,
        k_ll: k.extract(l, l)?,
        perm,
    })
}

/// Splits K_HH into the pure-Neumann island operator and its diagonal
/// perturbation: K_HH = m * N_HH + Delta(m), where Delta carries
/// `hbar(m) * (#L-neighbors)` per cell. The reconstruction is checked to
/// machine precision.
pub fn neumann_decomposition(
    k_hh: &Csr,
    partition: &DofPartition,
    m: f64,
) -> Result<(Csr, Vec<f64>)> {
    let n_h = partition.n_h();
    if k_hh.nrows() != n_h || k_hh.ncols() != n_h {
        return Err(Error::Dimension("K_HH does not match the partition".into()));
    }
    let hb = hbar(m);
    let delta: Vec<f64> = partition
        .l_neighbor_counts
        .iter()
        .map(|&c| hb * c as f64)
        .collect();
    let mut triplets = Vec::with_capacity(k_hh.nnz());
    for i in 0..n_h {
        let (cols, vals) = k_hh.row(i);
        for (c, v) in cols.iter().zip(vals) {
            let shifted = if *c == i { v - delta[i] } else { *v };
            triplets.push((i, *c, shifted / m));
        }
    }
    let n_hh = Csr::from_triplets(n_h, n_h, &triplets)?;
    // Internal consistency: m*N + Delta must reproduce K_HH.
    let mut worst = 0.0f64;
    for i in 0..n_h {
        let (cols, vals) = n_hh.row(i);
        for (c, v) in cols.iter().zip(vals) {
            let back = m * v + if *c == i { delta[i] } else { 0.0 };
            worst = worst.max((back - k_hh.get(i, *c)).abs());
        }
    }
    if worst > 1e-12 * k_hh.max_abs() {
        return Err(Error::Numerical(format!(
            "Neumann decomposition residual {worst:.3e}"
        )));
    }
    Ok((n_hh, delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::symmetric_eigenvalues;
    use crate::geometry::build_coefficient_field;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn reference_strip(m: f64) -> (Grid, CoefficientField) {
        let grid = Grid::strip(7).unwrap();
        let field = strip_coefficients(&[1.0, 1.0, m, m, m, 1.0, 1.0]);
        (grid, field)
    }

    /// DOF order used by the displayed 1D reference blocks: the island cells
    /// sorted center-out, then the outer cells.
    pub(crate) const STRIP_H_ORDER: [usize; 3] = [3, 2, 4];
    pub(crate) const STRIP_L_ORDER: [usize; 4] = [1, 5, 0, 6];

    #[test]
    fn harmonic_mean_examples() {
        assert_eq!(harmonic_mean(1.0, 1.0).unwrap(), 1.0);
        let v = harmonic_mean(100.0, 1.0).unwrap();
        assert!((v - 200.0 / 101.0).abs() < 1e-15);
        assert!((harmonic_mean(1e12, 1.0).unwrap() - 2.0).abs() < 4e-12);
        assert!(harmonic_mean(0.0, 1.0).is_err());
        assert!(harmonic_mean(1.0, -2.0).is_err());
    }

    #[test]
    fn strip_blocks_match_reference() {
        let m = 10.0;
        let hb = hbar(m);
        let (grid, field) = reference_strip(m);
        let k = assemble_operator(&grid, &field).unwrap();
        let k_hh = k.extract(&STRIP_H_ORDER, &STRIP_H_ORDER).unwrap().to_dense();
        let want_hh = [
            [2.0 * m, -m, -m],
            [-m, m + hb, 0.0],
            [-m, 0.0, m + hb],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!((k_hh.at(i, j) - want_hh[i][j]).abs() < 1e-13, "K_HH {i},{j}");
            }
        }
        let k_hl = k.extract(&STRIP_H_ORDER, &STRIP_L_ORDER).unwrap().to_dense();
        let want_hl = [
            [0.0, 0.0, 0.0, 0.0],
            [-hb, 0.0, 0.0, 0.0],
            [0.0, -hb, 0.0, 0.0],
        ];
        for i in 0..3 {
            for j in 0..4 {
                assert!((k_hl.at(i, j) - want_hl[i][j]).abs() < 1e-14, "K_HL {i},{j}");
            }
        }
        let k_ll = k.extract(&STRIP_L_ORDER, &STRIP_L_ORDER).unwrap().to_dense();
        let want_ll = [
            [1.0 + hb, 0.0, -1.0, 0.0],
            [0.0, 1.0 + hb, 0.0, -1.0],
            [-1.0, 0.0, 3.0, 0.0],
            [0.0, -1.0, 0.0, 3.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert!((k_ll.at(i, j) - want_ll[i][j]).abs() < 1e-14, "K_LL {i},{j}");
            }
        }
    }

    #[test]
    fn interior_and_boundary_stencils() {
        let grid = Grid::square(8).unwrap();
        let field = build_coefficient_field(&grid, &IslandSpec::empty()).unwrap();
        let k = assemble_operator(&grid, &field).unwrap();
        // strictly interior cell: diagonal 4, four -1 neighbors
        let p = grid.idx(4, 5);
        assert_eq!(k.get(p, p), 4.0);
        let (cols, vals) = k.row(p);
        assert_eq!(cols.len(), 5);
        assert!(vals.iter().filter(|&&v| v == -1.0).count() == 4);
        // corner boundary cell: diagonal 6, two -1 neighbors
        let c = grid.idx(0, 0);
        assert_eq!(k.get(c, c), 6.0);
        assert_eq!(k.row(c).0.len(), 3);
        // non-corner boundary cell: diagonal 5
        let b = grid.idx(3, 0);
        assert_eq!(k.get(b, b), 5.0);
    }

    #[test]
    fn rhs_examples() {
        let grid = Grid::square(8).unwrap();
        let b = assemble_rhs(&grid, |_, _| 1.0);
        assert!(b.iter().all(|&v| (v - 1.0 / 64.0).abs() < 1e-17));
        let z = assemble_rhs(&grid, |_, _| 0.0);
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn operator_is_exactly_symmetric() {
        let grid = Grid::square(16).unwrap();
        let field =
            build_coefficient_field(&grid, &IslandSpec::benchmark_default(1e6)).unwrap();
        let k = assemble_operator(&grid, &field).unwrap();
        let kt = k.transpose();
        assert_eq!(k, kt);
    }

    #[test]
    fn row_sums_vanish_away_from_boundary() {
        let grid = Grid::square(8).unwrap();
        let field = build_coefficient_field(&grid, &IslandSpec::benchmark_default(1e3)).unwrap();
        let k = assemble_operator(&grid, &field).unwrap();
        let ones = vec![1.0; 64];
        let r = k.spmv(&ones).unwrap();
        for p in 0..64 {
            let (i, j) = grid.coords(p);
            let on_boundary = i == 0 || j == 0 || i == 7 || j == 7;
            if on_boundary {
                // 2 * alpha per boundary face, alpha = 1 on the boundary ring
                let faces = [i == 0, i == 7, j == 0, j == 7].iter().filter(|&&b| b).count();
                assert!((r[p] - 2.0 * faces as f64).abs() < 1e-12, "cell {p}");
            } else {
                assert!(r[p].abs() < 1e-12, "cell {p}: row sum {}", r[p]);
            }
        }
    }

    #[test]
    fn diagonal_monotone_and_quadratic_sandwich() {
        let grid = Grid::square(8).unwrap();
        let islands1 = IslandSpec::benchmark_default(1.0 + 1e-9);
        let k1 = assemble_operator(&grid, &build_coefficient_field(&grid, &islands1).unwrap())
            .unwrap();
        let mut prev = k1.diagonal();
        for m in [10.0, 1e3, 1e6] {
            let km = assemble_operator(
                &grid,
                &build_coefficient_field(&grid, &IslandSpec::benchmark_default(m)).unwrap(),
            )
            .unwrap();
            let d = km.diagonal();
            assert!(d.iter().zip(&prev).all(|(a, b)| a >= b));
            prev = d;
        }
        // x'K(m)x >= x'K(1)x >= (1/m) x'K(m)x on random vectors
        let m = 1e4;
        let km = assemble_operator(
            &grid,
            &build_coefficient_field(&grid, &IslandSpec::benchmark_default(m)).unwrap(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let qm: f64 = km.spmv(&x).unwrap().iter().zip(&x).map(|(a, b)| a * b).sum();
            let q1: f64 = k1.spmv(&x).unwrap().iter().zip(&x).map(|(a, b)| a * b).sum();
            assert!(qm >= q1 - 1e-10 * qm.abs());
            assert!(q1 >= qm / m - 1e-10 * qm.abs());
        }
    }

    #[test]
    fn neumann_decomposition_reference() {
        let m = 10.0;
        let hb = hbar(m);
        let (grid, field) = reference_strip(m);
        let k = assemble_operator(&grid, &field).unwrap();
        let k_hh = k.extract(&STRIP_H_ORDER, &STRIP_H_ORDER).unwrap();
        let part = DofPartition::from_parts(STRIP_H_ORDER.to_vec(), STRIP_L_ORDER.to_vec(), vec![0, 1, 1])
            .unwrap();
        let (n_hh, delta) = neumann_decomposition(&k_hh, &part, m).unwrap();
        let want_n = [[2.0, -1.0, -1.0], [-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((n_hh.get(i, j) - want_n[i][j]).abs() < 1e-14);
            }
        }
        assert!(delta[0] == 0.0 && (delta[1] - hb).abs() < 1e-15 && (delta[2] - hb).abs() < 1e-15);
        // limit of Delta as m grows
        let (_, d_inf) = {
            let (grid, field) = reference_strip(1e12);
            let k = assemble_operator(&grid, &field).unwrap();
            let k_hh = k.extract(&STRIP_H_ORDER, &STRIP_H_ORDER).unwrap();
            neumann_decomposition(&k_hh, &part, 1e12).unwrap()
        };
        assert!((d_inf[1] - 2.0).abs() < 1e-11 && (d_inf[2] - 2.0).abs() < 1e-11);
    }

    #[test]
    fn neumann_block_has_simple_zero_eigenvalue() {
        let grid = Grid::square(8).unwrap();
        let m = 1e5;
        let field = build_coefficient_field(&grid, &IslandSpec::benchmark_default(m)).unwrap();
        let k = assemble_operator(&grid, &field).unwrap();
        let part = DofPartition::from_field(&grid, &field).unwrap();
        let blocks = split_blocks(&k, &part).unwrap();
        let (n_hh, delta) = neumann_decomposition(&blocks.k_hh, &part, m).unwrap();
        // all island cells are corner-type for the 2x2 island
        assert!(delta.iter().all(|&d| (d - 2.0 * hbar(m)).abs() < 1e-12));
        let ones = vec![1.0; part.n_h()];
        assert!(n_hh.spmv(&ones).unwrap().iter().all(|&v| v.abs() < 1e-12));
        let eigs = symmetric_eigenvalues(&n_hh.to_dense()).unwrap();
        assert!(eigs[0].abs() < 1e-12 && eigs[1] > 0.1);
    }

    #[test]
    fn block_reassembly_is_exact() {
        let grid = Grid::square(8).unwrap();
        let field = build_coefficient_field(&grid, &IslandSpec::benchmark_default(1e3)).unwrap();
        let k = assemble_operator(&grid, &field).unwrap();
        let part = DofPartition::from_field(&grid, &field).unwrap();
        let blocks = split_blocks(&k, &part).unwrap();
        // K_LH is the transpose of K_HL
        assert_eq!(blocks.k_lh, blocks.k_hl.transpose());
        // reassemble via the permutation and compare entrywise
        let n = k.nrows();
        let n_l = part.n_l();
        let mut back = vec![vec![0.0; n]; n];
        for bi in 0..n {
            for bj in 0..n {
                let v = match (bi < n_l, bj < n_l) {
                    (true, true) => blocks.k_ll.get(bi, bj),
                    (true, false) => blocks.k_lh.get(bi, bj - n_l),
                    (false, true) => blocks.k_hl.get(bi - n_l, bj),
                    (false, false) => blocks.k_hh.get(bi - n_l, bj - n_l),
                };
                back[blocks.perm[bi]][blocks.perm[bj]] = v;
            }
        }
        for i in 0..n {
            for j in 0..n {
                assert_eq!(back[i][j], k.get(i, j), "entry ({i},{j})");
            }
        }
        // empty H set is rejected
        let empty_field = build_coefficient_field(&grid, &IslandSpec::empty()).unwrap();
        let empty = DofPartition::from_field(&grid, &empty_field).unwrap();
        assert!(split_blocks(&k, &empty).is_err());
    }

    #[test]
    fn manufactured_solution_second_order() {
        // alpha = 1, f = sin(pi x) sin(pi y): u = f / (2 pi^2).
        let pi = std::f64::consts::PI;
        let mut errs = Vec::new();
        for nx in [32usize, 64] {
            let grid = Grid::square(nx).unwrap();
            let field = build_coefficient_field(&grid, &IslandSpec::empty()).unwrap();
            let k = assemble_operator(&grid, &field).unwrap();
            let b = assemble_rhs(&grid, |x, y| (pi * x).sin() * (pi * y).sin());
            let mg = crate::mg::MgHierarchy::build_global(
                &k,
                &grid,
                crate::mg::ProlongationKind::Bilinear,
                crate::mg::SmootherKind::Sgs,
                8,
            )
            .unwrap();
            let (x, rep) = crate::krylov::pcg(&k, &b, &mg, None, 1e-11, 100).unwrap();
            assert_eq!(rep.converged, crate::krylov::Convergence::Converged);
            let mut max_err = 0.0f64;
            for p in 0..grid.cells() {
                let (cx, cy) = grid.center(p);
                let exact = (pi * cx).sin() * (pi * cy).sin() / (2.0 * pi * pi);
                max_err = max_err.max((x[p] - exact).abs());
            }
            errs.push(max_err);
        }
        let ratio = errs[0] / errs[1];
        assert!(
            (3.4..=4.6).contains(&ratio),
            "error ratio {ratio} outside second-order band ({errs:?})"
        );
    }
}
