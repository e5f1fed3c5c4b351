//! Mesh, island geometry, and the highly/lowly-diffusive index partitions.
//!
//! Cells are ordered lexicographically with the x index fastest:
//! `idx = j * nx + i`. Island rectangles are given in cells of the 8x8
//! coarsest mesh and refined geometrically, so every multigrid level
//! resolves the island boundary by construction.

use crate::sparse::Csr;
use crate::{Error, Result};

/// Uniform cell-centered mesh on the unit square (or a 1D strip used by the
/// golden-reference tests).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
}

impl Grid {
    /// Square mesh with `nx` a power of two, at least 8 (the coarsest
    /// multigrid level is 8x8).
    pub fn square(nx: usize) -> Result<Self> {
        if nx < 8 || !nx.is_power_of_two() {
            return Err(Error::Geometry(format!(
                "grid size {nx} must be a power of two >= 8"
            )));
        }
        Ok(Grid { nx, ny: nx })
    }

    /// 1D strip of `n` cells on (0,1); used to reproduce the one-dimensional
    /// reference matrices in tests.
    pub fn strip(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Geometry("strip needs at least 2 cells".into()));
        }
        Ok(Grid { nx: n, ny: 1 })
    }

    pub fn is_one_dimensional(&self) -> bool {
        self.ny == 1
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn kx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn ky(&self) -> f64 {
        1.0 / self.ny as f64
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn coords(&self, p: usize) -> (usize, usize) {
        (p % self.nx, p / self.nx)
    }

    /// Cell-center coordinates.
    pub fn center(&self, p: usize) -> (f64, f64) {
        let (i, j) = self.coords(p);
        ((i as f64 + 0.5) * self.kx(), (j as f64 + 0.5) * self.ky())
    }

    /// Face neighbors of cell `p` (4 in 2D, 2 on a strip, fewer at the
    /// domain boundary).
    pub fn neighbors(&self, p: usize) -> Vec<usize> {
        let (i, j) = self.coords(p);
        let mut out = Vec::with_capacity(4);
        if i > 0 {
            out.push(self.idx(i - 1, j));
        }
        if i + 1 < self.nx {
            out.push(self.idx(i + 1, j));
        }
        if !self.is_one_dimensional() {
            if j > 0 {
                out.push(self.idx(i, j - 1));
            }
            if j + 1 < self.ny {
                out.push(self.idx(i, j + 1));
            }
        }
        out
    }
}

/// Axis-aligned rectangle in coarsest-level (8x8) cell coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoarseRect {
    pub i0: usize,
    pub j0: usize,
    pub w: usize,
    pub h: usize,
}

/// Highly-diffusive islands: rectangles on the coarsest mesh plus the
/// contrast value carried by every island cell.
#[derive(Debug, Clone, PartialEq)]
pub struct IslandSpec {
    pub rects: Vec<CoarseRect>,
    pub contrast: f64,
}

const COARSEST: usize = 8;

impl IslandSpec {
    pub fn new(rects: Vec<CoarseRect>, contrast: f64) -> Result<Self> {
        let spec = IslandSpec { rects, contrast };
        spec.validate()?;
        Ok(spec)
    }

    /// Single island used throughout the benchmarks: 2x2 coarse cells whose
    /// center sits at (3/8, 3/8).
    pub fn benchmark_default(contrast: f64) -> Self {
        IslandSpec {
            rects: vec![CoarseRect {
                i0: 2,
                j0: 2,
                w: 2,
                h: 2,
            }],
            contrast,
        }
    }

    pub fn empty() -> Self {
        IslandSpec {
            rects: Vec::new(),
            contrast: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.contrast >= 1.0) {
            return Err(Error::Geometry(format!(
                "contrast {} must be >= 1",
                self.contrast
            )));
        }
        for r in &self.rects {
            if r.w == 0 || r.h == 0 {
                return Err(Error::Geometry("island rectangle with zero extent".into()));
            }
            if r.i0 == 0 || r.j0 == 0 || r.i0 + r.w >= COARSEST || r.j0 + r.h >= COARSEST {
                return Err(Error::Geometry(format!(
                    "island ({},{},{},{}) must stay inside the coarsest mesh without touching the boundary",
                    r.i0, r.j0, r.w, r.h
                )));
            }
        }
        // Pairwise: at least one lowly-diffusive coarse cell between islands.
        for (a, ra) in self.rects.iter().enumerate() {
            for rb in self.rects.iter().skip(a + 1) {
                let sep_x = ra.i0 + ra.w < rb.i0 || rb.i0 + rb.w < ra.i0;
                let sep_y = ra.j0 + ra.h < rb.j0 || rb.j0 + rb.h < ra.j0;
                if !(sep_x || sep_y) {
                    return Err(Error::Geometry(
                        "islands overlap or touch; one cell of separation required".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Per-cell diffusivity values plus the island membership mask (needed to
/// recover the geometric partition when the contrast is 1).
#[derive(Debug, Clone)]
pub struct CoefficientField {
    pub values: Vec<f64>,
    pub high_mask: Vec<bool>,
}

/// Fills the coefficient field: `contrast` inside island rectangles
/// (refined geometrically from coarsest-level coordinates), 1 elsewhere.
pub fn build_coefficient_field(grid: &Grid, islands: &IslandSpec) -> Result<CoefficientField> {
    if grid.is_one_dimensional() {
        return Err(Error::Geometry(
            "island refinement is defined on square grids".into(),
        ));
    }
    islands.validate()?;
    if grid.nx % COARSEST != 0 {
        return Err(Error::Geometry(format!(
            "grid size {} is not a multiple of the coarsest mesh",
            grid.nx
        )));
    }
    let refine = grid.nx / COARSEST;
    let n = grid.cells();
    let mut values = vec![1.0; n];
    let mut high_mask = vec![false; n];
    for r in &islands.rects {
        for j in r.j0 * refine..(r.j0 + r.h) * refine {
            for i in r.i0 * refine..(r.i0 + r.w) * refine {
                let p = grid.idx(i, j);
                values[p] = islands.contrast;
                high_mask[p] = true;
            }
        }
    }
    Ok(CoefficientField { values, high_mask })
}

/// Index partition into highly-diffusive (H) and lowly-diffusive (L) cells,
/// with the H side further classified into interior and interface cells.
#[derive(Debug, Clone, PartialEq)]
pub struct DofPartition {
    /// H cells, ascending unless constructed with an explicit order.
    pub h_indices: Vec<usize>,
    pub l_indices: Vec<usize>,
    /// H cells with at least one L face-neighbor.
    pub gamma_indices: Vec<usize>,
    /// H cells with no L face-neighbor.
    pub interior_indices: Vec<usize>,
    /// Number of L face-neighbors per H cell, aligned with `h_indices`.
    pub l_neighbor_counts: Vec<usize>,
    pub n_h_noncorner: usize,
    pub n_h_corner: usize,
}

impl DofPartition {
    pub fn n_h(&self) -> usize {
        self.h_indices.len()
    }

    pub fn n_l(&self) -> usize {
        self.l_indices.len()
    }

    /// Builds the partition from an H/L mask with face adjacency supplied by
    /// a callback. Rectangular 2D islands admit at most 2 L-neighbors per
    /// interface cell; more means broken geometry.
    pub fn from_mask<F>(mask: &[bool], neighbors: F) -> Result<Self>
    where
        F: Fn(usize) -> Vec<usize>,
    {
        let h_indices: Vec<usize> = (0..mask.len()).filter(|&p| mask[p]).collect();
        let l_indices: Vec<usize> = (0..mask.len()).filter(|&p| !mask[p]).collect();
        let mut counts = Vec::with_capacity(h_indices.len());
        for &p in &h_indices {
            let c = neighbors(p).into_iter().filter(|&q| !mask[q]).count();
            counts.push(c);
        }
        Self::from_parts(h_indices, l_indices, counts)
    }

    /// Assembles the classification from explicit index lists; `counts[k]`
    /// is the number of L face-neighbors of `h_indices[k]`.
    pub fn from_parts(
        h_indices: Vec<usize>,
        l_indices: Vec<usize>,
        counts: Vec<usize>,
    ) -> Result<Self> {
        if counts.len() != h_indices.len() {
            return Err(Error::Dimension("neighbor counts vs H list".into()));
        }
        let mut gamma = Vec::new();
        let mut interior = Vec::new();
        let mut n_nc = 0;
        let mut n_c = 0;
        for (&p, &c) in h_indices.iter().zip(&counts) {
            match c {
                0 => interior.push(p),
                1 => {
                    gamma.push(p);
                    n_nc += 1;
                }
                2 => {
                    gamma.push(p);
                    n_c += 1;
                }
                _ => {
                    return Err(Error::Geometry(format!(
                        "cell {p} has {c} lowly-diffusive neighbors; islands must be rectangular"
                    )))
                }
            }
        }
        Ok(DofPartition {
            h_indices,
            l_indices,
            gamma_indices: gamma,
            interior_indices: interior,
            l_neighbor_counts: counts,
            n_h_noncorner: n_nc,
            n_h_corner: n_c,
        })
    }

    /// Geometric partition from the island membership mask.
    pub fn from_field(grid: &Grid, field: &CoefficientField) -> Result<Self> {
        Self::from_mask(&field.high_mask, |p| grid.neighbors(p))
    }
}

/// Algebraic partition: a cell is highly-diffusive iff its diagonal entry
/// exceeds `threshold_ratio` times the median diagonal. Adjacency is taken
/// from the matrix graph, so no geometry is needed. A homogeneous diagonal
/// yields an empty H set.
pub fn partition_by_diagonal(k: &Csr, threshold_ratio: f64) -> Result<DofPartition> {
    if k.nrows() != k.ncols() {
        return Err(Error::Dimension("partition of a non-square matrix".into()));
    }
    if !(threshold_ratio > 1.0) {
        return Err(Error::Config(format!(
            "threshold ratio {threshold_ratio} must exceed 1"
        )));
    }
    let diag = k.diagonal();
    let mut sorted = diag.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let mask: Vec<bool> = diag.iter().map(|&d| d > threshold_ratio * median).collect();
    DofPartition::from_mask(&mask, |p| {
        let (cols, _) = k.row(p);
        cols.iter().copied().filter(|&c| c != p).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_operator, strip_coefficients};

    #[test]
    fn coefficient_field_counts_8x8() {
        let grid = Grid::square(8).unwrap();
        let islands = IslandSpec::benchmark_default(1e4);
        let field = build_coefficient_field(&grid, &islands).unwrap();
        let high = field.values.iter().filter(|&&v| v == 1e4).count();
        let low = field.values.iter().filter(|&&v| v == 1.0).count();
        assert_eq!((high, low), (4, 60));
    }

    #[test]
    fn coefficient_field_no_islands() {
        let grid = Grid::square(8).unwrap();
        let field = build_coefficient_field(&grid, &IslandSpec::empty()).unwrap();
        assert!(field.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn coefficient_field_refines_geometrically() {
        let grid = Grid::square(16).unwrap();
        let islands = IslandSpec::benchmark_default(7.0);
        let field = build_coefficient_field(&grid, &islands).unwrap();
        assert_eq!(field.values.iter().filter(|&&v| v == 7.0).count(), 16);
    }

    #[test]
    fn invalid_islands_rejected() {
        // touching the boundary
        assert!(IslandSpec::new(
            vec![CoarseRect {
                i0: 0,
                j0: 2,
                w: 2,
                h: 2
            }],
            10.0
        )
        .is_err());
        // touching each other
        assert!(IslandSpec::new(
            vec![
                CoarseRect {
                    i0: 1,
                    j0: 1,
                    w: 2,
                    h: 2
                },
                CoarseRect {
                    i0: 3,
                    j0: 1,
                    w: 2,
                    h: 2
                }
            ],
            10.0
        )
        .is_err());
    }

    #[test]
    fn diagonal_partition_matches_geometry() {
        let grid = Grid::square(8).unwrap();
        let islands = IslandSpec::benchmark_default(1e6);
        let field = build_coefficient_field(&grid, &islands).unwrap();
        let k = assemble_operator(&grid, &field).unwrap();
        let part = partition_by_diagonal(&k, 10.0).unwrap();
        assert_eq!(part.n_h(), 4);
        assert_eq!(part.gamma_indices.len(), 4);
        assert_eq!((part.n_h_noncorner, part.n_h_corner), (0, 4));
        let geo = DofPartition::from_field(&grid, &field).unwrap();
        assert_eq!(part, geo);
    }

    #[test]
    fn homogeneous_diagonal_gives_empty_h() {
        let grid = Grid::square(8).unwrap();
        let field = build_coefficient_field(&grid, &IslandSpec::benchmark_default(1.0)).unwrap();
        let k = assemble_operator(&grid, &field).unwrap();
        let part = partition_by_diagonal(&k, 10.0).unwrap();
        assert_eq!(part.n_h(), 0);
        assert_eq!(part.n_l(), 64);
    }

    #[test]
    fn strip_partition_reproduces_1d_reference() {
        // 7 cells, diffusive core on cells 3..5 (1-based): H = {2,3,4},
        // interface = {2,4} in 0-based indices.
        let grid = Grid::strip(7).unwrap();
        let field = strip_coefficients(&[1.0, 1.0, 10.0, 10.0, 10.0, 1.0, 1.0]);
        let k = assemble_operator(&grid, &field).unwrap();
        let part = partition_by_diagonal(&k, 3.0).unwrap();
        assert_eq!(part.h_indices, vec![2, 3, 4]);
        assert_eq!(part.gamma_indices, vec![2, 4]);
        assert_eq!((part.n_h_noncorner, part.n_h_corner), (2, 0));
    }

    #[test]
    fn algebraic_equals_geometric_for_strong_contrast() {
        for nx in [8usize, 16, 32] {
            let grid = Grid::square(nx).unwrap();
            for m in [1e2, 1e4, 1e8] {
                let islands = IslandSpec::benchmark_default(m);
                let field = build_coefficient_field(&grid, &islands).unwrap();
                let k = assemble_operator(&grid, &field).unwrap();
                let alg = partition_by_diagonal(&k, 10.0).unwrap();
                let geo = DofPartition::from_field(&grid, &field).unwrap();
                assert_eq!(alg, geo, "nx={nx} m={m}");
                assert_eq!(alg.gamma_indices.len(), alg.n_h_noncorner + alg.n_h_corner);
            }
        }
    }
}
