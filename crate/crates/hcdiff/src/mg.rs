//! Cell-centered geometric multigrid: V(1,1)-cycle with symmetric
//! Gauss-Seidel or ILU smoothing, Galerkin coarse operators, and a dense
//! direct solve on the coarsest level.
//!
//! Two prolongations are provided. The bilinear one is the tensor product
//! of the 1D cell-centered weights (3/4, 1/4), with a one-sided weight-1
//! fallback next to the domain boundary. The Wesseling-Khalil one
//! distributes each coarse cell over its 4x4 fine-cell window with the
//! stencil
//!
//! ```text
//!        1 1 0 0
//!  1/4 * 1 3 2 0
//!        0 2 3 1
//!        0 0 1 1
//! ```
//!
//! which interpolates diagonal-parity fine cells from their parent (3/4)
//! and nearest diagonal coarse neighbor (1/4), and mixed-parity cells from
//! the parent (1/2) and the two nearest axis neighbors (1/4 each). Interior
//! rows of both operators sum to exactly 1; near the boundary the window is
//! clipped.

use crate::dense::DenseLu;
use crate::geometry::Grid;
use crate::ilu::{ilu_factorize, IluFactors};
use crate::sparse::{galerkin_triple_product, Csr};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProlongationKind {
    WesselingKhalil,
    Bilinear,
}

impl std::fmt::Display for ProlongationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProlongationKind::WesselingKhalil => write!(f, "Wesseling-Khalil"),
            ProlongationKind::Bilinear => write!(f, "Bi-linear"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmootherKind {
    Sgs,
    Ilu,
}

impl std::fmt::Display for SmootherKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SmootherKind::Sgs => write!(f, "sGS"),
            SmootherKind::Ilu => write!(f, "ILU"),
        }
    }
}

/// Drop tolerance used for ILU smoothing factors at every level.
pub const ILU_SMOOTHER_TAU: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Prolongation {
    pub kind: ProlongationKind,
    /// Coarse-to-fine transfer, (nx*nx) x (nx/2 * nx/2).
    pub matrix: Csr,
}

/// Builds the coarse-to-fine transfer for one refinement step on a square
/// grid with even `nx`.
pub fn build_prolongation(kind: ProlongationKind, fine_grid: &Grid) -> Result<Prolongation> {
    if fine_grid.is_one_dimensional() {
        return Err(Error::Geometry("prolongation is defined on square grids".into()));
    }
    let nf = fine_grid.nx;
    if nf % 2 != 0 {
        return Err(Error::Geometry(format!("fine grid size {nf} must be even")));
    }
    let nc = nf / 2;
    let matrix = match kind {
        ProlongationKind::Bilinear => bilinear_matrix(nf, nc)?,
        ProlongationKind::WesselingKhalil => wesseling_khalil_matrix(nf, nc)?,
    };
    Ok(Prolongation { kind, matrix })
}

/// 1D cell-centered linear weights: fine child of coarse cell I leans 3/4 on
/// the parent and 1/4 on the nearest coarse neighbor; at the wall only the
/// parent remains.
fn bilinear_taps_1d(fi: usize, nc: usize) -> Vec<(usize, f64)> {
    let parent = fi / 2;
    if fi % 2 == 0 {
        if parent > 0 {
            vec![(parent - 1, 0.25), (parent, 0.75)]
        } else {
            vec![(parent, 1.0)]
        }
    } else if parent + 1 < nc {
        vec![(parent, 0.75), (parent + 1, 0.25)]
    } else {
        vec![(parent, 1.0)]
    }
}

fn bilinear_matrix(nf: usize, nc: usize) -> Result<Csr> {
    let mut triplets = Vec::with_capacity(4 * nf * nf);
    for fy in 0..nf {
        let ty = bilinear_taps_1d(fy, nc);
        for fx in 0..nf {
            let tx = bilinear_taps_1d(fx, nc);
            let row = fy * nf + fx;
            for &(cy, wy) in &ty {
                for &(cx, wx) in &tx {
                    triplets.push((row, cy * nc + cx, wy * wx));
                }
            }
        }
    }
    Csr::from_triplets(nf * nf, nc * nc, &triplets)
}

/// Distribution weights of one coarse cell over its 4x4 fine window,
/// offsets -1..=2 in each direction relative to the left-lower child.
const WK_STENCIL: [[f64; 4]; 4] = [
    [0.25, 0.25, 0.0, 0.0],
    [0.25, 0.75, 0.5, 0.0],
    [0.0, 0.5, 0.75, 0.25],
    [0.0, 0.0, 0.25, 0.25],
];

fn wesseling_khalil_matrix(nf: usize, nc: usize) -> Result<Csr> {
    let mut triplets = Vec::new();
    for cy in 0..nc {
        for cx in 0..nc {
            let col = cy * nc + cx;
            for (ax, row_w) in WK_STENCIL.iter().enumerate() {
                let fx = 2 * cx as isize - 1 + ax as isize;
                if fx < 0 || fx >= nf as isize {
                    continue;
                }
                for (ay, w) in row_w.iter().enumerate() {
                    if *w == 0.0 {
                        continue;
                    }
                    let fy = 2 * cy as isize - 1 + ay as isize;
                    if fy < 0 || fy >= nf as isize {
                        continue;
                    }
                    triplets.push((fy as usize * nf + fx as usize, col, *w));
                }
            }
        }
    }
    Csr::from_triplets(nf * nf, nc * nc, &triplets)
}

#[derive(Debug, Clone)]
enum Smoother {
    Sgs,
    Ilu(IluFactors),
}

#[derive(Debug, Clone)]
struct Level {
    a: Csr,
    /// Transfer from the next coarser level into this one; absent on the
    /// coarsest level.
    p: Option<Csr>,
    smoother: Smoother,
}

/// Multilevel hierarchy: Galerkin operators, per-level smoother state and a
/// dense factorization of the coarsest operator.
#[derive(Debug, Clone)]
pub struct MgHierarchy {
    levels: Vec<Level>,
    coarsest: DenseLu,
    /// Pre- and post-smoothing sweeps per level.
    sweeps: usize,
}

fn make_smoother(a: &Csr, kind: SmootherKind) -> Result<Smoother> {
    Ok(match kind {
        SmootherKind::Sgs => Smoother::Sgs,
        SmootherKind::Ilu => Smoother::Ilu(ilu_factorize(a, ILU_SMOOTHER_TAU)?),
    })
}

impl MgHierarchy {
    /// Hierarchy for the full-domain operator: levels nx, nx/2, ...,
    /// coarsest_n, Galerkin-coarsened with the chosen prolongation.
    pub fn build_global(
        k: &Csr,
        grid: &Grid,
        kind: ProlongationKind,
        smoother: SmootherKind,
        coarsest_n: usize,
    ) -> Result<Self> {
        if coarsest_n > grid.nx {
            return Err(Error::Config(format!(
                "coarsest level {coarsest_n} exceeds grid {}",
                grid.nx
            )));
        }
        if !(grid.nx / coarsest_n).is_power_of_two() || grid.nx % coarsest_n != 0 {
            return Err(Error::Config(format!(
                "grid {} does not coarsen to {coarsest_n} by halving",
                grid.nx
            )));
        }
        let mut prolongations = Vec::new();
        let mut nx = grid.nx;
        while nx > coarsest_n {
            prolongations.push(build_prolongation(kind, &Grid { nx, ny: nx })?.matrix);
            nx /= 2;
        }
        Self::assemble(k.clone(), prolongations, smoother, 1)
    }

    /// Hierarchy for a subdomain block. `level_sets[l]` holds the block's
    /// cell indices inside the level-l global grid (`level_grids[l]`); the
    /// global prolongations are restricted to those index sets. Coarsening
    /// stops once the block has at most `floor` cells, which are then solved
    /// directly. Subdomain cycles smooth twice per side, which keeps the
    /// cycle quality roughly smoother-independent on these small blocks.
    pub fn build_subdomain(
        block: &Csr,
        level_sets: &[Vec<usize>],
        level_grids: &[Grid],
        kind: ProlongationKind,
        smoother: SmootherKind,
        floor: usize,
    ) -> Result<Self> {
        if level_sets.is_empty() || level_sets.len() != level_grids.len() {
            return Err(Error::Dimension("subdomain level sets vs grids".into()));
        }
        let mut prolongations = Vec::new();
        let mut lev = 0;
        while lev + 1 < level_sets.len() && level_sets[lev].len() > floor {
            let p = build_prolongation(kind, &level_grids[lev])?.matrix;
            prolongations.push(p.extract(&level_sets[lev], &level_sets[lev + 1])?);
            lev += 1;
        }
        Self::assemble(block.clone(), prolongations, smoother, 2)
    }

    fn assemble(
        finest: Csr,
        prolongations: Vec<Csr>,
        smoother: SmootherKind,
        sweeps: usize,
    ) -> Result<Self> {
        let mut levels = Vec::new();
        let mut current = finest;
        for p in prolongations {
            let coarse = galerkin_triple_product(&p.transpose(), &current, &p)?;
            levels.push(Level {
                a: current,
                p: Some(p),
                smoother: Smoother::Sgs, // placeholder until filled below
            });
            current = coarse;
        }
        let coarsest = DenseLu::factor(&current.to_dense())?;
        levels.push(Level {
            a: current,
            p: None,
            smoother: Smoother::Sgs,
        });
        for lev in levels.iter_mut() {
            if lev.p.is_some() {
                lev.smoother = make_smoother(&lev.a, smoother)?;
            }
        }
        Ok(MgHierarchy {
            levels,
            coarsest,
            sweeps,
        })
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level_operator(&self, l: usize) -> &Csr {
        &self.levels[l].a
    }

    pub fn dim(&self) -> usize {
        self.levels[0].a.nrows()
    }

    /// One V(1,1)-cycle applied to a residual; returns the correction.
    /// The cycle owns its work vectors, so concurrent applies on a shared
    /// hierarchy are safe.
    pub fn vcycle_apply(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.dim() {
            return Err(Error::Dimension("V-cycle input length".into()));
        }
        self.cycle(0, r)
    }

    fn cycle(&self, l: usize, b: &[f64]) -> Result<Vec<f64>> {
        let level = &self.levels[l];
        let p = match &level.p {
            None => return self.coarsest.solve(b),
            Some(p) => p,
        };
        let a = &level.a;
        let mut x = vec![0.0; b.len()];
        for _ in 0..self.sweeps {
            smooth(a, &level.smoother, &mut x, b)?;
        }
        let ax = a.spmv(&x)?;
        let res: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let coarse_res = p.transpose().spmv(&res)?;
        let coarse_corr = self.cycle(l + 1, &coarse_res)?;
        let fine_corr = p.spmv(&coarse_corr)?;
        for (xi, ci) in x.iter_mut().zip(&fine_corr) {
            *xi += ci;
        }
        for _ in 0..self.sweeps {
            smooth(a, &level.smoother, &mut x, b)?;
        }
        Ok(x)
    }
}

fn smooth(a: &Csr, smoother: &Smoother, x: &mut [f64], b: &[f64]) -> Result<()> {
    match smoother {
        Smoother::Sgs => {
            sgs_sweep(a, x, b);
            Ok(())
        }
        Smoother::Ilu(f) => {
            let ax = a.spmv(x)?;
            let res: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            let corr = f.solve(&res)?;
            for (xi, ci) in x.iter_mut().zip(&corr) {
                *xi += ci;
            }
            Ok(())
        }
    }
}

/// One symmetric Gauss-Seidel sweep: forward then backward, lexicographic
/// ordering.
pub fn sgs_sweep(a: &Csr, x: &mut [f64], b: &[f64]) {
    let n = b.len();
    for i in 0..n {
        gs_update(a, x, b, i);
    }
    for i in (0..n).rev() {
        gs_update(a, x, b, i);
    }
}

#[inline]
fn gs_update(a: &Csr, x: &mut [f64], b: &[f64], i: usize) {
    let (cols, vals) = a.row(i);
    let mut acc = b[i];
    let mut diag = 0.0;
    for (c, v) in cols.iter().zip(vals) {
        if *c == i {
            diag = *v;
        } else {
            acc -= v * x[*c];
        }
    }
    x[i] = acc / diag;
}
