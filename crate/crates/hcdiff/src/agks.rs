//! The AGKS block preconditioner for the high-contrast operator.
//!
//! The preconditioner approximates the exact block inverse of K(m) by
//! replacing the m-dependent pieces with their m -> infinity limits: the
//! island block inverse collapses onto the rank-one projector
//! `e_H eta^{-1} e_H^T` along the island constant, and the Schur complement
//! converges to `S_inf = K_LL_inf - v eta_inf^{-1} v^T` with
//! `v = K_LH_inf e_H`. The exact variant factors K_HH(m) and S_inf densely;
//! the practical variant runs one multigrid V-cycle per block and applies
//! S_inf^{-1} through the Sherman-Morrison-Woodbury identity with a
//! precomputed rank-one direction.
//!
//! Subdomain deflation removes the island-constant component from the
//! Krylov iteration: `P^T = I - e eta(m)^{-1} e^T K` with
//! `e = [e_H, 0]`. K e is assembled analytically from the Neumann
//! decomposition (the island block contributes `Delta(m) e_H` exactly), so
//! the projector stays accurate at extreme contrasts where forming K e by
//! multiplication would lose all digits to cancellation.

use crate::assembly::{
    assemble_operator_limit, hbar, split_blocks, AssembledSystem, BlockView,
};
use crate::dense::{DenseLu, DenseMatrix};
use crate::geometry::{build_coefficient_field, DofPartition, Grid, IslandSpec};
use crate::krylov::{pcg, Preconditioner};
use crate::mg::{MgHierarchy, ProlongationKind, SmootherKind};
use crate::sparse::Csr;
use crate::{Error, Result};

/// Subdomain hierarchies coarsen only while the block exceeds this many
/// cells; at or below it the block is solved by a dense factorization.
pub const SUBDOMAIN_DIRECT_FLOOR: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgksVariant {
    Exact,
    Practical,
}

#[derive(Debug, Clone, Copy)]
pub struct AgksOptions {
    pub variant: AgksVariant,
    pub prolongation: ProlongationKind,
    pub smoother: SmootherKind,
}

impl Default for AgksOptions {
    fn default() -> Self {
        AgksOptions {
            variant: AgksVariant::Practical,
            prolongation: ProlongationKind::Bilinear,
            smoother: SmootherKind::Sgs,
        }
    }
}

/// eta(m) evaluated from the diagonal perturbation of the Neumann
/// decomposition: `hbar(m) * sum(L-neighbor counts) / n_H`. Exact where the
/// assembled quadratic form suffers cancellation at large m.
pub fn analytic_eta(partition: &DofPartition, m: f64) -> f64 {
    let total: usize = partition.l_neighbor_counts.iter().sum();
    hbar(m) * total as f64 / partition.n_h() as f64
}

/// eta(m) = e_H^T K_HH(m) e_H evaluated as a quadratic form.
pub fn compute_eta(k_hh: &Csr, n_h: usize) -> Result<f64> {
    if k_hh.nrows() != n_h {
        return Err(Error::Dimension("eta: block size vs n_H".into()));
    }
    let e = vec![1.0 / (n_h as f64).sqrt(); n_h];
    let ke = k_hh.spmv(&e)?;
    Ok(e.iter().zip(&ke).map(|(a, b)| a * b).sum())
}

/// m -> infinity limits of the off-island blocks, plus the rank-one data of
/// the limiting Schur complement.
#[derive(Debug, Clone)]
pub struct LimitingBlocks {
    pub k_hl_inf: Csr,
    pub k_ll_inf: Csr,
    /// v = K_LH_inf e_H.
    pub v: Vec<f64>,
    /// eta_inf = e_H^T Delta_inf e_H = 2 (n_nc + 2 n_c) / n_H.
    pub eta_inf: f64,
}

impl LimitingBlocks {
    /// Dense limiting Schur complement S_inf = K_LL_inf - v eta_inf^{-1} v^T.
    pub fn schur_dense(&self) -> DenseMatrix {
        let n_l = self.k_ll_inf.nrows();
        let mut s = self.k_ll_inf.to_dense();
        for i in 0..n_l {
            for j in 0..n_l {
                *s.at_mut(i, j) -= self.v[i] * self.v[j] / self.eta_inf;
            }
        }
        s
    }
}

/// Assembles the limiting blocks for a (grid, islands) pair under the given
/// partition ordering.
pub fn build_limiting_blocks(
    grid: &Grid,
    islands: &IslandSpec,
    partition: &DofPartition,
) -> Result<LimitingBlocks> {
    if partition.n_h() == 0 {
        return Err(Error::Config("limiting blocks need a nonempty island".into()));
    }
    let field = build_coefficient_field(grid, islands)?;
    let k_inf = assemble_operator_limit(grid, &field)?;
    let blocks = split_blocks(&k_inf, partition)?;
    let n_h = partition.n_h();
    let e_h = vec![1.0 / (n_h as f64).sqrt(); n_h];
    let v = blocks.k_lh.spmv(&e_h)?;
    let eta_inf = 2.0
        * partition
            .l_neighbor_counts
            .iter()
            .map(|&c| c as f64)
            .sum::<f64>()
        / n_h as f64;
    Ok(LimitingBlocks {
        k_hl_inf: blocks.k_hl,
        k_ll_inf: blocks.k_ll,
        v,
        eta_inf,
    })
}

#[derive(Debug, Clone)]
enum SubSolver {
    Direct(DenseLu),
    Cycle(MgHierarchy),
}

impl SubSolver {
    fn apply(&self, r: &[f64]) -> Result<Vec<f64>> {
        match self {
            SubSolver::Direct(lu) => lu.solve(r),
            SubSolver::Cycle(h) => h.vcycle_apply(r),
        }
    }

    fn is_direct(&self) -> bool {
        matches!(self, SubSolver::Direct(_))
    }
}

enum SchurSolver {
    /// Dense factorization of S_inf (exact variant).
    Direct(DenseLu),
    /// M_LL plus the rank-one Woodbury correction along `w`.
    Woodbury {
        m_ll: SubSolver,
        w: Vec<f64>,
        sigma: f64,
    },
}

impl SchurSolver {
    fn apply(&self, r: &[f64]) -> Result<Vec<f64>> {
        match self {
            SchurSolver::Direct(lu) => lu.solve(r),
            SchurSolver::Woodbury { m_ll, w, sigma } => {
                let mut z = m_ll.apply(r)?;
                let wr: f64 = w.iter().zip(r).map(|(a, b)| a * b).sum();
                let scale = wr / sigma;
                for (zi, wi) in z.iter_mut().zip(w) {
                    *zi += scale * wi;
                }
                Ok(z)
            }
        }
    }
}

/// Assembled AGKS preconditioner for one (grid, islands, m) configuration.
pub struct AgksCore {
    variant: AgksVariant,
    h_indices: Vec<usize>,
    l_indices: Vec<usize>,
    e_entry: f64,
    pub eta_m: f64,
    pub eta_inf: f64,
    pub sigma: Option<f64>,
    v: Vec<f64>,
    m_hh: SubSolver,
    schur: SchurSolver,
    /// K e assembled via the Neumann decomposition, for deflation.
    ke: Vec<f64>,
    n: usize,
}

impl AgksCore {
    pub fn build(system: &AssembledSystem, opts: &AgksOptions) -> Result<Self> {
        let part = &system.partition;
        if part.n_h() == 0 {
            return Err(Error::Config(
                "AGKS needs at least one highly-diffusive island".into(),
            ));
        }
        let grid = &system.grid;
        let m = system.contrast;
        let n_h = part.n_h();
        let e_entry = 1.0 / (n_h as f64).sqrt();

        let blocks = split_blocks(&system.k, part)?;
        let limits = build_limiting_blocks(grid, &system.islands, part)?;
        // eta(m) through the Neumann decomposition: the island part of the
        // quadratic form vanishes on constants, leaving hbar(m) * e' D e.
        // Evaluating the assembled quadratic form instead would lose the
        // identity at large m to diagonal-storage rounding.
        let eta_m = analytic_eta(part, m);
        let eta_inf = limits.eta_inf;

        // Analytic K e: the island block contributes Delta(m) e_H (the
        // Neumann part annihilates constants), the L side K_LH(m) e_H.
        let e_h = vec![e_entry; n_h];
        let ke_l = blocks.k_lh.spmv(&e_h)?;
        let mut ke = vec![0.0; system.k.nrows()];
        let hb = hbar(m);
        for (&p, &c) in part.h_indices.iter().zip(&part.l_neighbor_counts) {
            ke[p] = hb * c as f64 * e_entry;
        }
        for (&p, &val) in part.l_indices.iter().zip(&ke_l) {
            ke[p] = val;
        }

        let (m_hh, schur) = match opts.variant {
            AgksVariant::Exact => {
                let hh = DenseLu::factor(&blocks.k_hh.to_dense())?;
                let s = DenseLu::factor(&limits.schur_dense())?;
                (SubSolver::Direct(hh), SchurSolver::Direct(s))
            }
            AgksVariant::Practical => {
                let (grids, h_sets, l_sets) = level_index_sets(grid, &system.islands)?;
                let m_hh = build_subsolver(&blocks.k_hh, &h_sets, &grids, opts)?;
                let m_ll = build_subsolver(&limits.k_ll_inf, &l_sets, &grids, opts)?;
                let w = accurate_schur_direction(&limits.k_ll_inf, &limits.v, &m_ll)?;
                let sigma = eta_inf - dot(&limits.v, &w);
                if sigma <= 0.0 {
                    return Err(Error::Numerical(format!(
                        "Woodbury scalar {sigma:.3e} <= 0: M_LL is too weak an inverse for K_LL_inf"
                    )));
                }
                (m_hh, SchurSolver::Woodbury { m_ll, w, sigma })
            }
        };
        let sigma = match &schur {
            SchurSolver::Woodbury { sigma, .. } => Some(*sigma),
            SchurSolver::Direct(_) => None,
        };

        Ok(AgksCore {
            variant: opts.variant,
            h_indices: part.h_indices.clone(),
            l_indices: part.l_indices.clone(),
            e_entry,
            eta_m,
            eta_inf,
            sigma,
            v: limits.v,
            m_hh,
            schur,
            ke,
            n: system.k.nrows(),
        })
    }

    pub fn variant(&self) -> AgksVariant {
        self.variant
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Applies the three-factor preconditioner
    /// `[I, -Q^T; 0, I] diag(M_HH, S~^{-1}) [I, 0; -Q, I]`
    /// with the rank-one `Q = v eta_inf^{-1} e_H^T` never materialized.
    pub fn apply(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.n {
            return Err(Error::Dimension("AGKS apply: vector length".into()));
        }
        let r_h: Vec<f64> = self.h_indices.iter().map(|&p| r[p]).collect();
        let r_l: Vec<f64> = self.l_indices.iter().map(|&p| r[p]).collect();

        let eh_dot_rh: f64 = r_h.iter().sum::<f64>() * self.e_entry;
        let scale = eh_dot_rh / self.eta_inf;
        let t_l: Vec<f64> = r_l.iter().zip(&self.v).map(|(a, vi)| a - scale * vi).collect();

        let mut y_h = self.m_hh.apply(&r_h)?;
        let y_l = self.schur.apply(&t_l)?;

        let v_dot_yl: f64 = dot(&self.v, &y_l);
        let corr = self.e_entry * v_dot_yl / self.eta_inf;
        for yi in y_h.iter_mut() {
            *yi -= corr;
        }

        let mut out = vec![0.0; self.n];
        for (&p, &val) in self.h_indices.iter().zip(&y_h) {
            out[p] = val;
        }
        for (&p, &val) in self.l_indices.iter().zip(&y_l) {
            out[p] = val;
        }
        Ok(out)
    }

    /// Left block factor `[I, 0; -Q, I]` on a global vector; test hook for
    /// the projector identity L P = P.
    pub fn apply_left_factor(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.n {
            return Err(Error::Dimension("left factor: vector length".into()));
        }
        let eh_dot_yh: f64 =
            self.h_indices.iter().map(|&p| y[p]).sum::<f64>() * self.e_entry;
        let scale = eh_dot_yh / self.eta_inf;
        let mut out = y.to_vec();
        for (&p, vi) in self.l_indices.iter().zip(&self.v) {
            out[p] -= scale * vi;
        }
        Ok(out)
    }

    pub fn deflation(&self) -> DeflationProjector {
        let mut e = vec![0.0; self.n];
        for &p in &self.h_indices {
            e[p] = self.e_entry;
        }
        DeflationProjector {
            e,
            ke: self.ke.clone(),
            eta_m: self.eta_m,
        }
    }
}

impl Preconditioner for AgksCore {
    fn apply_preconditioner(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.apply(r)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-level grids and geometric H/L index sets from the finest grid down
/// to the 8x8 coarsest.
fn level_index_sets(
    grid: &Grid,
    islands: &IslandSpec,
) -> Result<(Vec<Grid>, Vec<Vec<usize>>, Vec<Vec<usize>>)> {
    let mut grids = Vec::new();
    let mut h_sets = Vec::new();
    let mut l_sets = Vec::new();
    let mut nx = grid.nx;
    while nx >= 8 {
        let g = Grid { nx, ny: nx };
        let field = build_coefficient_field(&g, islands)?;
        let part = DofPartition::from_field(&g, &field)?;
        h_sets.push(part.h_indices);
        l_sets.push(part.l_indices);
        grids.push(g);
        nx /= 2;
    }
    Ok((grids, h_sets, l_sets))
}

fn build_subsolver(
    block: &Csr,
    sets: &[Vec<usize>],
    grids: &[Grid],
    opts: &AgksOptions,
) -> Result<SubSolver> {
    if block.nrows() <= SUBDOMAIN_DIRECT_FLOOR || sets.len() == 1 {
        return Ok(SubSolver::Direct(DenseLu::factor(&block.to_dense())?));
    }
    let h = MgHierarchy::build_subdomain(
        block,
        sets,
        grids,
        opts.prolongation,
        opts.smoother,
        SUBDOMAIN_DIRECT_FLOOR,
    )?;
    if h.num_levels() == 1 {
        return Ok(SubSolver::Direct(DenseLu::factor(&block.to_dense())?));
    }
    Ok(SubSolver::Cycle(h))
}

/// Rank-one direction of the Woodbury correction: w = K_LL_inf^{-1} v,
/// solved accurately at setup. With a direct M_LL this is exactly M_LL v;
/// with a V-cycle it is refined by an inner PCG so that the small scalar
/// eta_inf - v^T w keeps its leading digits.
fn accurate_schur_direction(k_ll_inf: &Csr, v: &[f64], m_ll: &SubSolver) -> Result<Vec<f64>> {
    if m_ll.is_direct() {
        return m_ll.apply(v);
    }
    struct CycleWrap<'a>(&'a MgHierarchy);
    impl Preconditioner for CycleWrap<'_> {
        fn apply_preconditioner(&self, r: &[f64]) -> Result<Vec<f64>> {
            self.0.vcycle_apply(r)
        }
    }
    match m_ll {
        SubSolver::Cycle(h) => {
            let (w, _report) = pcg(k_ll_inf, v, &CycleWrap(h), None, 1e-13, 400)?;
            Ok(w)
        }
        SubSolver::Direct(_) => unreachable!(),
    }
}

/// K-orthogonal projector onto the complement of the island-constant
/// direction: `P^T = I - e eta(m)^{-1} e^T K`.
#[derive(Debug, Clone)]
pub struct DeflationProjector {
    pub e: Vec<f64>,
    pub ke: Vec<f64>,
    pub eta_m: f64,
}

impl DeflationProjector {
    /// Builds the projector directly from an assembled system (used when
    /// deflation is forced onto a non-AGKS preconditioner).
    pub fn from_system(system: &AssembledSystem) -> Result<Self> {
        let part = &system.partition;
        if part.n_h() == 0 {
            return Err(Error::Config("deflation needs a nonempty island".into()));
        }
        let blocks: BlockView = split_blocks(&system.k, part)?;
        let n_h = part.n_h();
        let e_entry = 1.0 / (n_h as f64).sqrt();
        let eta_m = analytic_eta(part, system.contrast);
        let e_h = vec![e_entry; n_h];
        let ke_l = blocks.k_lh.spmv(&e_h)?;
        let hb = hbar(system.contrast);
        let mut e = vec![0.0; system.k.nrows()];
        let mut ke = vec![0.0; system.k.nrows()];
        for (&p, &c) in part.h_indices.iter().zip(&part.l_neighbor_counts) {
            e[p] = e_entry;
            ke[p] = hb * c as f64 * e_entry;
        }
        for (&p, &val) in part.l_indices.iter().zip(&ke_l) {
            ke[p] = val;
        }
        Ok(DeflationProjector { e, ke, eta_m })
    }

    /// P y = y - K e eta^{-1} e^T y (applied to right-hand sides and
    /// operator outputs).
    pub fn project_range(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.e.len() {
            return Err(Error::Dimension("deflation projector length".into()));
        }
        let c = dot(&self.e, y) / self.eta_m;
        Ok(y.iter().zip(&self.ke).map(|(yi, ki)| yi - c * ki).collect())
    }

    /// P^T x = x - e eta^{-1} (K e)^T x (applied to iterates and
    /// preconditioned residuals).
    pub fn project_domain(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.e.len() {
            return Err(Error::Dimension("deflation projector length".into()));
        }
        let c = dot(&self.ke, x) / self.eta_m;
        Ok(x.iter().zip(&self.e).map(|(xi, ei)| xi - c * ei).collect())
    }

    /// Component of the solution along e: `e eta^{-1} e^T b`.
    pub fn deflated_component(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.e.len() {
            return Err(Error::Dimension("deflation projector length".into()));
        }
        let c = dot(&self.e, b) / self.eta_m;
        Ok(self.e.iter().map(|ei| c * ei).collect())
    }
}

/// Dense matrix of the Dirichlet problem constrained to a constant island
/// value: `[[n_H eta_inf, (K_LH_inf 1_H)^T], [K_LH_inf 1_H, K_LL_inf]]`.
/// Its Schur complement with respect to the leading scalar equals S_inf.
pub fn build_constrained_dirichlet_matrix(
    grid: &Grid,
    islands: &IslandSpec,
) -> Result<DenseMatrix> {
    let field = build_coefficient_field(grid, islands)?;
    let partition = DofPartition::from_field(grid, &field)?;
    let limits = build_limiting_blocks(grid, islands, &partition)?;
    let n_h = partition.n_h() as f64;
    let n_l = partition.n_l();
    let scale = n_h.sqrt(); // K_LH_inf 1_H = sqrt(n_H) v
    let mut kk = DenseMatrix::zeros(n_l + 1, n_l + 1);
    *kk.at_mut(0, 0) = n_h * limits.eta_inf;
    for i in 0..n_l {
        let coupling = scale * limits.v[i];
        *kk.at_mut(0, i + 1) = coupling;
        *kk.at_mut(i + 1, 0) = coupling;
        for j in 0..n_l {
            *kk.at_mut(i + 1, j + 1) = limits.k_ll_inf.get(i, j);
        }
    }
    Ok(kk)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_operator, hbar, strip_coefficients};
    use crate::dense::symmetric_eigenvalues;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn bench_system(nx: usize, m: f64) -> AssembledSystem {
        let grid = Grid::square(nx).unwrap();
        AssembledSystem::build(grid, IslandSpec::benchmark_default(m), |_, _| 1.0).unwrap()
    }

    #[test]
    fn eta_of_the_1d_reference() {
        // strip H block in center-out order; eta(m) = 2 hbar / 3
        let m = 50.0;
        let grid = Grid::strip(7).unwrap();
        let field = strip_coefficients(&[1.0, 1.0, m, m, m, 1.0, 1.0]);
        let k = assemble_operator(&grid, &field).unwrap();
        let order = [3usize, 2, 4];
        let k_hh = k.extract(&order, &order).unwrap();
        let eta = compute_eta(&k_hh, 3).unwrap();
        assert!((eta - 2.0 * hbar(m) / 3.0).abs() < 1e-14);
    }

    #[test]
    fn eta_of_the_benchmark_island() {
        // 4 corner cells with two L-neighbors each: eta(m) = 2 hbar(m)
        let sys = bench_system(8, 1e2);
        let blocks = split_blocks(&sys.k, &sys.partition).unwrap();
        let eta = compute_eta(&blocks.k_hh, 4).unwrap();
        assert!((eta - 2.0 * hbar(1e2)).abs() < 1e-12);
        // reduced closed form with doubled corner weight
        let part = &sys.partition;
        let reduced = hbar(1e2)
            * (part.n_h_noncorner as f64 + 2.0 * part.n_h_corner as f64)
            / part.n_h() as f64;
        assert!((eta - reduced).abs() < 1e-12);
        assert!((analytic_eta(part, 1e2) - reduced).abs() < 1e-15);
        // at extreme contrast the assembled form only carries the identity
        // relative to the diagonal scale; the analytic route is exact
        let sys6 = bench_system(8, 1e6);
        let blocks6 = split_blocks(&sys6.k, &sys6.partition).unwrap();
        let eta6 = compute_eta(&blocks6.k_hh, 4).unwrap();
        assert!((eta6 - 2.0 * hbar(1e6)).abs() < 1e-15 * 4e6);
        assert!((analytic_eta(&sys6.partition, 1e6) - 2.0 * hbar(1e6)).abs() < 1e-15);
        let limits = build_limiting_blocks(&sys.grid, &sys.islands, part).unwrap();
        assert_eq!(limits.eta_inf, 4.0);
    }

    #[test]
    fn limiting_blocks_of_the_1d_reference() {
        // substituting the face limit 2 into the strip blocks
        let grid = Grid::strip(7).unwrap();
        let field = strip_coefficients(&[1.0, 1.0, 1e7, 1e7, 1e7, 1.0, 1.0]);
        let k_inf = assemble_operator_limit(&grid, &field).unwrap();
        let h = [3usize, 2, 4];
        let l = [1usize, 5, 0, 6];
        let k_hl = k_inf.extract(&h, &l).unwrap();
        assert_eq!(k_hl.get(1, 0), -2.0);
        assert_eq!(k_hl.get(2, 1), -2.0);
        let k_ll = k_inf.extract(&l, &l).unwrap();
        assert_eq!(k_ll.get(0, 0), 3.0);
        assert_eq!(k_ll.get(1, 1), 3.0);
    }

    #[test]
    fn finite_contrast_blocks_approach_the_limit() {
        let sys = bench_system(8, 1e6);
        let blocks = split_blocks(&sys.k, &sys.partition).unwrap();
        let limits = build_limiting_blocks(&sys.grid, &sys.islands, &sys.partition).unwrap();
        let mut worst = 0.0f64;
        for i in 0..blocks.k_ll.nrows() {
            for j in 0..blocks.k_ll.ncols() {
                worst = worst.max((blocks.k_ll.get(i, j) - limits.k_ll_inf.get(i, j)).abs());
            }
        }
        assert!(worst <= 2e-6, "K_LL distance to limit {worst}");
        // v for the 2x2 island on the 8x8 grid: 8 entries of -1
        let nonzero: Vec<f64> = limits.v.iter().copied().filter(|&x| x != 0.0).collect();
        assert_eq!(nonzero.len(), 8);
        assert!(nonzero.iter().all(|&x| (x + 1.0).abs() < 1e-14));
    }

    #[test]
    fn apply_zero_is_zero() {
        let sys = bench_system(8, 1e6);
        for variant in [AgksVariant::Exact, AgksVariant::Practical] {
            let core = AgksCore::build(
                &sys,
                &AgksOptions {
                    variant,
                    ..Default::default()
                },
            )
            .unwrap();
            let z = core.apply(&vec![0.0; 64]).unwrap();
            assert!(z.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn exact_preconditioner_is_spd_at_unit_contrast() {
        let sys = bench_system(8, 1.0);
        let core = AgksCore::build(
            &sys,
            &AgksOptions {
                variant: AgksVariant::Exact,
                ..Default::default()
            },
        )
        .unwrap();
        let n = 64;
        let mut b = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = core.apply(&e).unwrap();
            for i in 0..n {
                *b.at_mut(i, j) = col[i];
            }
        }
        b.symmetrize();
        let eigs = symmetric_eigenvalues(&b).unwrap();
        assert!(eigs[0] > 0.0);
    }

    #[test]
    fn woodbury_with_exact_inverse_matches_schur_inverse() {
        let sys = bench_system(8, 1e8);
        // at 8x8 the L block is below the direct floor, so M_LL is exact and
        // the SMW application must invert S_inf to high accuracy
        let core = AgksCore::build(&sys, &AgksOptions::default()).unwrap();
        let limits = build_limiting_blocks(&sys.grid, &sys.islands, &sys.partition).unwrap();
        let s_inf = limits.schur_dense();
        let n_l = s_inf.nrows();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let y: Vec<f64> = (0..n_l).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let sy = s_inf.matvec(&y).unwrap();
            let back = match &core.schur {
                SchurSolver::Woodbury { .. } => core.schur.apply(&sy).unwrap(),
                _ => panic!("expected Woodbury at 8x8"),
            };
            let err = back
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(err < 1e-10, "SMW inversion error {err}");
        }
    }

    #[test]
    fn deflation_projector_identities() {
        let sys = bench_system(8, 1e6);
        let core = AgksCore::build(&sys, &AgksOptions::default()).unwrap();
        let proj = core.deflation();
        // P^T e = 0
        let pte = proj.project_domain(&proj.e).unwrap();
        assert!(pte.iter().all(|&v| v.abs() < 1e-12));
        // idempotency on random vectors
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let once = proj.project_domain(&x).unwrap();
            let twice = proj.project_domain(&once).unwrap();
            let err = once
                .iter()
                .zip(&twice)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(err < 1e-12);
        }
    }

    #[test]
    fn left_factor_fixes_the_projector() {
        let sys = bench_system(16, 1e6);
        let core = AgksCore::build(&sys, &AgksOptions::default()).unwrap();
        let proj = core.deflation();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let px = proj.project_range(&x).unwrap();
            let lpx = core.apply_left_factor(&px).unwrap();
            let num: f64 = lpx
                .iter()
                .zip(&px)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let den: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(num <= 1e-12 * den, "L P x deviates: {num}");
        }
    }

    #[test]
    fn constrained_matrix_schur_is_the_limiting_schur() {
        let grid = Grid::square(8).unwrap();
        let islands = IslandSpec::benchmark_default(1e6);
        let kk = build_constrained_dirichlet_matrix(&grid, &islands).unwrap();
        assert!(kk.max_asymmetry() == 0.0);
        let field = build_coefficient_field(&grid, &islands).unwrap();
        let partition = DofPartition::from_field(&grid, &field).unwrap();
        let limits = build_limiting_blocks(&grid, &islands, &partition).unwrap();
        let s_inf = limits.schur_dense();
        let n_l = s_inf.nrows();
        let a00 = kk.at(0, 0);
        for i in 0..n_l {
            for j in 0..n_l {
                let schur = kk.at(i + 1, j + 1) - kk.at(i + 1, 0) * kk.at(0, j + 1) / a00;
                assert!(
                    (schur - s_inf.at(i, j)).abs() < 1e-12,
                    "Schur mismatch at ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn island_block_spectrum_splits() {
        for m in [1e4, 1e6] {
            let sys = bench_system(8, m);
            let blocks = split_blocks(&sys.k, &sys.partition).unwrap();
            let eigs = symmetric_eigenvalues(&blocks.k_hh.to_dense()).unwrap();
            let small: Vec<f64> = eigs.iter().copied().filter(|&v| v < 0.1 * m).collect();
            assert_eq!(small.len(), 1, "m={m}: {eigs:?}");
            assert!(eigs[1] >= 0.1 * m);
        }
    }

    #[test]
    fn empty_island_is_rejected() {
        let grid = Grid::square(8).unwrap();
        let sys = AssembledSystem::build(grid, IslandSpec::empty(), |_, _| 1.0).unwrap();
        assert!(AgksCore::build(&sys, &AgksOptions::default()).is_err());
    }
}
