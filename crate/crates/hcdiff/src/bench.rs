//! Benchmark sweeps and report emitters.
//!
//! A sweep runs one PCG solve per (grid, contrast, preconditioner,
//! prolongation, smoother) cell and renders one table per preconditioner
//! combination, rows indexed by mesh size and columns by contrast. Cells
//! follow the `**iterations**, factor` convention with `60+` for runs that
//! hit the iteration cap while still contracting and `inf` for divergence.
//! A machine-readable CSV carries the full reports; wall-clock timings go
//! to a separate sidecar so the main outputs are byte-reproducible.

use crate::agks::{AgksCore, AgksOptions, AgksVariant, DeflationProjector};
use crate::assembly::AssembledSystem;
use crate::geometry::{CoarseRect, Grid, IslandSpec};
use crate::krylov::{
    pcg, Convergence, IdentityPreconditioner, JacobiPreconditioner, Preconditioner, SolveReport,
};
use crate::mg::{MgHierarchy, ProlongationKind, SmootherKind};
use crate::{Error, Result};
use serde::Deserialize;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecondKind {
    AgksExact,
    Agks,
    Ccmg,
    Jacobi,
    None,
}

impl PrecondKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "agks_exact" => Ok(PrecondKind::AgksExact),
            "agks" => Ok(PrecondKind::Agks),
            "ccmg" => Ok(PrecondKind::Ccmg),
            "jacobi" => Ok(PrecondKind::Jacobi),
            "none" => Ok(PrecondKind::None),
            other => Err(Error::Config(format!(
                "unknown preconditioner '{other}' (expected agks_exact|agks|ccmg|jacobi|none)"
            ))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            PrecondKind::AgksExact => "AGKS-exact",
            PrecondKind::Agks => "AGKS",
            PrecondKind::Ccmg => "CCMG",
            PrecondKind::Jacobi => "Jacobi",
            PrecondKind::None => "none",
        }
    }

    /// Whether the transfer/smoother choice participates at all.
    pub fn uses_multigrid(&self) -> bool {
        matches!(self, PrecondKind::Agks | PrecondKind::Ccmg)
    }

    fn deflates_by_default(&self) -> bool {
        matches!(self, PrecondKind::Agks | PrecondKind::AgksExact)
    }
}

pub fn parse_prolongation(s: &str) -> Result<ProlongationKind> {
    match s {
        "wk" => Ok(ProlongationKind::WesselingKhalil),
        "bilinear" => Ok(ProlongationKind::Bilinear),
        other => Err(Error::Config(format!(
            "unknown prolongation '{other}' (expected wk|bilinear)"
        ))),
    }
}

pub fn parse_smoother(s: &str) -> Result<SmootherKind> {
    match s {
        "sgs" => Ok(SmootherKind::Sgs),
        "ilu" => Ok(SmootherKind::Ilu),
        other => Err(Error::Config(format!(
            "unknown smoother '{other}' (expected sgs|ilu)"
        ))),
    }
}

/// One solve request.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub nx: usize,
    pub contrast: f64,
    pub precond: PrecondKind,
    pub prolongation: ProlongationKind,
    pub smoother: SmootherKind,
    pub islands: Vec<CoarseRect>,
    pub tol: f64,
    pub maxit: usize,
    pub scale_by_contrast: bool,
    /// None = preconditioner default (on for AGKS, off otherwise).
    pub deflate: Option<bool>,
}

impl RunSettings {
    pub fn new(nx: usize, contrast: f64, precond: PrecondKind) -> Self {
        RunSettings {
            nx,
            contrast,
            precond,
            prolongation: ProlongationKind::Bilinear,
            smoother: SmootherKind::Sgs,
            islands: vec![CoarseRect {
                i0: 2,
                j0: 2,
                w: 2,
                h: 2,
            }],
            tol: 1e-9,
            maxit: 60,
            scale_by_contrast: false,
            deflate: None,
        }
    }
}

struct Scaled<'a> {
    inner: &'a dyn Preconditioner,
    factor: f64,
}

impl Preconditioner for Scaled<'_> {
    fn apply_preconditioner(&self, r: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.inner.apply_preconditioner(r)?;
        for v in &mut z {
            *v *= self.factor;
        }
        Ok(z)
    }
}

pub struct RunOutcome {
    pub report: SolveReport,
    pub solution: Vec<f64>,
    pub grid: Grid,
}

/// Assembles and solves one configuration; source term f = 1.
pub fn run_single(settings: &RunSettings) -> Result<RunOutcome> {
    let setup_start = Instant::now();
    let grid = Grid::square(settings.nx)?;
    let islands = IslandSpec::new(settings.islands.clone(), settings.contrast)?;
    let system = AssembledSystem::build(grid, islands, |_, _| 1.0)?;

    let deflate = settings.deflate.unwrap_or_else(|| settings.precond.deflates_by_default());
    let agks_opts = |variant| AgksOptions {
        variant,
        prolongation: settings.prolongation,
        smoother: settings.smoother,
    };

    enum Built {
        Agks(AgksCore),
        Mg(MgHierarchy),
        Jacobi(JacobiPreconditioner),
        Identity,
    }
    let built = match settings.precond {
        PrecondKind::Agks => Built::Agks(AgksCore::build(&system, &agks_opts(AgksVariant::Practical))?),
        PrecondKind::AgksExact => Built::Agks(AgksCore::build(&system, &agks_opts(AgksVariant::Exact))?),
        PrecondKind::Ccmg => Built::Mg(MgHierarchy::build_global(
            &system.k,
            &grid,
            settings.prolongation,
            settings.smoother,
            8,
        )?),
        PrecondKind::Jacobi => Built::Jacobi(JacobiPreconditioner::new(&system.k)?),
        PrecondKind::None => Built::Identity,
    };
    let projector: Option<DeflationProjector> = if deflate {
        Some(match &built {
            Built::Agks(core) => core.deflation(),
            _ => DeflationProjector::from_system(&system)?,
        })
    } else {
        None
    };
    let precond: &dyn Preconditioner = match &built {
        Built::Agks(core) => core,
        Built::Mg(h) => h,
        Built::Jacobi(j) => j,
        Built::Identity => &IdentityPreconditioner,
    };
    let setup_seconds = setup_start.elapsed().as_secs_f64();

    // Optional global 1/m rescaling of the system. The preconditioner output
    // is rescaled accordingly, so the preconditioned iteration is identical
    // in exact arithmetic; the flag only changes the floating-point scale.
    let (k_run, b_run, scaled_holder);
    let precond_run: &dyn Preconditioner = if settings.scale_by_contrast && settings.contrast > 1.0
    {
        let inv = 1.0 / settings.contrast;
        let mut k = system.k.clone();
        k.scale(inv);
        let b = system.b.iter().map(|v| v * inv).collect::<Vec<_>>();
        k_run = k;
        b_run = b;
        scaled_holder = Scaled {
            inner: precond,
            factor: settings.contrast,
        };
        &scaled_holder
    } else {
        k_run = system.k.clone();
        b_run = system.b.clone();
        precond
    };
    // Deflation scales consistently: eta and K e both carry 1/m, so the
    // projector of the scaled system equals the unscaled one.
    let projector_run = projector.as_ref().map(|p| {
        if settings.scale_by_contrast && settings.contrast > 1.0 {
            let inv = 1.0 / settings.contrast;
            DeflationProjector {
                e: p.e.clone(),
                ke: p.ke.iter().map(|v| v * inv).collect(),
                eta_m: p.eta_m * inv,
            }
        } else {
            p.clone()
        }
    });

    let (solution, mut report) = pcg(
        &k_run,
        &b_run,
        precond_run,
        projector_run.as_ref(),
        settings.tol,
        settings.maxit,
    )?;
    report.setup_seconds = setup_seconds;
    Ok(RunOutcome {
        report,
        solution,
        grid,
    })
}

/// Table-cell rendering: converged runs show the count, capped runs that
/// still contract show `60+`, everything else is `inf`.
pub fn cell_marker(report: &SolveReport, maxit: usize) -> String {
    match report.converged {
        Convergence::Converged => format!("{}", report.iterations),
        Convergence::CapReached if report.final_relative_residual <= 1e-3 => {
            format!("{maxit}+")
        }
        _ => "inf".to_string(),
    }
}

fn factor_str(report: &SolveReport) -> String {
    if report.avg_reduction_factor.is_nan() {
        "nan".to_string()
    } else {
        format!("{:.3}", report.avg_reduction_factor)
    }
}

/// Benchmark configuration, read from JSON.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub grids: Vec<usize>,
    pub contrasts: Vec<f64>,
    #[serde(default = "default_islands")]
    pub islands: Vec<[usize; 4]>,
    pub preconditioners: Vec<String>,
    #[serde(default = "default_prolongations")]
    pub prolongations: Vec<String>,
    #[serde(default = "default_smoothers")]
    pub smoothers: Vec<String>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_maxit")]
    pub maxit: usize,
    #[serde(default)]
    pub scale_by_contrast: bool,
    #[serde(default = "default_output")]
    pub output: String,
    /// Reserved for randomized diagnostics; the solves are deterministic.
    #[serde(default)]
    pub seed: u64,
}

fn default_islands() -> Vec<[usize; 4]> {
    vec![[2, 2, 2, 2]]
}

fn default_prolongations() -> Vec<String> {
    vec!["wk".into(), "bilinear".into()]
}

fn default_smoothers() -> Vec<String> {
    vec!["sgs".into(), "ilu".into()]
}

fn default_tol() -> f64 {
    1e-9
}

fn default_maxit() -> usize {
    60
}

fn default_output() -> String {
    "md".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Combo {
    precond: PrecondKind,
    prolongation: ProlongationKind,
    smoother: SmootherKind,
}

impl BenchConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: BenchConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grids.is_empty() {
            return Err(Error::Config("empty grid list".into()));
        }
        for &nx in &self.grids {
            Grid::square(nx)?;
        }
        if self.contrasts.is_empty() {
            return Err(Error::Config("empty contrast list".into()));
        }
        if self.preconditioners.is_empty() {
            return Err(Error::Config("empty preconditioner list".into()));
        }
        for p in &self.preconditioners {
            PrecondKind::parse(p)?;
        }
        for p in &self.prolongations {
            parse_prolongation(p)?;
        }
        for s in &self.smoothers {
            parse_smoother(s)?;
        }
        if !(self.output == "md" || self.output == "csv") {
            return Err(Error::Config(format!("output '{}' must be md or csv", self.output)));
        }
        IslandSpec::new(self.rects(), self.contrasts[0].max(1.0))?;
        Ok(())
    }

    pub fn rects(&self) -> Vec<CoarseRect> {
        self.islands
            .iter()
            .map(|r| CoarseRect {
                i0: r[0],
                j0: r[1],
                w: r[2],
                h: r[3],
            })
            .collect()
    }

    fn combos(&self) -> Result<Vec<Combo>> {
        let mut out = Vec::new();
        for p in &self.preconditioners {
            let precond = PrecondKind::parse(p)?;
            if precond.uses_multigrid() {
                for pr in &self.prolongations {
                    for sm in &self.smoothers {
                        out.push(Combo {
                            precond,
                            prolongation: parse_prolongation(pr)?,
                            smoother: parse_smoother(sm)?,
                        });
                    }
                }
            } else {
                out.push(Combo {
                    precond,
                    prolongation: ProlongationKind::Bilinear,
                    smoother: SmootherKind::Sgs,
                });
            }
        }
        Ok(out)
    }
}

/// One finished benchmark cell.
pub struct BenchCell {
    pub precond: PrecondKind,
    pub prolongation: ProlongationKind,
    pub smoother: SmootherKind,
    pub nx: usize,
    pub contrast: f64,
    pub report: SolveReport,
}

pub struct BenchResults {
    pub cells: Vec<BenchCell>,
    pub maxit: usize,
    pub contrasts: Vec<f64>,
    pub grids: Vec<usize>,
    pub output: String,
}

/// Worker count: HCDIFF_THREADS if set, otherwise the machine parallelism.
fn worker_count(cells: usize) -> usize {
    let max = std::env::var("HCDIFF_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|v| v.get())
                .unwrap_or(1)
        });
    max.min(cells).max(1)
}

/// Runs every cell of the sweep; independent cells run concurrently, the
/// result order is fixed by the configuration.
pub fn run_bench(config: &BenchConfig) -> Result<BenchResults> {
    config.validate()?;
    let combos = config.combos()?;
    let mut specs = Vec::new();
    for combo in &combos {
        for &nx in &config.grids {
            for &m in &config.contrasts {
                let mut s = RunSettings::new(nx, m, combo.precond);
                s.prolongation = combo.prolongation;
                s.smoother = combo.smoother;
                s.islands = config.rects();
                s.tol = config.tol;
                s.maxit = config.maxit;
                s.scale_by_contrast = config.scale_by_contrast;
                specs.push(s);
            }
        }
    }
    let n_cells = specs.len();
    let workers = worker_count(n_cells);
    let mut slots: Vec<Option<Result<RunOutcome>>> = Vec::new();
    slots.resize_with(n_cells, || None);
    {
        let next = AtomicUsize::new(0);
        let slots_ref = std::sync::Mutex::new(&mut slots);
        let specs_ref = &specs;
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let idx = next.fetch_add(1, Ordering::SeqCst);
                    if idx >= n_cells {
                        break;
                    }
                    let outcome = run_single(&specs_ref[idx]);
                    let mut guard = slots_ref.lock().unwrap();
                    guard[idx] = Some(outcome);
                });
            }
        });
    }
    let mut cells = Vec::with_capacity(n_cells);
    for (spec, slot) in specs.into_iter().zip(slots) {
        let outcome = slot.expect("worker missed a cell")?;
        cells.push(BenchCell {
            precond: spec.precond,
            prolongation: spec.prolongation,
            smoother: spec.smoother,
            nx: spec.nx,
            contrast: spec.contrast,
            report: outcome.report,
        });
    }
    Ok(BenchResults {
        cells,
        maxit: config.maxit,
        contrasts: config.contrasts.clone(),
        grids: config.grids.clone(),
        output: config.output.clone(),
    })
}

fn contrast_label(m: f64) -> String {
    let exp = m.log10();
    if (exp - exp.round()).abs() < 1e-12 && exp >= 0.0 {
        format!("10^{}", exp.round() as i64)
    } else {
        format!("{m:e}")
    }
}

impl BenchResults {
    fn combos_in_order(&self) -> Vec<(PrecondKind, ProlongationKind, SmootherKind)> {
        let mut seen = Vec::new();
        for c in &self.cells {
            let key = (c.precond, c.prolongation, c.smoother);
            if !seen.contains(&key) {
                seen.push(key);
            }
        }
        seen
    }

    pub fn caption(
        precond: PrecondKind,
        prolongation: ProlongationKind,
        smoother: SmootherKind,
    ) -> String {
        if precond.uses_multigrid() {
            format!(
                "Preconditioner = {}, Prolongation = {}, Smoother = {}",
                precond.label(),
                prolongation,
                smoother
            )
        } else {
            format!("Preconditioner = {}", precond.label())
        }
    }

    /// One Markdown (or CSV) table per preconditioner combination.
    pub fn tables(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (precond, prolongation, smoother) in self.combos_in_order() {
            let caption = Self::caption(precond, prolongation, smoother);
            let body = if self.output == "csv" {
                self.table_csv(precond, prolongation, smoother)
            } else {
                self.table_md(precond, prolongation, smoother)
            };
            out.push((caption, body));
        }
        out
    }

    fn cells_of(
        &self,
        precond: PrecondKind,
        prolongation: ProlongationKind,
        smoother: SmootherKind,
        nx: usize,
        m: f64,
    ) -> Option<&BenchCell> {
        self.cells.iter().find(|c| {
            c.precond == precond
                && c.prolongation == prolongation
                && c.smoother == smoother
                && c.nx == nx
                && c.contrast == m
        })
    }

    fn table_md(
        &self,
        precond: PrecondKind,
        prolongation: ProlongationKind,
        smoother: SmootherKind,
    ) -> String {
        let mut s = String::new();
        s.push_str("| h \\ m |");
        for &m in &self.contrasts {
            s.push_str(&format!(" {} |", contrast_label(m)));
        }
        s.push('\n');
        s.push_str("|---|");
        for _ in &self.contrasts {
            s.push_str("---|");
        }
        s.push('\n');
        for &nx in &self.grids {
            s.push_str(&format!("| 1/{nx} |"));
            for &m in &self.contrasts {
                if let Some(cell) = self.cells_of(precond, prolongation, smoother, nx, m) {
                    s.push_str(&format!(
                        " **{}**, {} |",
                        cell_marker(&cell.report, self.maxit),
                        factor_str(&cell.report)
                    ));
                } else {
                    s.push_str(" - |");
                }
            }
            s.push('\n');
        }
        s
    }

    fn table_csv(
        &self,
        precond: PrecondKind,
        prolongation: ProlongationKind,
        smoother: SmootherKind,
    ) -> String {
        let mut s = String::from("h,m,marker,avg_factor\n");
        for &nx in &self.grids {
            for &m in &self.contrasts {
                if let Some(cell) = self.cells_of(precond, prolongation, smoother, nx, m) {
                    s.push_str(&format!(
                        "1/{nx},{m:e},{},{}\n",
                        cell_marker(&cell.report, self.maxit),
                        factor_str(&cell.report)
                    ));
                }
            }
        }
        s
    }

    /// Full machine-readable CSV (deterministic; excludes timings).
    pub fn full_csv(&self) -> String {
        let mut s = String::from(
            "precond,prolongation,smoother,nx,m,iterations,status,avg_factor,final_rr\n",
        );
        for c in &self.cells {
            s.push_str(&format!(
                "{},{},{},{},{:e},{},{},{:.17e},{:.17e}\n",
                c.precond.label(),
                c.prolongation,
                c.smoother,
                c.nx,
                c.contrast,
                c.report.iterations,
                c.report.converged,
                c.report.avg_reduction_factor,
                c.report.final_relative_residual,
            ));
        }
        s
    }

    /// Wall-clock sidecar, one row per cell.
    pub fn timings_csv(&self) -> String {
        let mut s = String::from("precond,prolongation,smoother,nx,m,setup_seconds,solve_seconds\n");
        for c in &self.cells {
            s.push_str(&format!(
                "{},{},{},{},{:e},{:.6},{:.6}\n",
                c.precond.label(),
                c.prolongation,
                c.smoother,
                c.nx,
                c.contrast,
                c.report.setup_seconds,
                c.report.solve_seconds,
            ));
        }
        s
    }
}

/// Fields recovered from one full-CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvReportRow {
    pub precond: String,
    pub prolongation: String,
    pub smoother: String,
    pub nx: usize,
    pub m: f64,
    pub iterations: usize,
    pub status: String,
    pub avg_factor: f64,
    pub final_rr: f64,
}

/// Parses the full CSV back; used by the round-trip checks.
pub fn parse_full_csv(text: &str) -> Result<Vec<CsvReportRow>> {
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if ln == 0 || line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 9 {
            return Err(Error::Config(format!("csv row {ln}: {} fields", parts.len())));
        }
        rows.push(CsvReportRow {
            precond: parts[0].to_string(),
            prolongation: parts[1].to_string(),
            smoother: parts[2].to_string(),
            nx: parts[3].parse().map_err(|_| Error::Config("bad nx".into()))?,
            m: parts[4].parse().map_err(|_| Error::Config("bad m".into()))?,
            iterations: parts[5].parse().map_err(|_| Error::Config("bad iterations".into()))?,
            status: parts[6].to_string(),
            avg_factor: parts[7].parse().map_err(|_| Error::Config("bad factor".into()))?,
            final_rr: parts[8].parse().map_err(|_| Error::Config("bad rr".into()))?,
        });
    }
    Ok(rows)
}

/// Cell-center solution dump: `x,y,u` per cell.
pub fn solution_csv(grid: &Grid, solution: &[f64]) -> String {
    let mut s = String::from("x,y,u\n");
    for p in 0..grid.cells() {
        let (x, y) = grid.center(p);
        s.push_str(&format!("{x:.10},{y:.10},{:.17e}\n", solution[p]));
    }
    s
}
