//! Command-line front end: single solves, benchmark sweeps, spectrum studies.

use clap::{Args, Parser, Subcommand};
use hcdiff::bench::{
    cell_marker, parse_prolongation, parse_smoother, run_bench, run_single, solution_csv,
    BenchConfig, PrecondKind, RunSettings,
};
use hcdiff::geometry::{CoarseRect, DofPartition, Grid, IslandSpec};
use hcdiff::spectral::{fit_asymptotic_slope, spectrum_csv, spectrum_study};
use hcdiff::Error;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "hcdiff",
    about = "High-contrast diffusion benchmark toolkit: cell-centered FV, CCMG and AGKS preconditioners, deflated PCG, spectral studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble and solve one configuration, print the report line.
    Solve(SolveArgs),
    /// Run a benchmark sweep from a JSON config and write tables + CSV.
    Bench(BenchArgs),
    /// Dense spectrum study of K(m) and its diagonal scaling.
    Spectrum(SpectrumArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// Cells per axis (power of two, >= 8)
    #[arg(long, short = 'n')]
    n: usize,
    /// Contrast m (island diffusivity)
    #[arg(long, short = 'm')]
    m: f64,
    /// Preconditioner: agks_exact | agks | ccmg | jacobi | none
    #[arg(long, default_value = "agks")]
    precond: String,
    /// Prolongation: wk | bilinear
    #[arg(long, default_value = "bilinear")]
    prolongation: String,
    /// Smoother: sgs | ilu
    #[arg(long, default_value = "sgs")]
    smoother: String,
    /// Island rectangle in coarse cells, i0,j0,w,h (repeatable)
    #[arg(long = "island", value_parser = parse_rect)]
    islands: Vec<CoarseRect>,
    /// Relative-residual tolerance
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Iteration cap
    #[arg(long, default_value_t = 60)]
    maxit: usize,
    /// Deflation: auto | on | off
    #[arg(long, default_value = "auto")]
    deflate: String,
    /// Scale the system by 1/m before solving
    #[arg(long)]
    scale: bool,
    /// Write the solution field as x,y,u CSV
    #[arg(long)]
    dump_solution: Option<PathBuf>,
    /// Write the assembled operator in Matrix Market format
    #[arg(long)]
    dump_matrix: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// JSON configuration file
    #[arg(long)]
    config: PathBuf,
    /// Output directory for tables, CSV and the timing sidecar
    #[arg(long, default_value = "bench_out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SpectrumArgs {
    /// Cells per axis (dense eigensolver; keep <= 64)
    #[arg(long, short = 'n')]
    n: usize,
    /// Comma-separated contrast list, e.g. 1,1e2,1e4
    #[arg(long)]
    m_list: String,
    /// Island rectangle in coarse cells, i0,j0,w,h (repeatable)
    #[arg(long = "island", value_parser = parse_rect)]
    islands: Vec<CoarseRect>,
    /// Output CSV path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_rect(s: &str) -> Result<CoarseRect, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        return Err("expected i0,j0,w,h".into());
    }
    let nums: Vec<usize> = parts
        .iter()
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("bad island coordinate: {e}"))?;
    Ok(CoarseRect {
        i0: nums[0],
        j0: nums[1],
        w: nums[2],
        h: nums[3],
    })
}

fn default_island() -> Vec<CoarseRect> {
    vec![CoarseRect {
        i0: 2,
        j0: 2,
        w: 2,
        h: 2,
    }]
}

fn cmd_solve(args: &SolveArgs) -> hcdiff::Result<()> {
    let mut settings = RunSettings::new(args.n, args.m, PrecondKind::parse(&args.precond)?);
    settings.prolongation = parse_prolongation(&args.prolongation)?;
    settings.smoother = parse_smoother(&args.smoother)?;
    settings.islands = if args.islands.is_empty() {
        default_island()
    } else {
        args.islands.clone()
    };
    settings.tol = args.tol;
    settings.maxit = args.maxit;
    settings.scale_by_contrast = args.scale;
    settings.deflate = match args.deflate.as_str() {
        "auto" => None,
        "on" => Some(true),
        "off" => Some(false),
        other => {
            return Err(Error::Config(format!(
                "deflate '{other}' must be auto|on|off"
            )))
        }
    };
    let outcome = run_single(&settings)?;
    let rep = &outcome.report;
    println!(
        "n={} m={:e} precond={} prolongation={} smoother={} iters={} status={} factor={:.3} rr={:.3e} setup={:.3}s solve={:.3}s marker={}",
        args.n,
        args.m,
        args.precond,
        args.prolongation,
        args.smoother,
        rep.iterations,
        rep.converged,
        rep.avg_reduction_factor,
        rep.final_relative_residual,
        rep.setup_seconds,
        rep.solve_seconds,
        cell_marker(rep, settings.maxit),
    );
    if let Some(path) = &args.dump_solution {
        fs::write(path, solution_csv(&outcome.grid, &outcome.solution))?;
    }
    if let Some(path) = &args.dump_matrix {
        let grid = Grid::square(args.n)?;
        let islands = IslandSpec::new(settings.islands.clone(), args.m)?;
        let field = hcdiff::geometry::build_coefficient_field(&grid, &islands)?;
        let k = hcdiff::assembly::assemble_operator(&grid, &field)?;
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        k.write_matrix_market(&mut f)?;
    }
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> hcdiff::Result<()> {
    let text = fs::read_to_string(&args.config)?;
    let config = BenchConfig::from_json(&text)?;
    let results = run_bench(&config)?;
    fs::create_dir_all(&args.out_dir)?;
    let ext = if results.output == "csv" { "csv" } else { "md" };
    for (caption, body) in results.tables() {
        let slug: String = caption
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
            .collect::<String>()
            .split('_')
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join("_");
        let path = args.out_dir.join(format!("table_{slug}.{ext}"));
        let content = if ext == "md" {
            format!("**{caption}**\n\n{body}")
        } else {
            format!("# {caption}\n{body}")
        };
        fs::write(&path, content)?;
        println!("wrote {}", path.display());
    }
    fs::write(args.out_dir.join("results.csv"), results.full_csv())?;
    fs::write(args.out_dir.join("timings.csv"), results.timings_csv())?;
    println!(
        "wrote {} and {}",
        args.out_dir.join("results.csv").display(),
        args.out_dir.join("timings.csv").display()
    );
    Ok(())
}

fn cmd_spectrum(args: &SpectrumArgs) -> hcdiff::Result<()> {
    let grid = Grid::square(args.n)?;
    let m_list: Vec<f64> = args
        .m_list
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Error::Config(format!("bad contrast list: {e}")))?;
    if m_list.is_empty() {
        return Err(Error::Config("empty contrast list".into()));
    }
    let rects = if args.islands.is_empty() {
        default_island()
    } else {
        args.islands.clone()
    };
    let islands = IslandSpec::new(rects, m_list.iter().cloned().fold(1.0, f64::max).max(1.0))?;
    let reports = spectrum_study(&grid, &islands, &m_list)?;
    let field = hcdiff::geometry::build_coefficient_field(&grid, &islands)?;
    let partition = DofPartition::from_field(&grid, &field)?;
    let csv = spectrum_csv(&reports, &partition, islands.rects.len());
    match &args.out {
        Some(path) => {
            fs::write(path, &csv)?;
            println!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    // asymptotic rate of the smallest scaled eigenvalue, when enough samples
    let samples: Vec<(f64, f64)> = reports
        .chunks(2)
        .filter(|p| p.len() == 2 && p[1].m > 1.0)
        .map(|p| (p[1].m, p[1].eigenvalues[0]))
        .collect();
    if samples.len() >= 3 {
        if let Ok((slope, rms)) = fit_asymptotic_slope(&samples) {
            eprintln!("lambda_min(A) slope vs m: {slope:.3} (fit rms {rms:.2e})");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Spectrum(args) => cmd_spectrum(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
