//! Dense spectral studies of K(m) and its symmetric diagonal scaling
//! A(m) = D^{-1/2} K(m) D^{-1/2}: full spectra, condition numbers, counts of
//! contrast-driven eigenvalues, and log-log slope fits for asymptotic rates.

use crate::assembly::assemble_operator;
use crate::dense::symmetric_eigenvalues;
use crate::geometry::{build_coefficient_field, DofPartition, Grid, IslandSpec};
use crate::sparse::Csr;
use crate::{Error, Result};

/// Dense-eigensolver size cap (64x64 grid).
pub const DENSE_SPECTRUM_LIMIT: usize = 4096;

/// Symmetric Jacobi scaling: A = D^{-1/2} K D^{-1/2}, unit diagonal.
pub fn diagonal_scale(k: &Csr) -> Result<Csr> {
    let diag = k.diagonal();
    if diag.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::Numerical("diagonal scaling needs a positive diagonal".into()));
    }
    let inv_sqrt: Vec<f64> = diag.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut triplets = Vec::with_capacity(k.nnz());
    for i in 0..k.nrows() {
        let (cols, vals) = k.row(i);
        for (c, v) in cols.iter().zip(vals) {
            triplets.push((i, *c, v * inv_sqrt[i] * inv_sqrt[*c]));
        }
    }
    Csr::from_triplets(k.nrows(), k.ncols(), &triplets)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    /// K(m) itself.
    Unscaled,
    /// The diagonally scaled A(m).
    DiagonallyScaled,
}

impl std::fmt::Display for MatrixKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MatrixKind::Unscaled => write!(f, "K"),
            MatrixKind::DiagonallyScaled => write!(f, "A"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpectrumReport {
    pub kind: MatrixKind,
    pub m: f64,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub condition_number: f64,
    /// #eigenvalues below 100/m (the contrast-driven small band).
    pub count_small: usize,
    /// #eigenvalues above m/100 (the contrast-driven large band).
    pub count_large: usize,
}

fn report_for(kind: MatrixKind, m: f64, eigenvalues: Vec<f64>) -> SpectrumReport {
    let lo = eigenvalues.first().copied().unwrap_or(0.0);
    let hi = eigenvalues.last().copied().unwrap_or(0.0);
    let small_band = 100.0 / m;
    let large_band = m / 100.0;
    SpectrumReport {
        kind,
        m,
        count_small: eigenvalues.iter().filter(|&&v| v < small_band).count(),
        count_large: eigenvalues.iter().filter(|&&v| v > large_band).count(),
        condition_number: hi / lo,
        eigenvalues,
    }
}

/// Full spectra of K(m) and A(m) for every contrast in `m_list`.
/// Reports come in (K, A) pairs per contrast.
pub fn spectrum_study(
    grid: &Grid,
    islands: &IslandSpec,
    m_list: &[f64],
) -> Result<Vec<SpectrumReport>> {
    if grid.cells() > DENSE_SPECTRUM_LIMIT {
        return Err(Error::Config(format!(
            "spectrum study capped at {DENSE_SPECTRUM_LIMIT} cells, got {}",
            grid.cells()
        )));
    }
    let mut out = Vec::with_capacity(2 * m_list.len());
    for &m in m_list {
        let islands_m = IslandSpec {
            rects: islands.rects.clone(),
            contrast: m,
        };
        let field = build_coefficient_field(grid, &islands_m)?;
        let k = assemble_operator(grid, &field)?;
        let eig_k = symmetric_eigenvalues(&k.to_dense())?;
        out.push(report_for(MatrixKind::Unscaled, m, eig_k));
        let a = diagonal_scale(&k)?;
        let eig_a = symmetric_eigenvalues(&a.to_dense())?;
        out.push(report_for(MatrixKind::DiagonallyScaled, m, eig_a));
    }
    Ok(out)
}

/// Least-squares slope of log(value) against log(m), with the RMS residual
/// of the fit. Needs at least 3 positive samples.
pub fn fit_asymptotic_slope(samples: &[(f64, f64)]) -> Result<(f64, f64)> {
    if samples.len() < 3 {
        return Err(Error::Config("slope fit needs at least 3 samples".into()));
    }
    if samples.iter().any(|&(m, v)| !(m > 0.0) || !(v > 0.0)) {
        return Err(Error::Numerical("slope fit needs positive samples".into()));
    }
    let xs: Vec<f64> = samples.iter().map(|&(m, _)| m.ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|&(_, v)| v.ln()).collect();
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let rms = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt();
    Ok((slope, rms))
}

/// CSV with one row per contrast: condition numbers and the structurally
/// interesting eigenvalues of K and A. The selected indices generalize the
/// n = 64 reference layout: the extreme eigenvalues, the largest bounded /
/// smallest unbounded eigenvalues of K (indices n - n_H and n - n_H + 1),
/// and the (s+1)-th eigenvalue of A for s islands.
pub fn spectrum_csv(reports: &[SpectrumReport], partition: &DofPartition, islands: usize) -> String {
    let mut out = String::new();
    let n = reports
        .first()
        .map(|r| r.eigenvalues.len())
        .unwrap_or(0);
    // m-growing eigenvalue count is n_H - s, so the largest bounded
    // eigenvalue sits at 1-based index n - n_H + s
    let n_h = partition.n_h();
    let bounded_idx = n - n_h + islands;
    let unbounded_idx = bounded_idx + 1;
    out.push_str(&format!(
        "m,kappa_K,lambda_1_K,lambda_{bounded_idx}_K,lambda_{unbounded_idx}_K,lambda_{n}_K,kappa_A,lambda_1_A,lambda_{}_A,lambda_{n}_A,count_large_K,count_small_A\n",
        islands + 1
    ));
    for pair in reports.chunks(2) {
        if pair.len() < 2 {
            break;
        }
        let (k, a) = (&pair[0], &pair[1]);
        let ek = &k.eigenvalues;
        let ea = &a.eigenvalues;
        out.push_str(&format!(
            "{:e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{},{}\n",
            k.m,
            k.condition_number,
            ek[0],
            ek[bounded_idx - 1],
            ek[unbounded_idx - 1],
            ek[n - 1],
            a.condition_number,
            ea[0],
            ea[islands],
            ea[n - 1],
            k.count_large,
            a.count_small,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling_a_diagonal_matrix_gives_identity() {
        let k = Csr::from_triplets(3, 3, &[(0, 0, 4.0), (1, 1, 9.0), (2, 2, 16.0)]).unwrap();
        let a = diagonal_scale(&k).unwrap();
        for i in 0..3 {
            assert!((a.get(i, i) - 1.0).abs() < 1e-15);
        }
        assert_eq!(a.nnz(), 3);
    }

    #[test]
    fn scaled_matrix_has_unit_diagonal() {
        let grid = Grid::square(8).unwrap();
        let field =
            build_coefficient_field(&grid, &IslandSpec::benchmark_default(1e6)).unwrap();
        let k = assemble_operator(&grid, &field).unwrap();
        let a = diagonal_scale(&k).unwrap();
        for i in 0..64 {
            assert!((a.get(i, i) - 1.0).abs() <= 1e-14);
        }
        let asym = a.to_dense().max_asymmetry();
        assert!(asym <= 1e-15);
    }

    #[test]
    fn reference_extreme_eigenvalues_at_1e4() {
        let grid = Grid::square(8).unwrap();
        let reports =
            spectrum_study(&grid, &IslandSpec::benchmark_default(1.0), &[1e4]).unwrap();
        let (k, a) = (&reports[0], &reports[1]);
        assert!((k.eigenvalues[61] - 2.000e4).abs() / 2.000e4 < 2e-2);
        assert!((k.eigenvalues[63] - 4.000e4).abs() / 4.000e4 < 2e-2);
        assert!((a.eigenvalues[0] - 6.139e-5).abs() / 6.139e-5 < 2e-2);
        assert!((a.eigenvalues[63] - 1.999).abs() / 1.999 < 2e-2);
    }

    #[test]
    fn eigenvalue_counts_single_island() {
        let grid = Grid::square(8).unwrap();
        let reports =
            spectrum_study(&grid, &IslandSpec::benchmark_default(1.0), &[1e6]).unwrap();
        let (k, a) = (&reports[0], &reports[1]);
        // n_H - 1 = 3 island eigenvalues grow with m, 61 stay bounded
        assert_eq!(k.count_large, 3);
        assert_eq!(k.eigenvalues.iter().filter(|&&v| v < 0.1 * 1e6).count(), 61);
        // a single vanishing eigenvalue for a single island
        assert_eq!(a.count_small, 1);
        assert!(a.eigenvalues[0] <= 1e-3);
        assert!(a.eigenvalues[1] >= 0.13);
    }

    #[test]
    fn eigenvalue_counts_two_islands() {
        let grid = Grid::square(16).unwrap();
        let islands = IslandSpec::new(
            vec![
                crate::geometry::CoarseRect {
                    i0: 1,
                    j0: 1,
                    w: 2,
                    h: 2,
                },
                crate::geometry::CoarseRect {
                    i0: 4,
                    j0: 4,
                    w: 2,
                    h: 2,
                },
            ],
            1.0,
        )
        .unwrap();
        let reports = spectrum_study(&grid, &islands, &[1e6]).unwrap();
        let (k, a) = (&reports[0], &reports[1]);
        // each island holds 16 fine cells: sum(n_Hk - 1) = 30 growing modes
        assert_eq!(k.count_large, 30);
        assert_eq!(a.count_small, 2);
        assert!(a.eigenvalues[2] > 1e-3);
    }

    #[test]
    fn slope_fit_examples() {
        let exact: Vec<(f64, f64)> = (2..=8).map(|k| {
            let m = 10f64.powi(k);
            (m, 5.0 / m)
        }).collect();
        let (slope, rms) = fit_asymptotic_slope(&exact).unwrap();
        assert!((slope + 1.0).abs() < 1e-6 && rms < 1e-10);
        let half: Vec<(f64, f64)> = (2..=8).map(|k| {
            let m = 10f64.powi(k);
            (m, 3.0 / m.sqrt())
        }).collect();
        let (slope, _) = fit_asymptotic_slope(&half).unwrap();
        assert!((slope + 0.5).abs() < 1e-6);
        assert!(fit_asymptotic_slope(&[(1.0, 1.0), (2.0, 0.5)]).is_err());
        assert!(fit_asymptotic_slope(&[(1.0, 1.0), (2.0, -0.5), (3.0, 0.1)]).is_err());
    }

    #[test]
    fn reference_smallest_scaled_eigenvalue_decays_linearly() {
        // frozen reference values of lambda_1(A) over four decades
        let samples = [
            (1e4, 6.139e-5),
            (1e6, 6.142e-7),
            (1e8, 6.143e-9),
            (1e10, 6.143e-11),
        ];
        let (slope, _) = fit_asymptotic_slope(&samples).unwrap();
        assert!((slope + 1.0).abs() < 0.02, "slope {slope}");
    }

    #[test]
    fn scaled_lower_bound_is_numerically_tight() {
        let grid = Grid::square(8).unwrap();
        let ms = [1e4, 1e6, 1e8, 1e10];
        let reports =
            spectrum_study(&grid, &IslandSpec::benchmark_default(1.0), &ms).unwrap();
        let products: Vec<f64> = reports
            .chunks(2)
            .map(|pair| pair[1].eigenvalues[0] * pair[1].m)
            .collect();
        let lo = products.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = products.iter().cloned().fold(0.0f64, f64::max);
        assert!(hi / lo < 1.05, "lambda_min(A) * m drifts: {products:?}");
        // upper bound lambda_min(A) <= C2 m^{-1/2} anchored at m = 1e2
        let c2 = {
            let r = spectrum_study(&grid, &IslandSpec::benchmark_default(1.0), &[1e2]).unwrap();
            r[1].eigenvalues[0] * (1e2f64).sqrt()
        };
        for pair in reports.chunks(2) {
            let a = &pair[1];
            assert!(a.eigenvalues[0] <= c2 / a.m.sqrt() * (1.0 + 1e-9));
        }
    }

    #[test]
    fn csv_layout() {
        let grid = Grid::square(8).unwrap();
        let islands = IslandSpec::benchmark_default(1.0);
        let field = build_coefficient_field(&grid, &islands).unwrap();
        let part = DofPartition::from_field(&grid, &field).unwrap();
        let reports = spectrum_study(&grid, &islands, &[1e2, 1e4]).unwrap();
        let csv = spectrum_csv(&reports, &part, 1);
        let mut lines = csv.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("m,kappa_K,lambda_1_K,lambda_61_K,lambda_62_K,lambda_64_K,kappa_A"));
        assert_eq!(lines.count(), 2);
    }
}
