//! Solver toolkit for the 2D high-contrast diffusion equation
//! `-div(alpha grad u) = f` on the unit square with homogeneous Dirichlet
//! boundary, discretized by a conservative 5-point cell-centered finite
//! volume scheme with harmonic-mean face transmissibilities.
//!
//! The coefficient is binary: `alpha = m >> 1` on axis-aligned rectangular
//! "islands", `alpha = 1` elsewhere. The toolkit provides
//!
//! * assembly of the discretization operator `K(m)` and its 2x2 block
//!   splitting into highly/lowly-diffusive unknowns,
//! * a cell-centered geometric multigrid (CCMG) V(1,1)-cycle preconditioner
//!   with Wesseling-Khalil or bilinear prolongations and sGS or ILU
//!   smoothers,
//! * the AGKS block preconditioner built from the m -> infinity limits of
//!   the subblocks, with a Sherman-Morrison-Woodbury Schur approximation
//!   and subdomain deflation,
//! * a deflated preconditioned conjugate gradient driver with the
//!   reduction-factor reporting used by the benchmark tables,
//! * a dense spectral laboratory for the diagonally scaled operator.
//!
//! The `hcdiff` binary exposes `solve`, `bench` and `spectrum` subcommands.

pub mod agks;
pub mod assembly;
pub mod bench;
pub mod dense;
pub mod geometry;
pub mod ilu;
pub mod krylov;
pub mod mg;
pub mod sparse;
pub mod spectral;

pub use agks::{AgksCore, AgksOptions, AgksVariant, DeflationProjector};
pub use assembly::{AssembledSystem, BlockView};
pub use dense::{DenseLu, DenseMatrix};
pub use geometry::{CoefficientField, DofPartition, Grid, IslandSpec};
pub use krylov::{Convergence, Preconditioner, SolveReport};
pub use mg::{MgHierarchy, ProlongationKind, SmootherKind};
pub use sparse::Csr;

use std::fmt;

/// Library-wide error type.
#[derive(Debug)]
pub enum Error {
    /// Invalid mesh or island geometry.
    Geometry(String),
    /// Shape mismatch between operands.
    Dimension(String),
    /// Numerical failure: singular pivot, non-symmetric input, unusable
    /// Schur scalar, and the like.
    Numerical(String),
    /// Invalid configuration or flag combination.
    Config(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Geometry(s) => write!(f, "geometry error: {s}"),
            Error::Dimension(s) => write!(f, "dimension mismatch: {s}"),
            Error::Numerical(s) => write!(f, "numerical error: {s}"),
            Error::Config(s) => write!(f, "config error: {s}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
