//! Strong recursive skeletonization: an approximate direct solver for dense
//! kernel matrices from 2D integral equations on uniform grids.

pub mod bessel;
pub mod compression;
pub mod dense;
pub mod driver;
pub mod error;
pub mod geometry;
mod iterative;
pub mod kernels;
pub mod parallel;
pub mod quadrature;
pub mod scalar;
pub mod skeletonization;
pub mod solve;

use num_complex::{Complex32, Complex64};

pub use compression::{interpolative_decomposition, IdResult};
pub use dense::{LuFactors, Matrix};
pub use driver::{factorize, factorize_with_order, FactorOptions, Factorization};
pub use error::{Error, Result};
pub use geometry::{box_distance, make_grid, BoxId, Point2D, QuadTree};
pub use kernels::{Kernel, KernelKind, KernelMatrix, KernelSpec, Potential};
pub use parallel::{parallel_factorize, partition_domain, Communicator, ParallelOptions, WorkerGrid};
pub use scalar::{RealScalar, Scalar};
pub use skeletonization::{skeletonize_box, BlockStore, ElementaryFactor};
pub use solve::{apply_inverse, dense_matvec, gmres, pcg};

/// Real double-precision factorization (Laplace).
pub type LaplaceFactorization = Factorization<f64>;
/// Complex double-precision factorization (Helmholtz).
pub type HelmholtzFactorization = Factorization<Complex64>;
/// Single-precision variants.
pub type LaplaceFactorization32 = Factorization<f32>;
pub type HelmholtzFactorization32 = Factorization<Complex32>;
