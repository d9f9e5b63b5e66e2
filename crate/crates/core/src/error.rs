use thiserror::Error;

use crate::geometry::BoxId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("grid side {0} must be a power of two and at least 2")]
    InvalidGridSide(usize),

    #[error("point set is empty")]
    EmptyPointSet,

    #[error("leaf target must be at least 1")]
    InvalidLeafTarget,

    #[error("boxes {0} and {1} live on different tree levels")]
    LevelMismatch(BoxId, BoxId),

    #[error("box {0} has no skeleton to merge into its parent")]
    MissingSkeleton(BoxId),

    #[error("active index list of box {0} is not available in this store")]
    UnknownBox(BoxId),

    #[error("coincident points {0} and {1} have no off-diagonal kernel entry")]
    CoincidentPoints(usize, usize),

    #[error("quadrature did not reach tolerance {target:e}; achieved {achieved:e}")]
    QuadratureDiverged { target: f64, achieved: f64 },

    #[error("compression tolerance {0} must lie in (0, 1)")]
    InvalidTolerance(f64),

    #[error("{0}")]
    InvalidKernel(String),

    #[error("redundant block of box {0} is numerically singular (pivot {pivot:e}, norm {norm:e})", pivot = .1, norm = .2)]
    SingularPivot(BoxId, f64, f64),

    #[error("dense top-level system is singular at column {0}")]
    SingularTopSystem(usize),

    #[error("vector length {got} does not match problem size {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid worker count {p}: {reason}")]
    InvalidPartition { p: usize, reason: String },

    #[error("worker {worker} transport failure: {reason}")]
    Transport { worker: usize, reason: String },

    #[error("worker {worker}: block {key:?} has shape {got:?}, local active lists expect {expected:?}")]
    ShapeMismatch {
        worker: usize,
        key: (usize, usize),
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("conjugate gradient breakdown at iteration {0} (non-positive curvature); try GMRES")]
    CgBreakdown(usize),

    #[error("GMRES stagnated over a full restart cycle at iteration {0}")]
    GmresStagnation(usize),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
