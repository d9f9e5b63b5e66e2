//! Matrix entries of the discretized 2D Laplace and Lippmann-Schwinger
//! (Helmholtz) operators on a uniform collocation grid, plus proxy circles.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bessel::hankel_h0;
use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::geometry::{BoxId, Point2D};
use crate::quadrature::cell_self_integral;
use crate::scalar::Scalar;

/// Relative tolerance for singular self-interaction integrals.
pub const DIAG_QUAD_TOL: f64 = 1e-12;

/// Proxy circle radius in units of the box side.
pub const PROXY_RADIUS_RATIO: f64 = 2.5;

const I_QUARTER: Complex64 = Complex64::new(0.0, 0.25);

/// A translation-invariant kernel `w(x) w(y) g(|x - y|)` with a separate
/// diagonal rule.
pub trait Kernel: Send + Sync + fmt::Debug {
    /// `g(r)` for `r > 0`.
    fn radial(&self, r: f64) -> Complex64;

    /// Point weight `w(x)`.
    fn weight(&self, _p: &Point2D) -> f64 {
        1.0
    }

    fn diag(&self, p: &Point2D) -> Complex64;

    fn is_real(&self) -> bool;

    /// Proxy count for a box of the given side length.
    fn default_n_proxy(&self, _side_length: f64) -> usize {
        64
    }

    fn offdiag(&self, xi: &Point2D, xj: &Point2D) -> Result<Complex64> {
        let r = xi.dist(xj);
        if r == 0.0 {
            return Err(Error::CoincidentPoints(xi.global_index, xj.global_index));
        }
        Ok(self.radial(r) * (self.weight(xi) * self.weight(xj)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    Laplace2D,
    Helmholtz2D,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalarField {
    Real,
    Complex,
}

/// Scattering potential `b(x)`.
#[derive(Clone)]
pub enum Potential {
    GaussianBump,
    Constant(f64),
    Custom(Arc<dyn Fn(&Point2D) -> f64 + Send + Sync>),
}

impl Potential {
    pub fn eval(&self, p: &Point2D) -> f64 {
        match self {
            Potential::GaussianBump => gaussian_bump(p),
            Potential::Constant(c) => *c,
            Potential::Custom(f) => f(p),
        }
    }
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Potential::GaussianBump => write!(f, "GaussianBump"),
            Potential::Constant(c) => write!(f, "Constant({c})"),
            Potential::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// `b(x) = exp(-32 |x - c|^2)` with `c = (1/2, 1/2)`.
pub fn gaussian_bump(x: &Point2D) -> f64 {
    let dx = x.x - 0.5;
    let dy = x.y - 0.5;
    (-32.0 * (dx * dx + dy * dy)).exp()
}

/// `-(h^2 / 2π) log |xi - xj|`.
pub fn laplace_offdiag(xi: &Point2D, xj: &Point2D, h: f64) -> Result<f64> {
    let r = xi.dist(xj);
    if r == 0.0 {
        return Err(Error::CoincidentPoints(xi.global_index, xj.global_index));
    }
    Ok(-(h * h) / (2.0 * PI) * r.ln())
}

/// `∫∫ -(1/2π) log |x| dx` over the cell `[-h/2, h/2]^2`.
pub fn laplace_diag(h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidKernel(format!("grid spacing must be positive, got {h}")));
    }
    let v = cell_self_integral(|r| Complex64::new(-r.ln() / (2.0 * PI), 0.0), h, DIAG_QUAD_TOL)?;
    Ok(v.re)
}

/// `∫∫ (i/4) H0(κ|x|) dx` over the cell `[-h/2, h/2]^2`.
pub fn helmholtz_self_integral(h: f64, kappa: f64) -> Result<Complex64> {
    if !(h > 0.0) || !(kappa > 0.0) {
        return Err(Error::InvalidKernel(format!(
            "need h > 0 and kappa > 0, got h = {h}, kappa = {kappa}"
        )));
    }
    cell_self_integral(|r| I_QUARTER * hankel_h0(kappa * r), h, DIAG_QUAD_TOL)
}

/// `h^2 κ^2 sqrt(b(xi) b(xj)) (i/4) H0(κ |xi - xj|)`.
pub fn helmholtz_offdiag(
    xi: &Point2D,
    xj: &Point2D,
    h: f64,
    kappa: f64,
    b: &dyn Fn(&Point2D) -> f64,
) -> Result<Complex64> {
    let r = xi.dist(xj);
    if r == 0.0 {
        return Err(Error::CoincidentPoints(xi.global_index, xj.global_index));
    }
    let w = (b(xi) * b(xj)).sqrt();
    Ok(I_QUARTER * hankel_h0(kappa * r) * (h * h * kappa * kappa * w))
}

/// `1 + κ^2 b(xi) ∫∫ (i/4) H0(κ|x|) dx`.
pub fn helmholtz_diag(xi: &Point2D, h: f64, kappa: f64, b: &dyn Fn(&Point2D) -> f64) -> Result<Complex64> {
    let bx = b(xi);
    if bx == 0.0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    Ok(Complex64::new(1.0, 0.0) + helmholtz_self_integral(h, kappa)? * (kappa * kappa * bx))
}

/// Kernel configuration for one discretized problem.
#[derive(Clone, Debug)]
pub struct KernelSpec {
    kind: KernelKind,
    kappa: f64,
    h: f64,
    potential: Potential,
    // Cell self-integral, identical for every grid point.
    self_integral: Complex64,
}

impl KernelSpec {
    pub fn laplace(h: f64) -> Result<Self> {
        let d = laplace_diag(h)?;
        Ok(Self {
            kind: KernelKind::Laplace2D,
            kappa: 0.0,
            h,
            potential: Potential::Constant(1.0),
            self_integral: Complex64::new(d, 0.0),
        })
    }

    pub fn helmholtz(h: f64, kappa: f64, potential: Potential) -> Result<Self> {
        let s = helmholtz_self_integral(h, kappa)?;
        Ok(Self {
            kind: KernelKind::Helmholtz2D,
            kappa,
            h,
            potential,
            self_integral: s,
        })
    }

    /// Laplace or Gaussian-bump Helmholtz on an `n_side x n_side` grid.
    pub fn for_grid(kind: KernelKind, n_side: usize, kappa: f64) -> Result<Self> {
        let h = 1.0 / n_side as f64;
        match kind {
            KernelKind::Laplace2D => Self::laplace(h),
            KernelKind::Helmholtz2D => Self::helmholtz(h, kappa, Potential::GaussianBump),
        }
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn scalar_field(&self) -> ScalarField {
        match self.kind {
            KernelKind::Laplace2D => ScalarField::Real,
            KernelKind::Helmholtz2D => ScalarField::Complex,
        }
    }

    /// Default proxy count for a box of the given side length.
    pub fn default_n_proxy(&self, side_length: f64) -> usize {
        match self.kind {
            KernelKind::Laplace2D => 64,
            KernelKind::Helmholtz2D => 64.max((8.0 * self.kappa * side_length).ceil() as usize),
        }
    }

    /// Plane-wave right-hand side `-κ^2 sqrt(b(x)) e^{iκx}`.
    pub fn plane_wave_rhs(&self, points: &[Point2D]) -> Vec<Complex64> {
        let k = self.kappa;
        points
            .iter()
            .map(|p| Complex64::from_polar(1.0, k * p.x) * (-k * k * self.potential.eval(p).sqrt()))
            .collect()
    }
}

impl Kernel for KernelSpec {
    fn radial(&self, r: f64) -> Complex64 {
        let h2 = self.h * self.h;
        match self.kind {
            KernelKind::Laplace2D => Complex64::new(-h2 / (2.0 * PI) * r.ln(), 0.0),
            KernelKind::Helmholtz2D => I_QUARTER * hankel_h0(self.kappa * r) * (h2 * self.kappa * self.kappa),
        }
    }

    fn weight(&self, p: &Point2D) -> f64 {
        match self.kind {
            KernelKind::Laplace2D => 1.0,
            KernelKind::Helmholtz2D => self.potential.eval(p).sqrt(),
        }
    }

    fn diag(&self, p: &Point2D) -> Complex64 {
        match self.kind {
            KernelKind::Laplace2D => self.self_integral,
            KernelKind::Helmholtz2D => {
                let b = self.potential.eval(p);
                if b == 0.0 {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(1.0, 0.0) + self.self_integral * (self.kappa * self.kappa * b)
                }
            }
        }
    }

    fn is_real(&self) -> bool {
        self.kind == KernelKind::Laplace2D
    }

    fn default_n_proxy(&self, side_length: f64) -> usize {
        KernelSpec::default_n_proxy(self, side_length)
    }
}

/// Unit diagonal, zero off-diagonal.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityKernel;

impl Kernel for IdentityKernel {
    fn radial(&self, _r: f64) -> Complex64 {
        Complex64::new(0.0, 0.0)
    }
    fn diag(&self, _p: &Point2D) -> Complex64 {
        Complex64::new(1.0, 0.0)
    }
    fn is_real(&self) -> bool {
        true
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProxySurface {
    pub center: [f64; 2],
    pub radius: f64,
    pub points: Vec<Point2D>,
}

/// `n_proxy` equispaced points on the circle of radius `2.5 * side` around
/// the box center, starting at angle 0.
pub fn proxy_points(b: &BoxId, n_proxy: usize) -> ProxySurface {
    assert!(n_proxy >= 4, "need at least 4 proxy points");
    let center = b.center();
    let radius = PROXY_RADIUS_RATIO * b.side_length();
    let points = (0..n_proxy)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / n_proxy as f64;
            Point2D::new(center[0] + radius * t.cos(), center[1] + radius * t.sin(), k)
        })
        .collect();
    ProxySurface { center, radius, points }
}

/// Kernel matrix over a fixed point set, converted to scalar type `T`.
///
/// When the points form a uniform grid, off-diagonal entries come from a
/// table indexed by grid displacement, so `A[i,j]` and `A[j,i]` are computed
/// identically and the matrix is exactly symmetric.
#[derive(Clone, Debug)]
pub struct KernelMatrix<T> {
    kernel: Arc<dyn Kernel>,
    points: Vec<Point2D>,
    weights: Vec<f64>,
    diag: Vec<T>,
    cells: Vec<(usize, usize)>,
    n_side: usize,
    table: Vec<T>,
}

impl<T: Scalar> KernelMatrix<T> {
    /// `points` must carry global indices `0..N` (in any order).
    pub fn new(kernel: Arc<dyn Kernel>, points: &[Point2D]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        if !T::IS_COMPLEX && !kernel.is_real() {
            return Err(Error::InvalidKernel(
                "complex-valued kernel requires a complex scalar type".into(),
            ));
        }
        let n = points.len();
        let mut ordered = vec![None; n];
        for p in points {
            match ordered.get_mut(p.global_index) {
                Some(slot @ None) => *slot = Some(*p),
                _ => {
                    return Err(Error::InvalidKernel(format!(
                        "global indices must be a permutation of 0..{n}"
                    )))
                }
            }
        }
        let points: Vec<Point2D> = ordered.into_iter().map(Option::unwrap).collect();
        let weights = points.iter().map(|p| kernel.weight(p)).collect();
        let diag = points.iter().map(|p| T::from_c64(kernel.diag(p))).collect();

        let n_side = (n as f64).sqrt().round() as usize;
        let mut cells = Vec::new();
        let mut table = Vec::new();
        if n_side * n_side == n {
            let h = 1.0 / n_side as f64;
            let on_grid = points.iter().all(|p| {
                let i = (p.x * n_side as f64).floor();
                let j = (p.y * n_side as f64).floor();
                ((i + 0.5) * h - p.x).abs() < 1e-12 && ((j + 0.5) * h - p.y).abs() < 1e-12
            });
            if on_grid {
                cells = points
                    .iter()
                    .map(|p| {
                        (
                            (p.x * n_side as f64).floor() as usize,
                            (p.y * n_side as f64).floor() as usize,
                        )
                    })
                    .collect();
                table = Vec::with_capacity(n);
                for dj in 0..n_side {
                    for di in 0..n_side {
                        let v = if di == 0 && dj == 0 {
                            T::zero()
                        } else {
                            let r = h * ((di * di + dj * dj) as f64).sqrt();
                            T::from_c64(kernel.radial(r))
                        };
                        table.push(v);
                    }
                }
            }
        }

        Ok(Self {
            kernel,
            points,
            weights,
            diag,
            cells,
            n_side,
            table,
        })
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[Point2D] {
        &self.points
    }

    pub fn kernel(&self) -> &dyn Kernel {
        self.kernel.as_ref()
    }

    pub fn entry(&self, i: usize, j: usize) -> T {
        if i == j {
            return self.diag[i];
        }
        let w = T::from_real(<T::Real as crate::scalar::RealScalar>::of(
            self.weights[i] * self.weights[j],
        ));
        if self.table.is_empty() {
            let g = self.kernel.radial(self.points[i].dist(&self.points[j]));
            return T::from_c64(g) * w;
        }
        let (xi, yi) = self.cells[i];
        let (xj, yj) = self.cells[j];
        self.table[yi.abs_diff(yj) * self.n_side + xi.abs_diff(xj)] * w
    }

    /// Dense block `A[rows, cols]`.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> Matrix<T> {
        Matrix::from_fn(rows.len(), cols.len(), |a, b| self.entry(rows[a], cols[b]))
    }

    /// `K[proxy, cols]` with entries `g(|y - x_j|) w(x_j)`.
    pub fn proxy_block(&self, proxy: &[Point2D], cols: &[usize]) -> Matrix<T> {
        let mut m = Matrix::zeros(proxy.len(), cols.len());
        for (b, &j) in cols.iter().enumerate() {
            let pj = &self.points[j];
            let wj = self.weights[j];
            for (a, y) in proxy.iter().enumerate() {
                m[(a, b)] = T::from_c64(self.kernel.radial(y.dist(pj)) * wj);
            }
        }
        m
    }

    /// The full `N x N` matrix; test and oracle use only.
    pub fn dense(&self) -> Matrix<T> {
        let idx: Vec<usize> = (0..self.n()).collect();
        self.block(&idx, &idx)
    }
}

/// Dense block of `spec` over the given points; the diagonal rule applies
/// where a row index equals a column index.
pub fn assemble_block<T: Scalar>(
    spec: &KernelSpec,
    rows: &[usize],
    cols: &[usize],
    points: &[Point2D],
) -> Result<Matrix<T>> {
    if !T::IS_COMPLEX && !spec.is_real() {
        return Err(Error::InvalidKernel(
            "complex-valued kernel requires a complex scalar type".into(),
        ));
    }
    let mut m = Matrix::zeros(rows.len(), cols.len());
    for (b, &j) in cols.iter().enumerate() {
        for (a, &i) in rows.iter().enumerate() {
            let v = if i == j {
                spec.diag(&points[i])
            } else {
                spec.offdiag(&points[i], &points[j])?
            };
            m[(a, b)] = T::from_c64(v);
        }
    }
    Ok(m)
}
