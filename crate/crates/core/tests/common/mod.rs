#![allow(dead_code)]

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rskel::kernels::KernelSpec;
use rskel::{make_grid, KernelKind, KernelMatrix, QuadTree, Scalar};

pub fn laplace(n_side: usize, leaf: usize) -> (QuadTree, KernelMatrix<f64>) {
    problem(KernelKind::Laplace2D, n_side, leaf, 0.0)
}

pub fn helmholtz(n_side: usize, leaf: usize, kappa: f64) -> (QuadTree, KernelMatrix<Complex64>) {
    problem(KernelKind::Helmholtz2D, n_side, leaf, kappa)
}

pub fn problem<T: Scalar>(kind: KernelKind, n_side: usize, leaf: usize, kappa: f64) -> (QuadTree, KernelMatrix<T>) {
    let pts = make_grid(n_side).unwrap();
    let spec = KernelSpec::for_grid(kind, n_side, kappa).unwrap();
    let km = KernelMatrix::new(Arc::new(spec), &pts).unwrap();
    (QuadTree::build(pts, leaf).unwrap(), km)
}

/// Standard-uniform entries (real and imaginary parts for complex scalars).
pub fn uniform<T: Scalar>(n: usize, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let re: f64 = rng.gen();
            let im: f64 = if T::IS_COMPLEX { rng.gen() } else { 0.0 };
            T::from_c64(Complex64::new(re, im))
        })
        .collect()
}
