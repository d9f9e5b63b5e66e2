//! Scalar abstraction shared by every numerical routine in the crate.
//!
//! The factorization only needs field arithmetic, conjugation and a modulus, so
//! it is written once against [`Scalar`] and instantiated for `f32`, `f64`,
//! `Complex<f32>` and `Complex<f64>`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::Neg;

use num_complex::{Complex, Complex64};
use num_traits::{Float, FromPrimitive, NumAssign, One, ToPrimitive, Zero};

/// Real floating point type underlying a [`Scalar`].
pub trait RealScalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`.
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite real")
    }
}

impl RealScalar for f32 {}
impl RealScalar for f64 {}

/// Field element used for matrix entries: a real or complex floating point number.
pub trait Scalar:
    Copy + Clone + Debug + PartialEq + Default + Send + Sync + 'static + NumAssign + Neg<Output = Self> + Zero + One + Sum
{
    type Real: RealScalar;

    /// Number of real words needed to transmit one value.
    const WORDS: usize;
    const IS_COMPLEX: bool;

    fn from_real(r: Self::Real) -> Self;

    /// Conversion from a complex double. Real scalars drop the imaginary part.
    fn from_c64(z: Complex64) -> Self;

    fn to_c64(self) -> Complex64;

    fn conj(self) -> Self;

    /// Squared modulus `|z|^2`.
    fn abs_sqr(self) -> Self::Real;

    fn abs(self) -> Self::Real;

    fn re(self) -> Self::Real;

    fn scale(self, r: Self::Real) -> Self;

    /// Raw IEEE bit pattern, used for bitwise reproducibility checks.
    fn bit_pattern(self) -> u128;

    fn from_f64(x: f64) -> Self {
        Self::from_real(Self::Real::of(x))
    }
}

impl Scalar for f32 {
    type Real = f32;
    const WORDS: usize = 1;
    const IS_COMPLEX: bool = false;

    fn from_real(r: f32) -> Self {
        r
    }
    fn from_c64(z: Complex64) -> Self {
        z.re as f32
    }
    fn to_c64(self) -> Complex64 {
        Complex64::new(self as f64, 0.0)
    }
    fn conj(self) -> Self {
        self
    }
    fn abs_sqr(self) -> f32 {
        self * self
    }
    fn abs(self) -> f32 {
        f32::abs(self)
    }
    fn re(self) -> f32 {
        self
    }
    fn scale(self, r: f32) -> Self {
        self * r
    }
    fn bit_pattern(self) -> u128 {
        self.to_bits() as u128
    }
}

impl Scalar for f64 {
    type Real = f64;
    const WORDS: usize = 1;
    const IS_COMPLEX: bool = false;

    fn from_real(r: f64) -> Self {
        r
    }
    fn from_c64(z: Complex64) -> Self {
        z.re
    }
    fn to_c64(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }
    fn conj(self) -> Self {
        self
    }
    fn abs_sqr(self) -> f64 {
        self * self
    }
    fn abs(self) -> f64 {
        f64::abs(self)
    }
    fn re(self) -> f64 {
        self
    }
    fn scale(self, r: f64) -> Self {
        self * r
    }
    fn bit_pattern(self) -> u128 {
        self.to_bits() as u128
    }
}

impl<R: RealScalar> Scalar for Complex<R> {
    type Real = R;
    const WORDS: usize = 2;
    const IS_COMPLEX: bool = true;

    fn from_real(r: R) -> Self {
        Complex::new(r, R::zero())
    }
    fn from_c64(z: Complex64) -> Self {
        Complex::new(R::of(z.re), R::of(z.im))
    }
    fn to_c64(self) -> Complex64 {
        Complex64::new(self.re.as_f64(), self.im.as_f64())
    }
    fn conj(self) -> Self {
        Complex::conj(&self)
    }
    fn abs_sqr(self) -> R {
        self.norm_sqr()
    }
    fn abs(self) -> R {
        self.norm()
    }
    fn re(self) -> R {
        self.re
    }
    fn scale(self, r: R) -> Self {
        Complex::new(self.re * r, self.im * r)
    }
    fn bit_pattern(self) -> u128 {
        let re = self.re.as_f64().to_bits() as u128;
        let im = self.im.as_f64().to_bits() as u128;
        (re << 64) | im
    }
}
