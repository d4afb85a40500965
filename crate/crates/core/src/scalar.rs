//! Scalar abstraction shared by every numerical module.
//!
//! All matrices are complex (`Complex<T>`) with a real scalar `T` that is
//! either `f32` or `f64`. Tolerances quoted for double precision are scaled
//! to the working precision with [`Scalar::tol`].

use std::fmt::{Debug, LowerExp};

use nalgebra::{ComplexField, RealField};
use num_complex::Complex;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar the solver is generic over.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + LowerExp + Debug + Send + Sync
{
    /// Converts an `f64` constant.
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite constant")
    }

    fn from_count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("representable count")
    }

    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// Machine epsilon of the working precision.
    fn eps() -> Self {
        <Self as approx::AbsDiffEq>::default_epsilon()
    }

    /// Maps a tolerance calibrated for `f64` onto this precision.
    ///
    /// The scale is the square root of the epsilon ratio, so `f64` values
    /// pass through unchanged and `f32` tolerances grow by roughly `2e4`.
    fn tol(x: f64) -> Self {
        let ratio = (Self::eps().to_f64_lossy() / f64::EPSILON).sqrt();
        Self::lit(x * ratio)
    }

    fn absval(self) -> Self {
        <Self as ComplexField>::abs(self)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Complex number over the working scalar.
pub type Cx<T> = Complex<T>;

#[inline]
pub fn cx<T: Scalar>(re: T, im: T) -> Cx<T> {
    Complex::new(re, im)
}

#[inline]
pub fn re<T: Scalar>(x: T) -> Cx<T> {
    Complex::new(x, T::zero())
}

#[inline]
pub fn cabs<T: Scalar>(z: Cx<T>) -> T {
    z.re.hypot(z.im)
}

#[inline]
pub fn carg<T: Scalar>(z: Cx<T>) -> T {
    z.im.atan2(z.re)
}

#[inline]
pub fn cexp<T: Scalar>(z: Cx<T>) -> Cx<T> {
    ComplexField::exp(z)
}

#[inline]
pub fn cln<T: Scalar>(z: Cx<T>) -> Cx<T> {
    cx(cabs(z).ln(), carg(z))
}

#[inline]
pub fn cpowi<T: Scalar>(z: Cx<T>, n: usize) -> Cx<T> {
    let mut acc = re(T::one());
    for _ in 0..n {
        acc *= z;
    }
    acc
}

/// Unit-modulus point `exp(i phi)`.
#[inline]
pub fn cis<T: Scalar>(phi: T) -> Cx<T> {
    cx(phi.cos(), phi.sin())
}
