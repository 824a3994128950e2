//! Floating-point abstraction shared by the signal-processing and mixture code.
//!
//! Everything outside the autodiff tape is generic over [`Scalar`], which is
//! implemented for `f32` and `f64`. The training graph is fixed to `f64`.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use rustfft::FftNum;

pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + FftNum
    + Default
    + Sum
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant into this scalar type.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable")
    }

    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }

    /// Tolerance used by iterative kernels (Jacobi sweeps, Hermitian checks).
    fn kernel_tol() -> Self {
        Self::of(1e-12).max(Self::epsilon() * Self::of(8.0))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub(crate) fn czero<T: Scalar>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}
