//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar the models and solvers are written against.
///
/// Implemented for `f32` and `f64`. Iterative solvers scale their stopping
/// criteria with [`Real::solver_tol`], so `f32` instances converge to a
/// looser residual than `f64` ones.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display {
    /// Absolute residual at which Newton-type iterations stop.
    fn solver_tol() -> Self;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f64 {
    fn solver_tol() -> f64 {
        1e-9
    }
}

impl Real for f32 {
    fn solver_tol() -> f32 {
        2e-3
    }
}
