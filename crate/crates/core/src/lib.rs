//! Fail-safe flight of a quadcopter that has lost one or two propellers.
//!
//! The vehicle is flown in a steady spin about a tilted primary axis. This
//! crate holds the plant model, the periodic-equilibrium solver, LQR
//! synthesis, runtime control laws, estimation, failure detection and the
//! identification fits. Everything is generic over [`Real`]; the aliases
//! below pin the common `f64` and `f32` instances.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod detect;
pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod estimation;
pub mod lqr;
pub mod real;
pub mod sysid;

pub use dynamics::{BodyWrench, MotorMask, MotorSet, QuadParams, RigidState};
pub use equilibrium::{Architecture, Equilibrium, FailureConfig};
pub use error::{Error, Result};
pub use real::Real;

pub type Params = QuadParams<f64>;
pub type State = RigidState<f64>;
pub type Motors = MotorSet<f64>;
pub type SpinEquilibrium = Equilibrium<f64>;
pub type Failure = FailureConfig<f64>;
pub type Controller = control::ControllerConfig<f64>;
pub type Linear = lqr::LinearModel<f64>;

pub type Params32 = QuadParams<f32>;
pub type State32 = RigidState<f32>;
pub type SpinEquilibrium32 = Equilibrium<f32>;
