//! Data-free initialization of neural interception policies.
//!
//! The crate builds the full pipeline for an image-based visual-servoing
//! interceptor:
//!
//! - [`camera`]: normalized image coordinates, strapdown-to-gimbal conversion,
//!   image Jacobians.
//! - [`lyapunov`]: per-axis quadratic Lyapunov candidates and their
//!   derivatives `D` along the reduced dynamics.
//! - [`dataset`]: labelled datasets whose inputs make `D < 0` over the region
//!   of interest.
//! - [`policy`]: a small tanh network, backpropagation and supervised training.
//! - [`verify`]: dense sign checks of `D` under a trained policy.
//! - [`sim`]: closed-loop simulation of the interception.

pub mod camera;
pub mod dataset;
mod error;
pub mod io_util;
pub mod lyapunov;
pub mod policy;
pub mod sim;
pub mod verify;

pub use error::{Error, Result};
pub use lyapunov::{Axis, ControlInput, InterceptState, Interval, Roi};
pub use policy::{ClosedFormLaw, MlpParams, Policy};
