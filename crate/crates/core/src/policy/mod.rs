//! Neural policies and the analytic reference law they imitate.

pub mod io;
pub mod mlp;
pub mod train;

use crate::dataset::{limit_input, solve_input_closed_form};
use crate::lyapunov::{Axis, InterceptState, Interval};

pub use mlp::{Affine, Dense, InputScaler, MlpParams, DEFAULT_LAYER_SIZES, INPUT_DIM};
pub use train::{evaluate, train, EpochStats, Optimizer, TrainConfig, TrainReport};

/// A lateral velocity command law for one image axis.
pub trait Policy: Sync {
    fn command(&self, axis: Axis, state: &InterceptState) -> f64;
}

impl Policy for MlpParams {
    fn command(&self, axis: Axis, state: &InterceptState) -> f64 {
        self.forward([state.coord(axis), state.vz, state.cz])
    }
}

impl<F> Policy for F
where
    F: Fn(Axis, &InterceptState) -> f64 + Sync,
{
    fn command(&self, axis: Axis, state: &InterceptState) -> f64 {
        self(axis, state)
    }
}

/// The exact decrease law `D = -eta * W`, optionally clipped to input bounds.
/// On the degenerate line it returns the limit input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormLaw {
    pub eta: f64,
    pub bounds: Option<Interval>,
}

impl Policy for ClosedFormLaw {
    fn command(&self, axis: Axis, state: &InterceptState) -> f64 {
        let u = solve_input_closed_form(axis, state, self.eta)
            .unwrap_or_else(|_| limit_input(axis, state));
        match self.bounds {
            Some(b) => b.clamp(u),
            None => u,
        }
    }
}
