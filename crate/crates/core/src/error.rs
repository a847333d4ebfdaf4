use crate::lyapunov::Axis;

/// Errors produced by the geometry, search, training and verification routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// The pitch correction `tan(atan(y) - pitch)` came too close to its pole.
    #[error("tangent singularity: corrected angle {angle} rad is within {margin} rad of pi/2")]
    Singularity { angle: f64, margin: f64 },

    #[error("degenerate state: {axis} image coordinate is zero, no input can make D negative")]
    DegenerateState { axis: Axis },

    #[error("no input in [{lo}, {hi}] gives D < 0 (best u = {best_u}, D = {best_d})")]
    Infeasible {
        lo: f64,
        hi: f64,
        best_u: f64,
        best_d: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("unsupported model version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },

    #[error("corrupt model file: {0}")]
    Corrupt(String),

    #[error("malformed dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
