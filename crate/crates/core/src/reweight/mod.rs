//! Dynamic per-type loss weighting driven by convergence slopes.
//!
//! Each degradation type contributes a loss stream. The scheduler normalizes
//! every stream by its first value, fits a least-squares slope over a sliding
//! window, and turns the slopes into weights through two softmax scores:
//!
//! * the balance score favours types whose loss is falling slowest;
//! * the stability score penalises types whose slope is positive relative to
//!   their own recent history.
//!
//! An adaptivity factor in `[0, 1]` blends the two. It sits at 1 while every
//! type keeps converging and drops once the largest slope turns upward.

mod scheduler;
mod scores;
pub mod trace;
mod window;

pub use scheduler::{
    Scheduler, SchedulerConfig, StepOutcome, WeightVector, DEFAULT_TAU, DEFAULT_WARMUP_MIN_POINTS,
    DEFAULT_WINDOW_SIZE,
};
pub use scores::{combine_loss, compute_tbs, compute_tss, compute_weights, AdaptivityFactor};
pub use window::{estimate_slope, SlopeEstimate, TypeLossWindow};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReweightError {
    #[error("type {type_id} at step {step}: raw loss {value} must be finite and positive")]
    InvalidLoss {
        type_id: usize,
        step: u64,
        value: f64,
    },
    #[error("type id {type_id} out of range for {num_types} types")]
    UnknownType { type_id: usize, num_types: usize },
    #[error("type {type_id}: observation index {index} does not follow {last}")]
    NonIncreasingIndex {
        type_id: usize,
        last: u64,
        index: u64,
    },
    #[error("slope needs at least two observations, got {0}")]
    TooFewPoints(usize),
    #[error("slope undefined: all observation indices are equal")]
    DegenerateIndices,
    #[error("expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("adaptivity factor {0} outside [0, 1]")]
    InvalidAdaptivity(f64),
    #[error("invalid scheduler config: {0}")]
    InvalidConfig(String),
}
