use alloc::string::String;
use alloc::vec::Vec;

use crate::scene::ScenarioKind;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid codebook: {0}")]
    InvalidCodebook(&'static str),
    #[error("value {value} outside codebook range [-{half_range}, {half_range}]")]
    OutOfRange { value: f64, half_range: f64 },
    #[error("waypoint {index} ({axis}) = {value} outside codebook range")]
    WaypointOutOfRange { index: usize, axis: char, value: f64 },
    #[error("token {token} outside vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("token sequence length {0} is not a positive even number")]
    OddTokenCount(usize),
    #[error("trajectory needs at least {needed} waypoints, got {got}")]
    TrajectoryTooShort { needed: usize, got: usize },
    #[error("route needs at least two distinct points")]
    DegenerateRoute,
    #[error("goal ({x}, {y}) lies behind the ego vehicle")]
    InfeasibleGoal { x: f64, y: f64 },
    #[error("could not generate a solvable {kind:?} scene for seed {seed} after {attempts} attempts")]
    Generation { kind: ScenarioKind, seed: u64, attempts: usize },
    #[error("denoiser produced a non-finite logit at slot {slot}")]
    NonFiniteLogits { slot: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged in epoch {epoch}")]
    Diverged { epoch: usize, losses: Vec<f64> },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
