//! Masked discrete diffusion trajectory planning with anchor-based safety repair.
//!
//! Trajectories are quantized onto a uniform 1D codebook and generated by a
//! masked discrete diffusion sampler. An external rule-based scorer locates the
//! earliest unsafe waypoint, a local search over the token lattice picks a safe
//! replacement pair, and the sampler inpaints the rest of the trajectory around
//! the accumulated anchors.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, configuration and
//! the command-line harness live in the `anchorplan` crate.

#![no_std]
// The `num_traits::Float` imports carry `allow(unused_imports)`: whenever std
// is somewhere in the build graph (tests, or a dependency built with its std
// feature) f64's inherent math methods shadow them.

extern crate alloc;

pub mod codebook;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod reflect;
pub mod rng;
pub mod scene;
pub mod scoring;

pub use codebook::{Codebook, ContinuousTrajectory, Token, TokenPair, TokenTrajectory};
pub use error::{Error, Result};
pub use geometry::{ConvexPolygon, OrientedBox, Vec2};
pub use scene::{Agent, AgentFutureMode, AgentKind, EgoState, Route, ScenarioKind, Scene, TurnLabel};
