//! Feudal hierarchical reinforcement learning with a goal space that is
//! partitioned into boxes and refined by reachability analysis of a learned
//! forward model.
//!
//! The crate is `no_std` (with `alloc`). File formats, plotting and the
//! command-line driver live in the `gara` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod agents;
pub mod encoding;
pub mod error;
pub mod forward_model;
pub mod interval;
pub mod maze;
pub mod mlp;
pub mod partition;
pub mod reward;
pub mod trainer;

pub use error::{Error, Result};
pub use interval::IntervalBox;
pub use mlp::Mlp;
pub use partition::{GoalRegion, GoalSpace, ReachVerdict, RegionId};
