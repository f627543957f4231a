//! Intervention-parametrized block-manipulation environments.
//!
//! A simplified rigid-body world with a three-finger manipulator where goal
//! shapes must be built from blocks. Every environment variable is declared in
//! a [`param_space::Catalog`] with two disjoint value spaces (`A` for training,
//! `B` for out-of-distribution evaluation) and can be set at any time through
//! do-interventions. Success is measured uniformly for every task family as the
//! fractional volumetric overlap between the blocks and the goal shape.
//!
//! The crate is organised bottom-up:
//!
//! - [`param_space`]: variable catalog, interventions, configurations.
//! - [`geometry`]: poses, cuboids, exact box overlap and the voxel metric.
//! - [`dynamics`]: the deterministic rigid-body backend and finger kinematics.
//! - [`tasks`]: the eight task generators and their family constraints.
//! - [`rewards`]: fractional, sparse and dense rewards.
//! - [`env`]: reset / step / do-intervention lifecycle.
//! - [`curriculum`]: scheduled intervention actors.
//! - [`evaluation`]: the standard protocol suite and score aggregation.
//! - [`policies`]: scripted controllers used as oracles.
//! - [`harness`]: episode logs, replay verification and the wire protocol.

pub mod curriculum;
pub mod dynamics;
pub mod env;
mod error;
pub mod evaluation;
pub mod geometry;
pub mod harness;
pub mod math;
pub mod param_space;
pub mod policies;
pub mod rewards;
pub mod tasks;

pub use error::{Error, Result};

pub use dynamics::{ActionMode, PhysicsConstants, RobotCommand, WorldState};
pub use env::{Env, EnvOptions, Observation, StepResult};
pub use geometry::{Cuboid, GoalShape, Pose};
pub use param_space::{Catalog, EnvConfig, Intervention, Space};
pub use tasks::{Family, TaskInstance};
