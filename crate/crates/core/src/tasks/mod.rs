//! The eight task generators.
//!
//! A task is fully described by an [`EnvConfig`]: block and goal poses are the
//! cylindrical `pose_cyl` variables, sizes and masses are per-object
//! variables, and the generator-specific variables (`goal_height`,
//! `tower_dims`, `num_blocks`) select the structure. [`TaskInstance`] is the
//! geometric view derived from a configuration.
//!
//! Each family keeps its goals inside the family: an intervention that would
//! lift a pushing goal off the floor or change the number of blocks of a
//! fixed-count family is suppressed rather than applied.

mod layout;
mod rules;
mod sampling;

pub use layout::{
    default_num_blocks, family_config, obstacles, tower_counts, MAX_BLOCKS, OBSTACLE_SIZE,
};
pub use rules::{check_feasibility, complete_intervention, prepare_intervention, validate_config, Phase};
pub use sampling::{sample_all, sample_groups, sample_variables, FamilySample, SampledValue, VariableGroup};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::PhysicsConstants;
use crate::geometry::{Cuboid, GoalShape, Pose};
use crate::math::{cyl_to_cart, quat_from_yaw, rng_for};
use crate::param_space::{instance_id, Catalog, EnvConfig, Intervention, Outcome, Space};
use crate::{Error, Result};

/// Seconds of episode time granted per block.
pub const SECONDS_PER_BLOCK: u64 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Pushing,
    Picking,
    PickAndPlace,
    Stacking2,
    Towers,
    StackedBlocks,
    CreativeStackedBlocks,
    General,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::Pushing,
        Family::Picking,
        Family::PickAndPlace,
        Family::Stacking2,
        Family::Towers,
        Family::StackedBlocks,
        Family::CreativeStackedBlocks,
        Family::General,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Pushing => "pushing",
            Family::Picking => "picking",
            Family::PickAndPlace => "pick_and_place",
            Family::Stacking2 => "stacking2",
            Family::Towers => "towers",
            Family::StackedBlocks => "stacked_blocks",
            Family::CreativeStackedBlocks => "creative_stacked_blocks",
            Family::General => "general",
        }
    }

    /// Block count for families whose count never changes.
    pub fn fixed_block_count(self) -> Option<usize> {
        match self {
            Family::Pushing | Family::Picking | Family::PickAndPlace => Some(1),
            Family::Stacking2 => Some(2),
            _ => None,
        }
    }

    /// Whether `num_blocks` is a free variable of the family.
    pub fn free_block_count(self) -> bool {
        matches!(self, Family::StackedBlocks | Family::CreativeStackedBlocks | Family::General)
    }

    /// Families whose goal is a multi-part structure that moves as one.
    pub fn structured_goal(self) -> bool {
        !matches!(self, Family::Pushing | Family::Picking | Family::PickAndPlace)
    }

    pub fn has_dense_reward(self) -> bool {
        matches!(self, Family::Pushing | Family::Picking | Family::PickAndPlace | Family::Stacking2)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::UnknownFamily(s.to_string()))
    }
}

/// Generator-specific variables accepted by [`build_task`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_blocks: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tower_dims: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_height: Option<f64>,
}

/// Geometric view of a configured task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub family: Family,
    pub config: EnvConfig,
    /// Blocks at their configured initial poses.
    pub blocks: Vec<Cuboid>,
    pub obstacles: Vec<Cuboid>,
    pub goal: GoalShape,
    pub episode_limit_steps: u64,
}

impl TaskInstance {
    /// Derives the geometric task from a configuration.
    pub fn from_config(family: Family, config: &EnvConfig, constants: &PhysicsConstants) -> Result<Self> {
        let n = count(config, "block")?;
        let m = count(config, "goal")?;
        if n == 0 || m == 0 {
            return Err(Error::Config("a task needs at least one block and one goal part".into()));
        }
        let blocks = (0..n)
            .map(|i| {
                let mut c = Cuboid::new(
                    pose_from_cyl(require(config, &instance_id("block.pose_cyl", i))?),
                    vec3(require(config, &instance_id("block.size", i))?),
                    require(config, &instance_id("block.mass", i))?[0],
                );
                c.color = vec3(require(config, &instance_id("block.color", i))?);
                Ok(c)
            })
            .collect::<Result<Vec<_>>>()?;
        let parts = (0..m)
            .map(|j| {
                let mut c = Cuboid::goal(
                    pose_from_cyl(require(config, &instance_id("goal.pose_cyl", j))?),
                    vec3(require(config, &instance_id("goal.size", j))?),
                );
                c.color = vec3(require(config, &instance_id("goal.color", j))?);
                Ok(c)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut goal = GoalShape::new(parts);
        if family == Family::CreativeStackedBlocks {
            let last = m - 1;
            goal.imposed_mask = (0..m).map(|j| j == 0 || j == last).collect();
        }
        Ok(Self {
            family,
            config: config.clone(),
            blocks,
            obstacles: obstacles(family),
            goal,
            episode_limit_steps: episode_time_limit(n as u64, constants.control_rate_hz()),
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }
}

pub(crate) fn count(config: &EnvConfig, scope: &str) -> Result<usize> {
    let mut n = 0;
    while config.get(&format!("{scope}_{n}.size")).is_some() {
        n += 1;
    }
    Ok(n)
}

pub(crate) fn require<'a>(config: &'a EnvConfig, id: &str) -> Result<&'a [f64]> {
    config.get(id).ok_or_else(|| Error::Config(format!("missing variable `{id}`")))
}

pub(crate) fn vec3(v: &[f64]) -> [f64; 3] {
    [v[0], v[1], v[2]]
}

/// `(radius, azimuth, height, yaw)` to a pose.
pub fn pose_from_cyl(v: &[f64]) -> Pose {
    Pose::new(cyl_to_cart(v[0], v[1], v[2]), quat_from_yaw(v[3]))
}

/// `(radius, azimuth, height, yaw)` of an upright pose.
pub fn cyl_from_position(p: &crate::math::Vec3, yaw: f64) -> Vec<f64> {
    layout::cyl(p, yaw)
}

/// `num_blocks × 10 s × control rate`.
pub fn episode_time_limit(num_blocks: u64, control_rate_hz: u64) -> u64 {
    num_blocks * SECONDS_PER_BLOCK * control_rate_hz
}

/// Builds the family's default instance, adjusted by `params`.
pub fn build_task(family: Family, params: &TaskParams, seed: u64) -> Result<TaskInstance> {
    build_task_with(family, params, seed, &Catalog::shipped(), &PhysicsConstants::shipped())
}

pub fn build_task_with(
    family: Family,
    params: &TaskParams,
    seed: u64,
    catalog: &Catalog,
    constants: &PhysicsConstants,
) -> Result<TaskInstance> {
    let config = family_config(family, catalog, params, None, seed)?;
    TaskInstance::from_config(family, &config, constants)
}

/// A new goal of the same family with its pose drawn from `space`.
pub fn sample_goal(task: &TaskInstance, space: Space, seed: u64) -> Result<GoalShape> {
    let catalog = Catalog::shipped();
    let constants = PhysicsConstants::shipped();
    let mut rng = rng_for(seed, 0x90a1);
    let sample = sample_groups(task.family, &catalog, &constants, &task.config, &[VariableGroup::GoalPose], space, &mut rng)?;
    let mut config = task.config.clone();
    for (id, v) in &sample.intervention.assignments {
        config.set(id.clone(), v.clone());
    }
    Ok(TaskInstance::from_config(task.family, &config, &constants)?.goal)
}

/// Family check of an intervention applied at reset.
pub fn validate_intervention(task: &TaskInstance, iv: &Intervention) -> Result<Outcome<()>> {
    let catalog = Catalog::shipped();
    let constants = PhysicsConstants::shipped();
    Ok(match prepare_intervention(task.family, &catalog, &constants, &task.config, iv, Phase::Reset, 0)? {
        Outcome::Accepted(_) => Outcome::Accepted(()),
        Outcome::Rejected(r) => Outcome::Rejected(r),
    })
}
