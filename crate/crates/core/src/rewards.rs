//! Fractional success, its sparse binarization and the dense rewards of the
//! four basic families.
//!
//! Dense rewards are differences between two snapshots of the same episode.
//! Notation follows the usual one for these rewards: `e` fingertips, `o` block
//! centers, `g` goal centers, `v` joint velocities and
//! `d(o, e) = Σ_i ‖e_i − o‖`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{PhysicsConstants, WorldState};
use crate::geometry::{fractional_overlap_with, GoalShape, OverlapOptions};
use crate::math::Vec3;
use crate::tasks::Family;
use crate::{Error, Result};

pub const DEFAULT_SPARSE_THRESHOLD: f64 = 0.9;
/// Fingertip distance sum below which the stacking reward switches to the
/// second block.
pub const STACKING_REACH: f64 = 0.02;
/// Carrying height for pick-and-place while block and goal differ in height.
pub const PICK_AND_PLACE_LIFT: f64 = 0.15;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardType {
    /// The fractional success itself.
    #[default]
    Fractional,
    Sparse,
    Dense,
}

/// What the dense rewards need from one instant of an episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    pub fingertips: [[f64; 3]; 3],
    pub blocks: Vec<[f64; 3]>,
    pub joint_velocities: [f64; 9],
}

impl Snapshot {
    pub fn from_state(state: &WorldState, constants: &PhysicsConstants) -> Self {
        let tips = state.fingertips(constants);
        Self {
            time: state.time,
            fingertips: tips.map(|t| [t.x, t.y, t.z]),
            blocks: state
                .blocks
                .iter()
                .map(|b| {
                    let p = b.pose.position;
                    [p.x, p.y, p.z]
                })
                .collect(),
            joint_velocities: state.joint_velocities,
        }
    }

    fn block(&self, i: usize) -> Result<Vec3> {
        self.blocks
            .get(i)
            .map(|b| Vec3::from(*b))
            .ok_or_else(|| Error::Config(format!("snapshot has no block {i}")))
    }

    /// `d(o_i, e)`.
    fn reach(&self, i: usize) -> Result<f64> {
        let o = self.block(i)?;
        Ok(self.fingertips.iter().map(|e| (Vec3::from(*e) - o).norm()).sum())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardContext {
    pub family: Family,
    pub prev: Snapshot,
    pub curr: Snapshot,
    pub goals: Vec<[f64; 3]>,
    pub goal_sizes: Vec<[f64; 3]>,
}

impl RewardContext {
    fn goal(&self, j: usize) -> Result<Vec3> {
        self.goals
            .get(j)
            .map(|g| Vec3::from(*g))
            .ok_or_else(|| Error::Config(format!("reward context has no goal {j}")))
    }
}

pub fn fractional_success(state: &WorldState, goal: &GoalShape) -> Result<f64> {
    fractional_success_with(state, goal, &OverlapOptions::default())
}

pub fn fractional_success_with(state: &WorldState, goal: &GoalShape, opts: &OverlapOptions) -> Result<f64> {
    fractional_overlap_with(&state.block_cuboids(), goal, opts)
}

/// 1 when `fraction ≥ threshold`, else 0.
pub fn sparse_reward(fraction: f64, threshold: f64) -> f64 {
    if fraction >= threshold {
        1.0
    } else {
        0.0
    }
}

fn xy(v: &Vec3) -> Vec3 {
    Vec3::new(v.x, v.y, 0.0)
}

pub fn dense_reward(ctx: &RewardContext) -> Result<f64> {
    let (p, c) = (&ctx.prev, &ctx.curr);
    let dv = (0..9)
        .map(|k| (c.joint_velocities[k] - p.joint_velocities[k]).powi(2))
        .sum::<f64>()
        .sqrt();
    let reach = |i: usize| -> Result<f64> { Ok(c.reach(i)? - p.reach(i)?) };
    let g1 = ctx.goal(0)?;
    let (o1, o1p) = (c.block(0)?, p.block(0)?);
    match ctx.family {
        Family::Pushing => {
            let to_goal = (o1 - g1).norm() - (o1p - g1).norm();
            Ok(-750.0 * reach(0)? - 250.0 * to_goal)
        }
        Family::Picking => {
            let dz = (o1.z - g1.z).abs() - (o1p.z - g1.z).abs();
            let dxy = (xy(&o1) - xy(&g1)).norm() - (xy(&o1p) - xy(&g1)).norm();
            Ok(-750.0 * reach(0)? - 250.0 * dz - 125.0 * dxy - 0.005 * dv)
        }
        Family::PickAndPlace => {
            let half_goal = 0.5 * ctx.goal_sizes.first().map_or(0.0, |s| s[2]);
            let t = if (o1.z - g1.z).abs() > 1e-3 { PICK_AND_PLACE_LIFT } else { half_goal };
            let dxy = (xy(&o1) - xy(&g1)).norm() - (xy(&o1p) - xy(&g1)).norm();
            let lift = (o1.z - t).abs() - (o1p.z - t).abs();
            Ok(-750.0 * reach(0)? - 50.0 * dxy - 250.0 * lift - 0.005 * dv)
        }
        Family::Stacking2 => {
            let d = c.reach(0)?;
            let g2 = ctx.goal(1)?;
            let (o2, o2p) = (c.block(1)?, p.block(1)?);
            let mut r = 0.0;
            if d > STACKING_REACH {
                r += -750.0 * reach(0)? - 250.0 * ((o1 - g1).norm() - (o1p - g1).norm());
            }
            if d < STACKING_REACH {
                // Indices exactly as in the published row: the previous term
                // uses block 1.
                let lift = (o2.z - g2.z).abs() - (o1p.z - g2.z).abs();
                let above = if o2.z - g2.z > 0.0 { 1.0 } else { 0.0 };
                let dxy = (xy(&o2) - xy(&g2)).norm() - (xy(&o2p) - xy(&g2)).norm();
                r += -750.0 * reach(1)? - 250.0 * lift - above * 125.0 * dxy;
            }
            Ok(r - 0.005 * dv)
        }
        f => Err(Error::UnsupportedFamily(format!("{f} has no dense reward"))),
    }
}
