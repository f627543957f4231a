//! Intervention handling: structural rebuilds, derived variables, family
//! constraints and physical feasibility.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::layout::{cyl, family_config, obstacles, stack_supported, tower_counts, tower_parts, wrap, MAX_BLOCKS};
use super::{count, require, vec3, Family, TaskParams};
use crate::dynamics::contacts::{box_penetration, sphere_box, BoxGeom};
use crate::dynamics::{forward_kinematics, PhysicsConstants};
use crate::geometry::Cuboid;
use crate::math::{cyl_to_cart, quat_from_yaw, Vec3};
use crate::param_space::{
    instance_id, split_id, Catalog, EnvConfig, Intervention, Outcome, RejectReason, Rejection, Scope, Space,
};
use crate::{Error, Result};

const TOL: f64 = 1e-6;
/// Allowed interpenetration of goal parts that were placed by settling.
const GOAL_PENETRATION: f64 = 2e-3;
/// Clearance added to blocks lifted by a mid-episode size change.
const MID_EPISODE_LIFT: f64 = 0.001;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Reset,
    MidEpisode,
}

fn reject<T>(reason: RejectReason, var: Option<&str>, detail: impl Into<String>) -> Outcome<T> {
    Outcome::Rejected(Rejection::new(reason, var.map(str::to_string), detail))
}

macro_rules! try_outcome {
    ($e:expr) => {
        match $e {
            Outcome::Accepted(v) => v,
            Outcome::Rejected(r) => return Ok(Outcome::Rejected(r)),
        }
    };
}

#[derive(Clone, Copy, Debug)]
struct Part {
    pos: Vec3,
    yaw: f64,
    size: [f64; 3],
}

impl Part {
    fn cuboid(&self) -> Cuboid {
        Cuboid::goal(crate::geometry::Pose::new(self.pos, quat_from_yaw(self.yaw)), self.size)
    }
}

fn parts(config: &EnvConfig, scope: &str) -> Result<Vec<Part>> {
    (0..count(config, scope)?)
        .map(|i| {
            let v = require(config, &format!("{scope}_{i}.pose_cyl"))?;
            Ok(Part {
                pos: cyl_to_cart(v[0], v[1], v[2]),
                yaw: v[3],
                size: vec3(require(config, &format!("{scope}_{i}.size"))?),
            })
        })
        .collect()
}

fn set_pose(config: &mut EnvConfig, scope: &str, i: usize, pos: &Vec3, yaw: f64) {
    config.set(format!("{scope}_{i}.pose_cyl"), cyl(pos, yaw));
}

fn assigned(iv: &Intervention, template: &str) -> BTreeSet<usize> {
    iv.assignments
        .keys()
        .filter_map(|id| match split_id(id) {
            (t, Some(i)) if t == template => Some(i),
            _ => None,
        })
        .collect()
}

/// The block size an intervention asks for; every block shares it and
/// goal parts mirror it.
fn target_size(iv: &Intervention, current: [f64; 3]) -> Outcome<[f64; 3]> {
    let mut target: Option<(&str, &[f64])> = None;
    for (id, v) in &iv.assignments {
        if split_id(id).0 != "block.size" || v.len() != 3 {
            continue;
        }
        match target {
            Some((_, t)) if t != v.as_slice() => {
                return reject(RejectReason::FamilyConstraint, Some(id), "all blocks share one size")
            }
            _ => target = Some((id, v)),
        }
    }
    let size = target.map_or(current, |(_, v)| vec3(v));
    for (id, v) in &iv.assignments {
        if split_id(id).0 == "goal.size" && v.as_slice() != size.as_slice() {
            return reject(RejectReason::FamilyConstraint, Some(id), "goal parts mirror the block size");
        }
    }
    Outcome::Accepted(size)
}

fn check_shapes(catalog: &Catalog, iv: &Intervention) -> Result<()> {
    for (id, v) in &iv.assignments {
        catalog.in_physical_range(None, id, v)?;
    }
    Ok(())
}

fn in_union(catalog: &Catalog, id: &str, v: &[f64]) -> Result<Outcome<()>> {
    Ok(if catalog.membership_in(None, id, v, Space::Union)? {
        Outcome::Accepted(())
    } else {
        reject(RejectReason::OutOfRange, Some(id), format!("{v:?} lies outside A|B"))
    })
}

/// Block count a family ends up with after `iv`.
fn target_count(
    family: Family,
    catalog: &Catalog,
    base: &EnvConfig,
    iv: &Intervention,
    size: &[f64; 3],
) -> Result<Outcome<usize>> {
    let current = count(base, "block")?;
    let requested = match iv.assignments.get("num_blocks") {
        Some(v) => {
            try_outcome!(in_union(catalog, "num_blocks", v)?);
            Some(v[0] as usize)
        }
        None => None,
    };
    let n = match family {
        Family::Towers => {
            let dims = match iv.assignments.get("tower_dims") {
                Some(v) => {
                    try_outcome!(in_union(catalog, "tower_dims", v)?);
                    vec3(v)
                }
                None => vec3(require(base, "tower_dims")?),
            };
            let c = tower_counts(&dims, size);
            c[0] * c[1] * c[2]
        }
        f if f.free_block_count() => requested.unwrap_or(current),
        f => f.fixed_block_count().expect("fixed count"),
    };
    if let Some(k) = requested {
        if k != n {
            return Ok(reject(
                RejectReason::FamilyConstraint,
                Some("num_blocks"),
                format!("{family} needs {n} blocks here, not {k}"),
            ));
        }
    }
    if n == 0 || n > MAX_BLOCKS {
        return Ok(reject(
            RejectReason::FamilyConstraint,
            Some("num_blocks"),
            format!("{n} blocks; tasks use 1 to {MAX_BLOCKS}"),
        ));
    }
    Ok(Outcome::Accepted(n))
}

fn rebuild(
    family: Family,
    catalog: &Catalog,
    base: &EnvConfig,
    iv: &Intervention,
    n: usize,
    size: [f64; 3],
    seed: u64,
) -> Result<Outcome<EnvConfig>> {
    let params = TaskParams {
        num_blocks: family.free_block_count().then_some(n),
        tower_dims: (family == Family::Towers)
            .then(|| iv.assignments.get("tower_dims").map(|v| vec3(v)).or(base.get("tower_dims").map(vec3)))
            .flatten(),
        goal_height: (family == Family::Picking).then(|| base.scalar("goal_height")).flatten(),
    };
    let mut cfg = match family_config(family, catalog, &params, Some(size), seed) {
        Ok(c) => c,
        Err(Error::TaskParams(msg)) => return Ok(reject(RejectReason::FamilyConstraint, None, msg)),
        Err(e) => return Err(e),
    };
    for (id, v) in &base.values {
        let spec = catalog.spec(id)?;
        let (template, _) = split_id(id);
        let keep = match spec.scope {
            Scope::Global => !spec.structural,
            Scope::Link => true,
            Scope::Block => template == "block.mass" || template == "block.color",
            Scope::Goal => template == "goal.color",
        };
        if keep && cfg.values.contains_key(id) {
            cfg.set(id.clone(), v.clone());
        }
    }
    Ok(Outcome::Accepted(cfg))
}

/// Applies `iv` to `base` under the family's rules.
///
/// Shape errors (unknown ids, wrong dimensionality, non-finite values) are
/// errors; everything else that cannot be honoured is a rejection with the
/// configuration left as it was.
pub fn prepare_intervention(
    family: Family,
    catalog: &Catalog,
    constants: &PhysicsConstants,
    base: &EnvConfig,
    iv: &Intervention,
    phase: Phase,
    seed: u64,
) -> Result<Outcome<EnvConfig>> {
    check_shapes(catalog, iv)?;
    let current_size = vec3(require(base, "block_0.size")?);
    let size = try_outcome!(target_size(iv, current_size));
    let n = try_outcome!(target_count(family, catalog, base, iv, &size)?);

    let structural = n != count(base, "block")?;
    let start = if structural {
        if phase == Phase::MidEpisode {
            return Ok(reject(
                RejectReason::StructuralMidEpisode,
                Some("num_blocks"),
                "the number of objects changes only at reset",
            ));
        }
        try_outcome!(rebuild(family, catalog, base, iv, n, size, seed)?)
    } else {
        base.clone()
    };
    // Shared sizes were folded into the rebuild; drop copies for objects
    // that no longer exist.
    let mut iv = iv.clone();
    iv.assignments.retain(|id, _| {
        let t = split_id(id).0;
        !(structural && (t == "block.size" || t == "goal.size") && !start.values.contains_key(id))
    });
    let iv = &iv;
    let applied = try_outcome!(catalog.apply_intervention(&start, iv)?);
    let next = try_outcome!(complete_intervention(family, catalog, &start, applied, iv, phase)?);
    try_outcome!(validate_config(family, &next)?);
    try_outcome!(check_feasibility(family, constants, &next)?);
    Ok(Outcome::Accepted(next))
}

fn goal_anchor(goals: &[Part]) -> (Vec3, f64) {
    let zmin = goals.iter().map(|p| p.pos.z).fold(f64::INFINITY, f64::min);
    let base: Vec<&Part> = goals.iter().filter(|p| p.pos.z <= zmin + TOL).collect();
    let c = base.iter().fold(Vec3::zeros(), |a, p| a + p.pos) / base.len() as f64;
    (Vec3::new(c.x, c.y, 0.0), goals[0].yaw)
}

/// Re-derives the variables that depend on an intervention: shared sizes,
/// resting heights, the goal structure and the picking height.
///
/// `prev` is the configuration before `iv`; `next` has the explicit
/// assignments applied already.
pub fn complete_intervention(
    family: Family,
    catalog: &Catalog,
    prev: &EnvConfig,
    mut next: EnvConfig,
    iv: &Intervention,
    phase: Phase,
) -> Result<Outcome<EnvConfig>> {
    let old = vec3(require(prev, "block_0.size")?);
    let new = try_outcome!(target_size(iv, old));
    let n = count(&next, "block")?;
    let m = count(&next, "goal")?;
    for i in 0..n {
        next.set(instance_id("block.size", i), new.to_vec());
    }
    for j in 0..m {
        next.set(instance_id("goal.size", j), new.to_vec());
    }
    let resized = new != old;
    let posed_blocks = assigned(iv, "block.pose_cyl");
    let posed_goals = assigned(iv, "goal.pose_cyl");

    if resized {
        let (h_old, h_new) = (0.5 * old[2], 0.5 * new[2]);
        for (i, b) in parts(prev, "block")?.iter().enumerate().take(n) {
            if posed_blocks.contains(&i) {
                continue;
            }
            let mut z = if (b.pos.z - h_old).abs() < 1e-3 { h_new } else { b.pos.z * new[2] / old[2] };
            if phase == Phase::MidEpisode {
                z += MID_EPISODE_LIFT;
            }
            set_pose(&mut next, "block", i, &Vec3::new(b.pos.x, b.pos.y, z), b.yaw);
        }
    }

    let prev_goals = parts(prev, "goal")?;
    if family.structured_goal() && prev_goals.len() == m {
        let (anchor, yaw) = goal_anchor(&prev_goals);
        let rot = quat_from_yaw(yaw);
        let structure: Vec<(Vec3, f64)> = if family == Family::Towers {
            let laid = tower_parts(&vec3(require(&next, "tower_dims")?), &new, &anchor, yaw);
            if laid.len() != m {
                return Ok(reject(
                    RejectReason::FamilyConstraint,
                    Some("tower_dims"),
                    "tower dimensions and block size disagree with the block count",
                ));
            }
            laid
        } else {
            prev_goals
                .iter()
                .map(|p| {
                    let local = rot.inverse() * (p.pos - anchor);
                    let scaled = Vec3::new(
                        local.x * new[0] / old[0],
                        local.y * new[1] / old[1],
                        local.z * new[2] / old[2],
                    );
                    (anchor + rot * scaled, p.yaw)
                })
                .collect()
        };
        let moved: Vec<(Vec3, f64)> = match posed_goals.iter().next() {
            Some(&j) if posed_goals.len() < m => {
                let v = require(&next, &instance_id("goal.pose_cyl", j))?;
                let (pj, yj) = (cyl_to_cart(v[0], v[1], v[2]), v[3]);
                let turn = quat_from_yaw(yj - structure[j].1);
                structure
                    .iter()
                    .map(|(p, y)| (pj + turn * (p - structure[j].0), y + yj - structure[j].1))
                    .collect()
            }
            _ => structure,
        };
        for (k, (p, y)) in moved.iter().enumerate() {
            if !posed_goals.contains(&k) {
                set_pose(&mut next, "goal", k, p, *y);
            }
        }
    } else if resized && !posed_goals.contains(&0) && family != Family::Picking {
        let g = parts(prev, "goal")?[0];
        set_pose(&mut next, "goal", 0, &Vec3::new(g.pos.x, g.pos.y, 0.5 * new[2]), g.yaw);
    }

    if family == Family::Picking {
        let z_goal = require(&next, "goal_0.pose_cyl")?[2];
        match (iv.assignments.get("goal_height"), posed_goals.contains(&0)) {
            (Some(h), true) if (h[0] - z_goal).abs() > TOL => {
                return Ok(reject(
                    RejectReason::FamilyConstraint,
                    Some("goal_height"),
                    "goal height and goal pose disagree",
                ))
            }
            (Some(h), false) => {
                let mut v = require(&next, "goal_0.pose_cyl")?.to_vec();
                v[2] = h[0];
                next.set("goal_0.pose_cyl", v);
            }
            (_, true) => {
                try_outcome!(in_union(catalog, "goal_height", &[z_goal])?);
                next.set("goal_height", vec![z_goal]);
            }
            _ => {}
        }
    }
    Ok(Outcome::Accepted(next))
}

fn same_yaw(a: f64, b: f64) -> bool {
    wrap(a - b).abs() < TOL
}

fn family_violation(detail: impl Into<String>) -> Result<Outcome<()>> {
    Ok(reject(RejectReason::FamilyConstraint, None, detail))
}

/// Checks the constraints that keep a configuration inside its family.
pub fn validate_config(family: Family, config: &EnvConfig) -> Result<Outcome<()>> {
    let blocks = parts(config, "block")?;
    let goals = parts(config, "goal")?;
    let (n, m) = (blocks.len(), goals.len());
    if n == 0 || m == 0 {
        return family_violation("a task needs at least one block and one goal part");
    }
    if config.scalar("num_blocks") != Some(n as f64) {
        return family_violation(format!("`num_blocks` does not match the {n} blocks present"));
    }
    let s = blocks[0].size;
    if blocks.iter().chain(&goals).any(|p| p.size != s) {
        return family_violation("blocks and goal parts share one size");
    }
    if let Some(k) = family.fixed_block_count() {
        if n != k {
            return family_violation(format!("{family} uses {k} blocks"));
        }
    }
    if family.structured_goal() && m != n {
        return family_violation("the goal has one part per block");
    }
    let h = 0.5 * s[2];
    let on_floor = |p: &Part| (p.pos.z - h).abs() < TOL;
    match family {
        Family::Pushing if !on_floor(&goals[0]) => family_violation("pushing goals rest on the floor"),
        Family::Picking if goals[0].pos.z <= h + TOL => family_violation("picking goals are lifted"),
        Family::Picking if config.scalar("goal_height").is_none_or(|g| (g - goals[0].pos.z).abs() > TOL) => {
            family_violation("goal height and goal pose disagree")
        }
        Family::PickAndPlace => {
            if !on_floor(&goals[0]) {
                return family_violation("pick-and-place goals rest on the floor");
            }
            if blocks[0].pos.y * goals[0].pos.y >= 0.0 {
                return family_violation("block and goal start on opposite sides of the obstacle");
            }
            let obstacle = BoxGeom::from(&obstacles(family)[0]);
            if box_penetration(&BoxGeom::from(&goals[0].cuboid()), &obstacle) > 0.0 {
                return family_violation("the goal intersects the obstacle");
            }
            Ok(Outcome::Accepted(()))
        }
        Family::Stacking2 => {
            let (a, b) = (&goals[0], &goals[1]);
            let above = (b.pos - a.pos - Vec3::new(0.0, 0.0, s[2])).norm() < TOL;
            if on_floor(a) && above && same_yaw(a.yaw, b.yaw) {
                Ok(Outcome::Accepted(()))
            } else {
                family_violation("the second goal block sits squarely on the first")
            }
        }
        Family::Towers => {
            let dims = vec3(require(config, "tower_dims")?);
            let c = tower_counts(&dims, &s);
            if c[0] * c[1] * c[2] != n {
                return family_violation("tower dimensions do not match the block count");
            }
            let (anchor, yaw) = goal_anchor(&goals);
            let laid = tower_parts(&dims, &s, &anchor, yaw);
            let ok = laid
                .iter()
                .zip(&goals)
                .all(|((p, y), g)| (p - g.pos).norm() < TOL && same_yaw(*y, g.yaw));
            if ok {
                Ok(Outcome::Accepted(()))
            } else {
                family_violation("goal parts do not form the tower")
            }
        }
        Family::StackedBlocks | Family::CreativeStackedBlocks => {
            let yaw = goals[0].yaw;
            let levels = goals
                .iter()
                .enumerate()
                .all(|(j, g)| (g.pos.z - (h + j as f64 * s[2])).abs() < TOL && same_yaw(g.yaw, yaw));
            let local: Vec<Vec3> = goals
                .iter()
                .map(|g| quat_from_yaw(-yaw) * (g.pos - goals[0].pos))
                .collect();
            if levels && stack_supported(&local, &s) {
                Ok(Outcome::Accepted(()))
            } else {
                family_violation("goal parts form one supported level per block")
            }
        }
        Family::General => {
            if goals.iter().any(|g| g.pos.z < h - 1e-3) {
                return family_violation("goal parts lie below the floor");
            }
            let geoms: Vec<BoxGeom> = goals.iter().map(|g| BoxGeom::from(&g.cuboid())).collect();
            for a in 0..m {
                for b in a + 1..m {
                    if box_penetration(&geoms[a], &geoms[b]) > GOAL_PENETRATION {
                        return family_violation(format!("goal parts {a} and {b} interpenetrate"));
                    }
                }
            }
            Ok(Outcome::Accepted(()))
        }
        _ => Ok(Outcome::Accepted(())),
    }
}

/// Physical feasibility of a configuration: objects inside the stage, no
/// deep interpenetration, fingertips above the floor and outside blocks.
pub fn check_feasibility(family: Family, constants: &PhysicsConstants, config: &EnvConfig) -> Result<Outcome<()>> {
    let infeasible = |var: Option<String>, detail: String| Ok(Outcome::Rejected(Rejection::new(RejectReason::Infeasible, var, detail)));
    let blocks: Vec<Cuboid> = parts(config, "block")?.iter().map(Part::cuboid).collect();
    let goals: Vec<Cuboid> = parts(config, "goal")?.iter().map(Part::cuboid).collect();
    let rmax = constants.stage_radius + 1e-9;
    for (scope, set) in [("block", &blocks), ("goal", &goals)] {
        for (i, c) in set.iter().enumerate() {
            if c.corners().iter().any(|p| p.x.hypot(p.y) > rmax) {
                return infeasible(Some(instance_id(&format!("{scope}.pose_cyl"), i)), format!("{scope} {i} leaves the stage"));
            }
        }
    }
    let tol = constants.penetration_tolerance;
    let geoms: Vec<BoxGeom> = blocks.iter().map(BoxGeom::from).collect();
    let obstacle_geoms: Vec<BoxGeom> = obstacles(family).iter().map(BoxGeom::from).collect();
    for a in 0..geoms.len() {
        for b in a + 1..geoms.len() {
            if box_penetration(&geoms[a], &geoms[b]) > tol {
                return infeasible(None, format!("blocks {a} and {b} interpenetrate"));
            }
        }
        for o in &obstacle_geoms {
            if box_penetration(&geoms[a], o) > tol {
                return infeasible(Some(instance_id("block.pose_cyl", a)), format!("block {a} intersects the obstacle"));
            }
        }
    }
    if let Some(q) = config.get("joint_positions") {
        let q: [f64; 9] = std::array::from_fn(|i| q[i]);
        let r = constants.fingertip_radius;
        for (f, tip) in forward_kinematics(&constants.finger, &q).iter().enumerate() {
            let below = tip.z < r - tol;
            let inside = geoms.iter().any(|g| sphere_box(tip, r, g).is_some_and(|c| c.depth > tol));
            if below || inside {
                return infeasible(Some("joint_positions".into()), format!("fingertip {f} collides"));
            }
        }
    }
    Ok(Outcome::Accepted(()))
}
