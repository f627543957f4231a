//! Family-aware sampling of variable groups from the A or B space.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layout::{general_parts, obstacles, stacked_parts, tower_counts, tower_parts, wrap};
use super::rules::{prepare_intervention, Phase};
use super::{count, pose_from_cyl, require, vec3, Family};
use crate::dynamics::contacts::{box_penetration, BoxGeom};
use crate::dynamics::PhysicsConstants;
use crate::geometry::Cuboid;
use crate::math::{cyl_to_cart, mix_seed, quat_from_yaw, rng_for, uniform, Vec3, PI};
use crate::param_space::{instance_id, split_id, Catalog, EnvConfig, Intervention, Outcome, Scope, Space};
use crate::{Error, Result};

const MAX_DRAWS: usize = 100;
/// Gap kept between sampled blocks.
const CLEARANCE: f64 = 0.002;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariableGroup {
    #[serde(rename = "bp")]
    BlockPose,
    #[serde(rename = "bm")]
    BlockMass,
    #[serde(rename = "bs")]
    BlockSize,
    #[serde(rename = "gp")]
    GoalPose,
    #[serde(rename = "ff")]
    FloorFriction,
}

impl VariableGroup {
    pub const ALL: [VariableGroup; 5] = [
        VariableGroup::BlockPose,
        VariableGroup::BlockMass,
        VariableGroup::BlockSize,
        VariableGroup::GoalPose,
        VariableGroup::FloorFriction,
    ];

    pub fn code(self) -> &'static str {
        match self {
            VariableGroup::BlockPose => "bp",
            VariableGroup::BlockMass => "bm",
            VariableGroup::BlockSize => "bs",
            VariableGroup::GoalPose => "gp",
            VariableGroup::FloorFriction => "ff",
        }
    }

    /// Order in which groups are drawn; later groups see earlier draws.
    fn rank(self) -> u8 {
        match self {
            VariableGroup::BlockSize => 0,
            VariableGroup::BlockPose => 1,
            VariableGroup::GoalPose => 2,
            VariableGroup::BlockMass => 3,
            VariableGroup::FloorFriction => 4,
        }
    }
}

impl fmt::Display for VariableGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for VariableGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariableGroup::ALL
            .into_iter()
            .find(|g| g.code() == s)
            .ok_or_else(|| Error::UnknownVariable(s.to_string()))
    }
}

/// One value drawn from a space, as recorded for audits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledValue {
    pub id: String,
    pub value: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FamilySample {
    pub intervention: Intervention,
    /// The draws behind the intervention. Derived values (mirrored goal
    /// sizes, the rest of a goal structure) are not listed.
    pub audit: Vec<SampledValue>,
}

impl FamilySample {
    fn assign(&mut self, cfg: &mut EnvConfig, id: String, value: Vec<f64>) {
        cfg.set(id.clone(), value.clone());
        self.intervention.assignments.insert(id, value);
    }

    fn record(&mut self, id: impl Into<String>, value: Vec<f64>) {
        self.audit.push(SampledValue { id: id.into(), value });
    }

    fn merge(&mut self, other: FamilySample) {
        self.intervention.merge(&other.intervention);
        self.audit.extend(other.audit);
    }
}

fn within_stage(c: &Cuboid, radius: f64) -> bool {
    c.corners().iter().all(|p| p.x.hypot(p.y) <= radius)
}

fn part_cuboid(v: &[f64], size: [f64; 3]) -> Cuboid {
    Cuboid::goal(pose_from_cyl(v), size)
}

/// Structure moved rigidly so that its first part lands on `target`.
fn place_structure(structure: &[(Vec3, f64)], target: &[f64]) -> Vec<Vec<f64>> {
    let (p0, y0) = structure[0];
    let q = cyl_to_cart(target[0], target[1], target[2]);
    let turn = quat_from_yaw(target[3] - y0);
    structure
        .iter()
        .map(|(p, y)| super::layout::cyl(&(q + turn * (p - p0)), y + target[3] - y0))
        .collect()
}

/// Draws `groups` for `family` from `space`, starting from `config`.
///
/// Groups are drawn in a fixed order (size, block poses, goal pose, masses,
/// friction) whatever order they are listed in.
pub fn sample_groups<R: Rng>(
    family: Family,
    catalog: &Catalog,
    constants: &PhysicsConstants,
    config: &EnvConfig,
    groups: &[VariableGroup],
    space: Space,
    rng: &mut R,
) -> Result<FamilySample> {
    let mut groups: Vec<VariableGroup> = groups.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    groups.sort_by_key(|g| g.rank());
    let mut cfg = config.clone();
    let mut out = FamilySample::default();
    let mut n = count(&cfg, "block")?;
    let mut m = count(&cfg, "goal")?;
    for g in groups {
        match g {
            VariableGroup::BlockSize => {
                let v = catalog.sample_value(Some(&cfg), "block_0.size", space, rng)?;
                out.record("block_0.size", v.clone());
                if family == Family::Towers {
                    // The size decides how many blocks fill the tower.
                    let c = tower_counts(&vec3(require(&cfg, "tower_dims")?), &vec3(&v));
                    n = c[0] * c[1] * c[2];
                    m = n;
                }
                for i in 0..n {
                    out.assign(&mut cfg, instance_id("block.size", i), v.clone());
                }
                for j in 0..m {
                    out.assign(&mut cfg, instance_id("goal.size", j), v.clone());
                }
            }
            VariableGroup::BlockPose => {
                for i in 0..n {
                    let v = sample_block_pose(family, catalog, constants, &cfg, i, space, rng)?;
                    out.record(instance_id("block.pose_cyl", i), v.clone());
                    out.assign(&mut cfg, instance_id("block.pose_cyl", i), v);
                }
            }
            VariableGroup::GoalPose => {
                let s = sample_goal_pose(family, catalog, constants, &cfg, space, rng)?;
                for (id, v) in &s.intervention.assignments {
                    cfg.set(id.clone(), v.clone());
                }
                out.merge(s);
            }
            VariableGroup::BlockMass => {
                for i in 0..n {
                    let id = instance_id("block.mass", i);
                    let v = catalog.sample_value(Some(&cfg), &id, space, rng)?;
                    out.record(id.clone(), v.clone());
                    out.assign(&mut cfg, id, v);
                }
            }
            VariableGroup::FloorFriction => {
                let v = catalog.sample_value(Some(&cfg), "floor_friction", space, rng)?;
                out.record("floor_friction", v.clone());
                out.assign(&mut cfg, "floor_friction".into(), v);
            }
        }
    }
    Ok(out)
}

fn sample_block_pose<R: Rng>(
    family: Family,
    catalog: &Catalog,
    constants: &PhysicsConstants,
    cfg: &EnvConfig,
    i: usize,
    space: Space,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let id = instance_id("block.pose_cyl", i);
    let size = vec3(require(cfg, &instance_id("block.size", i))?);
    let others: Vec<BoxGeom> = (0..i)
        .map(|k| Ok(BoxGeom::from(&part_cuboid(require(cfg, &instance_id("block.pose_cyl", k))?, size))))
        .collect::<Result<_>>()?;
    let walls: Vec<BoxGeom> = obstacles(family).iter().map(BoxGeom::from).collect();
    let goal_y = cfg.get("goal_0.pose_cyl").map(|g| cyl_to_cart(g[0], g[1], g[2]).y);
    let mut v = Vec::new();
    for _ in 0..MAX_DRAWS {
        v = catalog.sample_value(Some(cfg), &id, space, rng)?;
        v[2] = 0.5 * size[2];
        if family == Family::PickAndPlace {
            if let Some(gy) = goal_y {
                if cyl_to_cart(v[0], v[1], 0.0).y * gy > 0.0 {
                    v[1] = wrap(-v[1]);
                }
            }
        }
        let g = BoxGeom::from(&part_cuboid(&v, size));
        let clear = others.iter().chain(&walls).all(|o| box_penetration(&g, o) < -CLEARANCE);
        if clear && within_stage(&part_cuboid(&v, size), constants.stage_radius) {
            break;
        }
    }
    Ok(v)
}

fn sample_goal_pose<R: Rng>(
    family: Family,
    catalog: &Catalog,
    constants: &PhysicsConstants,
    cfg: &EnvConfig,
    space: Space,
    rng: &mut R,
) -> Result<FamilySample> {
    let mut out = FamilySample::default();
    let size = vec3(require(cfg, "block_0.size")?);
    let h = 0.5 * size[2];
    let m = count(cfg, "goal")?;
    let mut scratch = cfg.clone();
    match family {
        Family::Picking => {
            let gh = catalog.sample_value(Some(cfg), "goal_height", space, rng)?;
            let mut v = require(cfg, "goal_0.pose_cyl")?.to_vec();
            v[2] = gh[0];
            v[3] = uniform(rng, -PI, PI);
            out.record("goal_height", gh.clone());
            out.assign(&mut scratch, "goal_height".into(), gh);
            out.assign(&mut scratch, "goal_0.pose_cyl".into(), v);
        }
        Family::Pushing | Family::PickAndPlace => {
            let block_y = cfg.get("block_0.pose_cyl").map(|b| cyl_to_cart(b[0], b[1], b[2]).y);
            let walls: Vec<BoxGeom> = obstacles(family).iter().map(BoxGeom::from).collect();
            let mut v = Vec::new();
            for _ in 0..MAX_DRAWS {
                v = catalog.sample_value(Some(cfg), "goal_0.pose_cyl", space, rng)?;
                v[2] = h;
                if family == Family::PickAndPlace {
                    if let Some(by) = block_y {
                        if cyl_to_cart(v[0], v[1], 0.0).y * by > 0.0 {
                            v[1] = wrap(-v[1]);
                        }
                    }
                }
                let c = part_cuboid(&v, size);
                let g = BoxGeom::from(&c);
                let clear = walls.iter().all(|o| box_penetration(&g, o) < -CLEARANCE);
                if clear && within_stage(&c, constants.stage_radius) {
                    break;
                }
            }
            out.record("goal_0.pose_cyl", v.clone());
            out.assign(&mut scratch, "goal_0.pose_cyl".into(), v);
        }
        _ => {
            let mut placed = Vec::new();
            let mut target = Vec::new();
            for _ in 0..MAX_DRAWS {
                target = catalog.sample_value(Some(cfg), "goal_0.pose_cyl", space, rng)?;
                target[2] = h;
                let structure = match family {
                    Family::Stacking2 | Family::Towers => {
                        let dims = match family {
                            Family::Towers => vec3(require(cfg, "tower_dims")?),
                            _ => [size[0], size[1], 2.0 * size[2]],
                        };
                        tower_parts(&dims, &size, &Vec3::zeros(), 0.0)
                    }
                    Family::General => {
                        let mass = cfg.scalar("block_0.mass").unwrap_or(0.03);
                        general_parts(m, &size, mass, &Vec3::zeros(), rng.random(), constants)?
                    }
                    _ => stacked_parts(m, &size, &Vec3::zeros(), 0.0, rng),
                };
                if family != Family::Towers && structure.len() != m {
                    return Err(Error::Config("goal structure does not match the block count".into()));
                }
                placed = place_structure(&structure, &target);
                if placed.iter().all(|v| within_stage(&part_cuboid(v, size), constants.stage_radius)) {
                    break;
                }
            }
            out.record("goal_0.pose_cyl", target);
            for (j, v) in placed.into_iter().enumerate() {
                out.assign(&mut scratch, instance_id("goal.pose_cyl", j), v);
            }
        }
    }
    Ok(out)
}

/// Draws the named variables from `space`. Template ids such as
/// `block.mass` stand for every instance present in `config`.
pub fn sample_variables<R: Rng>(
    catalog: &Catalog,
    config: &EnvConfig,
    vars: &BTreeSet<String>,
    space: Space,
    rng: &mut R,
) -> Result<FamilySample> {
    let mut out = FamilySample::default();
    let mut cfg = config.clone();
    for var in vars {
        let spec = catalog.spec(var)?;
        let ids: Vec<String> = match (spec.scope, split_id(var).1) {
            (Scope::Global, _) | (_, Some(_)) => vec![var.clone()],
            (_, None) => {
                let head = var.split_once('.').map_or(var.as_str(), |(h, _)| h);
                (0..count(&cfg, head)?).map(|i| instance_id(var, i)).collect()
            }
        };
        for id in ids {
            let v = catalog.sample_value(Some(&cfg), &id, space, rng)?;
            out.record(id.clone(), v.clone());
            out.assign(&mut cfg, id, v);
        }
    }
    Ok(out)
}

/// Draws every exposed variable from `space` and returns the first
/// configuration that passes the family and feasibility checks.
///
/// Structural variables (and the block size, which decides tower counts) are
/// drawn first and applied, then everything else is drawn for the rebuilt
/// configuration.
pub fn sample_all(
    family: Family,
    catalog: &Catalog,
    constants: &PhysicsConstants,
    config: &EnvConfig,
    space: Space,
    seed: u64,
) -> Result<(EnvConfig, FamilySample)> {
    let mut last = String::new();
    for attempt in 0..MAX_DRAWS as u64 {
        let mut rng = rng_for(mix_seed(&[seed, attempt]), 0x5a11);
        let mut first = FamilySample::default();
        let mut scratch = config.clone();
        if family.free_block_count() {
            let v = catalog.sample_value(Some(config), "num_blocks", space, &mut rng)?;
            first.record("num_blocks", v.clone());
            first.assign(&mut scratch, "num_blocks".into(), v);
        }
        if family == Family::Towers {
            let v = catalog.sample_value(Some(config), "tower_dims", space, &mut rng)?;
            first.record("tower_dims", v.clone());
            first.assign(&mut scratch, "tower_dims".into(), v);
            let s = sample_groups(family, catalog, constants, &scratch, &[VariableGroup::BlockSize], space, &mut rng)?;
            first.merge(s);
        }
        let phase_seed = rng.random();
        let rebuilt = match prepare_intervention(family, catalog, constants, config, &first.intervention, Phase::Reset, phase_seed)? {
            Outcome::Accepted(c) => c,
            Outcome::Rejected(r) => {
                last = r.detail;
                continue;
            }
        };

        let mut groups = vec![VariableGroup::BlockPose, VariableGroup::GoalPose];
        if family != Family::Towers {
            groups.push(VariableGroup::BlockSize);
        }
        let mut rest = sample_groups(family, catalog, constants, &rebuilt, &groups, space, &mut rng)?;
        let skip = |id: &str| {
            let t = split_id(id).0;
            matches!(t.as_str(), "block.size" | "goal.size" | "block.pose_cyl" | "goal.pose_cyl" | "goal_height")
        };
        let others: BTreeSet<String> = rebuilt
            .ids()
            .filter(|id| !skip(id) && !catalog.spec(id).is_ok_and(|s| s.structural))
            .cloned()
            .collect();
        rest.merge(sample_variables(catalog, &rebuilt, &others, space, &mut rng)?);
        match prepare_intervention(family, catalog, constants, &rebuilt, &rest.intervention, Phase::Reset, phase_seed)? {
            Outcome::Accepted(c) => {
                first.merge(rest);
                return Ok((c, first));
            }
            Outcome::Rejected(r) => last = r.detail,
        }
    }
    Err(Error::Config(format!("no feasible {family} configuration in {space} after {MAX_DRAWS} draws: {last}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{build_task, validate_config, TaskParams};

    fn base(family: Family) -> EnvConfig {
        build_task(family, &TaskParams::default(), 0).unwrap().config
    }

    #[test]
    fn group_codes_round_trip() {
        for g in VariableGroup::ALL {
            assert_eq!(g.code().parse::<VariableGroup>().unwrap(), g);
            assert_eq!(serde_json::to_string(&g).unwrap(), format!("\"{}\"", g.code()));
        }
    }

    #[test]
    fn draws_come_from_the_requested_space() {
        let cat = Catalog::shipped();
        let k = PhysicsConstants::shipped();
        for family in Family::ALL {
            let cfg = base(family);
            for space in [Space::A, Space::B] {
                let mut rng = rng_for(9, 0);
                let s = sample_groups(family, &cat, &k, &cfg, &VariableGroup::ALL, space, &mut rng).unwrap();
                for SampledValue { id, value } in &s.audit {
                    let mut after = cfg.clone();
                    for (i, v) in &s.intervention.assignments {
                        after.set(i.clone(), v.clone());
                    }
                    assert!(cat.membership_in(Some(&after), id, value, space).unwrap(), "{family} {space} {id} {value:?}");
                }
            }
        }
    }

    #[test]
    fn sampled_goals_keep_their_family() {
        let cat = Catalog::shipped();
        let k = PhysicsConstants::shipped();
        for family in Family::ALL {
            let cfg = base(family);
            for seed in 0..3 {
                let mut rng = rng_for(seed, 1);
                let s = sample_groups(family, &cat, &k, &cfg, &[VariableGroup::GoalPose], Space::A, &mut rng).unwrap();
                let mut after = cfg.clone();
                for (i, v) in &s.intervention.assignments {
                    after.set(i.clone(), v.clone());
                }
                assert!(validate_config(family, &after).unwrap().is_accepted(), "{family} {seed}");
            }
        }
    }

    #[test]
    fn full_randomizer_finds_valid_configurations() {
        let cat = Catalog::shipped();
        let k = PhysicsConstants::shipped();
        for family in [Family::Pushing, Family::PickAndPlace, Family::Towers, Family::StackedBlocks] {
            for space in [Space::A, Space::B] {
                let (cfg, sample) = sample_all(family, &cat, &k, &base(family), space, 4).unwrap();
                assert!(validate_config(family, &cfg).unwrap().is_accepted());
                assert!(!sample.audit.is_empty());
            }
        }
    }

    #[test]
    fn template_ids_expand_to_instances() {
        let cat = Catalog::shipped();
        let cfg = base(Family::Stacking2);
        let vars: BTreeSet<String> = ["block.mass".to_string()].into();
        let s = sample_variables(&cat, &cfg, &vars, Space::B, &mut rng_for(0, 0)).unwrap();
        assert_eq!(s.audit.len(), 2);
        assert!(s.intervention.assignments.contains_key("block_1.mass"));
    }
}
