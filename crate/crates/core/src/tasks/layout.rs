//! Default configurations and goal structures of each family.

use rand::Rng;

use super::{Family, TaskParams};
use crate::dynamics::{PhysicsConstants, WorldParams};
use crate::geometry::{settle_drop_with, Cuboid, Pose};
use crate::math::{cart_to_cyl, mix_seed, quat_from_yaw, rng_for, uniform, yaw_of, Vec3, PI};
use crate::param_space::{instance_id, Catalog, EnvConfig, Scope, Space};
use crate::{Error, Result};

/// Upper bound on blocks per task.
pub const MAX_BLOCKS: usize = 8;

/// The fixed long block splitting the pick-and-place arena.
pub const OBSTACLE_SIZE: [f64; 3] = [0.35, 0.015, 0.065];

const TOWER_BLOCK_SIZE: f64 = 0.055;

/// Block count used when a free-count family gets no `num_blocks`.
pub fn default_num_blocks(family: Family) -> usize {
    match family {
        Family::StackedBlocks | Family::CreativeStackedBlocks => 4,
        Family::General => 3,
        Family::Towers => {
            let c = tower_counts(&TOWER_DEFAULT_DIMS, &[TOWER_BLOCK_SIZE; 3]);
            c[0] * c[1] * c[2]
        }
        f => f.fixed_block_count().expect("fixed-count family"),
    }
}

const TOWER_DEFAULT_DIMS: [f64; 3] = [0.115, 0.08, 0.115];

/// Blocks per axis when `dims` is filled with blocks of `size`; partial
/// layers are dropped, but every axis keeps at least one block.
pub fn tower_counts(dims: &[f64; 3], size: &[f64; 3]) -> [usize; 3] {
    std::array::from_fn(|i| ((dims[i] / size[i] + 1e-9).floor() as usize).max(1))
}

pub fn obstacles(family: Family) -> Vec<Cuboid> {
    match family {
        Family::PickAndPlace => {
            let h = OBSTACLE_SIZE[2];
            vec![Cuboid::goal(Pose::from_translation(0.0, 0.0, 0.5 * h), OBSTACLE_SIZE)]
        }
        _ => Vec::new(),
    }
}

/// Wraps an angle into `[-π, π)`.
pub(crate) fn wrap(a: f64) -> f64 {
    let mut a = (a + PI).rem_euclid(2.0 * PI) - PI;
    if a >= PI {
        a -= 2.0 * PI;
    }
    a
}

pub(crate) fn cyl(p: &Vec3, yaw: f64) -> Vec<f64> {
    let (r, az, z) = cart_to_cyl(p);
    vec![r, az, z, wrap(yaw)]
}

/// Floor slots on a ring around the arena center.
pub(crate) fn ring_slots(n: usize, size: &[f64; 3]) -> Vec<Vec<f64>> {
    let r = if n <= 6 { 0.14 } else { 0.155 };
    (0..n)
        .map(|k| {
            let az = wrap(-0.5 * PI + 2.0 * PI * k as f64 / n as f64);
            vec![r, az, 0.5 * size[2], az]
        })
        .collect()
}

/// Tower parts filling `dims` around `anchor`, level by level.
pub(crate) fn tower_parts(dims: &[f64; 3], size: &[f64; 3], anchor: &Vec3, yaw: f64) -> Vec<(Vec3, f64)> {
    let [nx, ny, nz] = tower_counts(dims, size);
    let rot = quat_from_yaw(yaw);
    let mut out = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let local = Vec3::new(
                    (i as f64 - 0.5 * (nx - 1) as f64) * size[0],
                    (j as f64 - 0.5 * (ny - 1) as f64) * size[1],
                    (k as f64 + 0.5) * size[2],
                );
                out.push((Vec3::new(anchor.x, anchor.y, 0.0) + rot * local, yaw));
            }
        }
    }
    out
}

/// Offsets of each level stay within this fraction of the block size.
const STACK_OFFSET: f64 = 0.3;
/// The center of mass above a level must lie within this fraction of its
/// half footprint.
const SUPPORT_MARGIN: f64 = 0.8;

/// Whether every level carries the center of mass of the levels above it.
pub(crate) fn stack_supported(levels: &[Vec3], size: &[f64; 3]) -> bool {
    for l in 0..levels.len().saturating_sub(1) {
        let above = &levels[l + 1..];
        let com = above.iter().fold(Vec3::zeros(), |a, p| a + p) / above.len() as f64;
        let d = com - levels[l];
        if d.x.abs() > SUPPORT_MARGIN * 0.5 * size[0] || d.y.abs() > SUPPORT_MARGIN * 0.5 * size[1] {
            return false;
        }
    }
    true
}

/// One block per level with bounded horizontal offsets.
pub(crate) fn stacked_parts<R: Rng>(n: usize, size: &[f64; 3], anchor: &Vec3, yaw: f64, rng: &mut R) -> Vec<(Vec3, f64)> {
    let mut local: Vec<Vec3> = Vec::new();
    for _ in 0..100 {
        local.clear();
        let mut xy = Vec3::zeros();
        for l in 0..n {
            if l > 0 {
                xy.x += uniform(rng, -STACK_OFFSET, STACK_OFFSET) * size[0];
                xy.y += uniform(rng, -STACK_OFFSET, STACK_OFFSET) * size[1];
            }
            local.push(Vec3::new(xy.x, xy.y, (l as f64 + 0.5) * size[2]));
        }
        if stack_supported(&local, size) {
            break;
        }
        local.iter_mut().for_each(|p| {
            p.x = 0.0;
            p.y = 0.0;
        });
    }
    let rot = quat_from_yaw(yaw);
    local
        .iter()
        .map(|p| (Vec3::new(anchor.x, anchor.y, 0.0) + rot * p, yaw))
        .collect()
}

const FLAT_TILT: f64 = 0.02;

/// Drops blocks one at a time near `anchor` and keeps placements that come
/// to rest flat without disturbing earlier blocks.
pub(crate) fn general_parts(
    n: usize,
    size: &[f64; 3],
    mass: f64,
    anchor: &Vec3,
    seed: u64,
    constants: &PhysicsConstants,
) -> Result<Vec<(Vec3, f64)>> {
    let mut rng = rng_for(mix_seed(&[seed, 0x6e4e]), 0);
    let params = WorldParams::default();
    let mut placed: Vec<Cuboid> = Vec::new();
    for k in 0..n {
        let mut accepted = false;
        for attempt in 0..20 {
            let rho = 0.6 * size[0] * uniform(&mut rng, 0.0, 1.0).sqrt();
            let phi = uniform(&mut rng, -PI, PI);
            let yaw = uniform(&mut rng, -PI, PI);
            let top = placed
                .iter()
                .map(|c| c.pose.position.z + 0.5 * c.size[2])
                .fold(0.0, f64::max);
            let z = if k == 0 { 0.5 * size[2] } else { top + 0.5 * size[2] + 0.005 };
            let pos = Vec3::new(anchor.x + rho * phi.cos(), anchor.y + rho * phi.sin(), z);
            let mut all = placed.clone();
            all.push(Cuboid::new(Pose::new(pos, quat_from_yaw(yaw)), *size, mass));
            let res = settle_drop_with(&all, mix_seed(&[seed, k as u64, attempt]), constants, &params)?;
            let undisturbed = placed
                .iter()
                .zip(&res.poses)
                .all(|(c, p)| (c.pose.position - p.position).norm() <= 1e-3);
            let flat = res
                .poses
                .iter()
                .all(|p| (p.orientation * Vec3::z()).z >= FLAT_TILT.cos());
            if res.converged && undisturbed && flat {
                placed = all
                    .iter()
                    .zip(&res.poses)
                    .map(|(c, p)| {
                        let mut c = c.clone();
                        c.pose = Pose::new(p.position, quat_from_yaw(yaw_of(&p.orientation)));
                        c
                    })
                    .collect();
                accepted = true;
                break;
            }
        }
        if !accepted {
            placed.push(floor_fallback(&placed, size, mass, anchor, constants)?);
        }
    }
    Ok(placed.iter().map(|c| (c.pose.position, yaw_of(&c.pose.orientation))).collect())
}

fn floor_fallback(
    placed: &[Cuboid],
    size: &[f64; 3],
    mass: f64,
    anchor: &Vec3,
    constants: &PhysicsConstants,
) -> Result<Cuboid> {
    // Slots on rings around the anchor, dropping those whose corners would
    // hang over the stage edge.
    let step = 1.2 * size[0].max(size[1]);
    for ring in 1..4 {
        let r = ring as f64 * step;
        let slots = 8 * ring;
        for k in 0..slots {
            let phi = 2.0 * PI * k as f64 / slots as f64;
            let p = Vec3::new(anchor.x + r * phi.cos(), anchor.y + r * phi.sin(), 0.5 * size[2]);
            let c = Cuboid::new(Pose::new(p, quat_from_yaw(phi)), *size, mass);
            let on_stage = c.corners().iter().all(|q| q.x.hypot(q.y) <= constants.stage_radius);
            let clear = placed.iter().all(|o| crate::geometry::box_pair_overlap(o, &c) == 0.0);
            if on_stage && clear {
                return Ok(c);
            }
        }
    }
    Err(Error::TaskParams("no room to place a general goal block".into()))
}

fn check_param(catalog: &Catalog, id: &str, value: &[f64]) -> Result<()> {
    let ok = catalog.membership_in(None, id, value, Space::Union)? || catalog.in_physical_range(None, id, value)?;
    if ok {
        Ok(())
    } else {
        Err(Error::TaskParams(format!("`{id}` = {value:?} lies outside its spaces")))
    }
}

/// Complete configuration of a family's instance.
///
/// `size` overrides the block size shared by all blocks.
pub fn family_config(
    family: Family,
    catalog: &Catalog,
    params: &TaskParams,
    size: Option<[f64; 3]>,
    seed: u64,
) -> Result<EnvConfig> {
    let constants = PhysicsConstants::shipped();
    let default_size = match family {
        Family::Towers => [TOWER_BLOCK_SIZE; 3],
        _ => {
            let d = catalog.spec("block.size")?.default.clone().unwrap_or(vec![0.065; 3]);
            [d[0], d[1], d[2]]
        }
    };
    let size = size.unwrap_or(default_size);
    let h = 0.5 * size[2];

    if params.tower_dims.is_some() && family != Family::Towers {
        return Err(Error::TaskParams(format!("`tower_dims` does not apply to {family}")));
    }
    if params.goal_height.is_some() && family != Family::Picking {
        return Err(Error::TaskParams(format!("`goal_height` does not apply to {family}")));
    }
    let dims = params.tower_dims.unwrap_or(TOWER_DEFAULT_DIMS);
    let goal_height = params.goal_height.unwrap_or(0.12);
    if let Some(d) = params.tower_dims {
        check_param(catalog, "tower_dims", &d)?;
    }
    if let Some(g) = params.goal_height {
        check_param(catalog, "goal_height", &[g])?;
    }

    let n = match family {
        Family::Towers => {
            let c = tower_counts(&dims, &size);
            c[0] * c[1] * c[2]
        }
        f if f.free_block_count() => params.num_blocks.unwrap_or(default_num_blocks(f)),
        f => f.fixed_block_count().expect("fixed count"),
    };
    if let Some(k) = params.num_blocks {
        check_param(catalog, "num_blocks", &[k as f64])?;
        if k != n {
            return Err(Error::TaskParams(format!("{family} uses {n} blocks, not {k}")));
        }
    }
    if n == 0 || n > MAX_BLOCKS {
        return Err(Error::TaskParams(format!("{n} blocks; tasks use 1 to {MAX_BLOCKS}")));
    }

    let mut rng = rng_for(mix_seed(&[seed, family as u64]), 0);
    let origin = Vec3::zeros();
    let (blocks, goals): (Vec<Vec<f64>>, Vec<Vec<f64>>) = match family {
        Family::Pushing => (vec![vec![0.08, -0.5 * PI, h, 0.0]], vec![vec![0.08, 0.5 * PI, h, 0.0]]),
        Family::Picking => (vec![vec![0.0, 0.0, h, 0.0]], vec![vec![0.0, 0.0, goal_height, 0.0]]),
        Family::PickAndPlace => (vec![vec![0.09, -0.5 * PI, h, 0.0]], vec![vec![0.09, 0.5 * PI, h, 0.0]]),
        Family::Stacking2 => (
            ring_slots(2, &size),
            tower_parts(&[size[0], size[1], 2.0 * size[2]], &size, &origin, 0.0)
                .iter()
                .map(|(p, y)| cyl(p, *y))
                .collect(),
        ),
        Family::Towers => (
            ring_slots(n, &size),
            tower_parts(&dims, &size, &origin, 0.0).iter().map(|(p, y)| cyl(p, *y)).collect(),
        ),
        Family::StackedBlocks | Family::CreativeStackedBlocks => (
            ring_slots(n, &size),
            stacked_parts(n, &size, &origin, 0.0, &mut rng).iter().map(|(p, y)| cyl(p, *y)).collect(),
        ),
        Family::General => {
            let mass = catalog.spec("block.mass")?.default.as_ref().map_or(0.03, |d| d[0]);
            (
                ring_slots(n, &size),
                general_parts(n, &size, mass, &origin, seed, &constants)?
                    .iter()
                    .map(|(p, y)| cyl(p, *y))
                    .collect(),
            )
        }
    };

    let mut cfg = EnvConfig::default();
    for (template, spec) in &catalog.variables {
        if spec.scope != Scope::Global || !spec.exposed_for(family) {
            continue;
        }
        if let Some(d) = &spec.default {
            cfg.set(template.clone(), d.clone());
        }
    }
    cfg.set("num_blocks", vec![n as f64]);
    if family == Family::Towers {
        cfg.set("tower_dims", dims.to_vec());
    }
    if family == Family::Picking {
        cfg.set("goal_height", vec![goal_height]);
    }
    let default_of = |t: &str| -> Result<Vec<f64>> {
        catalog
            .spec(t)?
            .default
            .clone()
            .ok_or_else(|| Error::Catalog(format!("`{t}` has no default")))
    };
    for (i, pose) in blocks.into_iter().enumerate() {
        cfg.set(instance_id("block.size", i), size.to_vec());
        cfg.set(instance_id("block.mass", i), default_of("block.mass")?);
        cfg.set(instance_id("block.color", i), default_of("block.color")?);
        cfg.set(instance_id("block.pose_cyl", i), pose);
    }
    for (j, pose) in goals.into_iter().enumerate() {
        cfg.set(instance_id("goal.size", j), size.to_vec());
        cfg.set(instance_id("goal.color", j), default_of("goal.color")?);
        cfg.set(instance_id("goal.pose_cyl", j), pose);
    }
    for k in 0..9 {
        cfg.set(instance_id("link.mass", k), default_of("link.mass")?);
        cfg.set(instance_id("link.color", k), default_of("link.color")?);
    }
    Ok(cfg)
}
