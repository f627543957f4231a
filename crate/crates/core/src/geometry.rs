//! Oriented cuboids, exact box-box intersection volume, and the voxelized
//! fractional overlap used as the success metric.

use nalgebra::Quaternion;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, BlockState, PhysicsConstants, WorldParams, WorldState};
use crate::math::{mix_seed, rng_for, uniform, Mat3, Quat, Vec3};
use crate::{Error, Result};

/// Default voxel edge of the fractional-overlap grid (m).
pub const DEFAULT_VOXEL: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Quat,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    position: [f64; 3],
    /// `[x, y, z, w]`
    orientation: [f64; 4],
}

impl From<PoseRepr> for Pose {
    fn from(r: PoseRepr) -> Self {
        let [x, y, z, w] = r.orientation;
        Pose {
            position: Vec3::from(r.position),
            orientation: Quat::new_normalize(Quaternion::new(w, x, y, z)),
        }
    }
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        let q = p.orientation.quaternion();
        PoseRepr {
            position: p.position.into(),
            orientation: [q.i, q.j, q.k, q.w],
        }
    }
}

impl Pose {
    pub fn new(position: Vec3, orientation: Quat) -> Self {
        Self { position, orientation }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vec3::new(x, y, z), Quat::identity())
    }

    /// `[x, y, z, w]`, the order used in observations.
    pub fn quat_xyzw(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.i, q.j, q.k, q.w]
    }

    /// `other` expressed after applying this pose as a rigid transform.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.position + self.orientation * other.position,
            self.orientation * other.orientation,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cuboid {
    pub pose: Pose,
    /// Full edge lengths (m).
    pub size: [f64; 3],
    #[serde(default)]
    pub mass: f64,
    #[serde(default)]
    pub color: [f64; 3],
}

impl Cuboid {
    pub fn new(pose: Pose, size: [f64; 3], mass: f64) -> Self {
        Self { pose, size, mass, color: [0.5; 3] }
    }

    /// Massless goal cuboid.
    pub fn goal(pose: Pose, size: [f64; 3]) -> Self {
        Self::new(pose, size, 0.0)
    }

    pub fn half_extents(&self) -> Vec3 {
        Vec3::new(0.5 * self.size[0], 0.5 * self.size[1], 0.5 * self.size[2])
    }

    pub fn volume(&self) -> f64 {
        self.size[0] * self.size[1] * self.size[2]
    }

    pub fn rotation(&self) -> Mat3 {
        *self.pose.orientation.to_rotation_matrix().matrix()
    }

    /// The eight corners in world coordinates.
    pub fn corners(&self) -> [Vec3; 8] {
        let r = self.rotation();
        let h = self.half_extents();
        let mut out = [Vec3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let s = Vec3::new(sign(i & 1), sign(i & 2), sign(i & 4));
            *c = self.pose.position + r * h.component_mul(&s);
        }
        out
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn aabb(&self) -> (Vec3, Vec3) {
        let r = self.rotation().abs();
        let e = r * self.half_extents();
        (self.pose.position - e, self.pose.position + e)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        Containment::new(self).contains(p)
    }

    /// Checks size bounds and mass positivity for a dynamic block.
    pub fn validate_block(&self) -> Result<()> {
        if self.size.iter().any(|&s| !(s > 0.0 && s <= 0.5)) {
            return Err(Error::Config(format!("cuboid size {:?} outside (0, 0.5]", self.size)));
        }
        if !(self.mass > 0.0) {
            return Err(Error::Config(format!("cuboid mass {} must be positive", self.mass)));
        }
        Ok(())
    }
}

fn sign(bit: usize) -> f64 {
    if bit != 0 {
        1.0
    } else {
        -1.0
    }
}

/// Point-in-box test with the inverse rotation cached.
struct Containment {
    center: Vec3,
    rt: Mat3,
    half: Vec3,
}

impl Containment {
    fn new(c: &Cuboid) -> Self {
        Self {
            center: c.pose.position,
            rt: c.rotation().transpose(),
            half: c.half_extents(),
        }
    }

    fn contains(&self, p: &Vec3) -> bool {
        let l = self.rt * (p - self.center);
        l.x.abs() <= self.half.x && l.y.abs() <= self.half.y && l.z.abs() <= self.half.z
    }
}

/// A goal structure: massless cuboids, some of which may be hidden.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalShape {
    pub parts: Vec<Cuboid>,
    /// Parts with `false` are not scored (partial goals).
    pub imposed_mask: Vec<bool>,
}

impl GoalShape {
    pub fn new(parts: Vec<Cuboid>) -> Self {
        let imposed_mask = vec![true; parts.len()];
        Self { parts, imposed_mask }
    }

    pub fn imposed(&self) -> impl Iterator<Item = &Cuboid> {
        self.parts.iter().zip(&self.imposed_mask).filter(|(_, &m)| m).map(|(p, _)| p)
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Exact pair kernel

type Polygon = Vec<Vec3>;

/// Faces of a box, each counter-clockwise seen from outside.
fn box_faces(c: &Cuboid) -> Vec<Polygon> {
    let r = c.rotation();
    let h = c.half_extents();
    let mut faces = Vec::with_capacity(6);
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        for s in [1.0, -1.0] {
            let mut quad = Vec::with_capacity(4);
            for (a, b) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
                let mut l = Vec3::zeros();
                l[i] = s * h[i];
                l[j] = a * h[j];
                l[k] = b * h[k];
                quad.push(c.pose.position + r * l);
            }
            if s < 0.0 {
                quad.reverse();
            }
            faces.push(quad);
        }
    }
    faces
}

/// Outward planes `n·x <= d` of a box.
fn box_planes(c: &Cuboid) -> [(Vec3, f64); 6] {
    let r = c.rotation();
    let h = c.half_extents();
    let mut out = [(Vec3::zeros(), 0.0); 6];
    for i in 0..3 {
        let axis = r.column(i).into_owned();
        for (m, s) in [1.0, -1.0].into_iter().enumerate() {
            let n = axis * s;
            out[2 * i + m] = (n, n.dot(&c.pose.position) + h[i]);
        }
    }
    out
}

// Points within this distance outside a plane count as inside, so a box
// clipped by an identical box stays bit-for-bit unchanged.
const CLIP_EPS: f64 = 1e-12;

fn clip_polyhedron(faces: Vec<Polygon>, n: &Vec3, d: f64) -> Vec<Polygon> {
    let mut out = Vec::with_capacity(faces.len() + 1);
    let mut cap: Vec<Vec3> = Vec::new();
    for face in faces {
        let m = face.len();
        let dist: Vec<f64> = face.iter().map(|p| n.dot(p) - d).collect();
        if dist.iter().all(|&s| s <= CLIP_EPS) {
            out.push(face);
            continue;
        }
        let mut poly = Vec::with_capacity(m + 1);
        for i in 0..m {
            let (p, q) = (&face[i], &face[(i + 1) % m]);
            let (dp, dq) = (dist[i], dist[(i + 1) % m]);
            let p_in = dp <= CLIP_EPS;
            let q_in = dq <= CLIP_EPS;
            if p_in {
                poly.push(*p);
            }
            if p_in != q_in {
                let t = dp / (dp - dq);
                let x = p + (q - p) * t;
                poly.push(x);
                cap.push(x);
            }
        }
        if poly.len() >= 3 {
            out.push(poly);
        }
    }
    if let Some(cap) = order_cap(cap, n) {
        out.push(cap);
    }
    out
}

/// Orders the section points counter-clockwise around `n`.
fn order_cap(mut pts: Vec<Vec3>, n: &Vec3) -> Option<Polygon> {
    if pts.len() < 3 {
        return None;
    }
    let centroid = pts.iter().fold(Vec3::zeros(), |a, p| a + p) / pts.len() as f64;
    let u = (pts[0] - centroid)
        .try_normalize(1e-15)
        .or_else(|| n.cross(&Vec3::x()).try_normalize(1e-9))
        .unwrap_or_else(|| n.cross(&Vec3::y()).normalize());
    let u = (u - n * n.dot(&u)).normalize();
    let v = n.cross(&u);
    let mut keyed: Vec<(f64, Vec3)> = pts
        .drain(..)
        .map(|p| {
            let r = p - centroid;
            (libm::atan2(r.dot(&v), r.dot(&u)), p)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ordered: Polygon = Vec::with_capacity(keyed.len());
    for (_, p) in keyed {
        if ordered.last().is_none_or(|q: &Vec3| (p - q).norm() > 1e-12) {
            ordered.push(p);
        }
    }
    while ordered.len() > 1 && (ordered[0] - ordered[ordered.len() - 1]).norm() <= 1e-12 {
        ordered.pop();
    }
    (ordered.len() >= 3).then_some(ordered)
}

/// Volume of a closed polyhedron with outward-oriented faces.
fn polyhedron_volume(faces: &[Polygon], origin: &Vec3) -> f64 {
    let mut six_v = 0.0;
    for f in faces {
        let a = f[0] - origin;
        for w in 1..f.len() - 1 {
            let b = f[w] - origin;
            let c = f[w + 1] - origin;
            six_v += a.dot(&b.cross(&c));
        }
    }
    (six_v / 6.0).max(0.0)
}

fn cuboid_key(c: &Cuboid) -> [u64; 10] {
    let q = c.pose.orientation.quaternion();
    let p = c.pose.position;
    [p.x, p.y, p.z, q.w, q.i, q.j, q.k, c.size[0], c.size[1], c.size[2]].map(f64::to_bits)
}

fn clipped_volume(subject: &Cuboid, by: &Cuboid) -> f64 {
    let mut faces = box_faces(subject);
    for (n, d) in box_planes(by) {
        faces = clip_polyhedron(faces, &n, d);
        if faces.len() < 4 {
            return 0.0;
        }
    }
    polyhedron_volume(&faces, &subject.pose.position)
}

/// Exact intersection volume of two oriented boxes (m³).
///
/// One box is clipped by the six face planes of the other and the resulting
/// polyhedron is integrated with the divergence theorem. The argument order is
/// canonicalized so the result is bitwise symmetric.
pub fn box_pair_overlap(a: &Cuboid, b: &Cuboid) -> f64 {
    let (subject, by) = if cuboid_key(a) <= cuboid_key(b) { (a, b) } else { (b, a) };
    let v = clipped_volume(subject, by);
    v.min(a.volume()).min(b.volume())
}

// ---------------------------------------------------------------------------
// Fractional overlap

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapOptions {
    /// Voxel edge length (m).
    pub voxel: f64,
    /// Use the exact kernel when there is one block and one imposed part.
    pub exact_single: bool,
}

impl Default for OverlapOptions {
    fn default() -> Self {
        Self { voxel: DEFAULT_VOXEL, exact_single: false }
    }
}

/// Fraction of the imposed goal volume covered by blocks, on the default grid.
pub fn fractional_overlap(blocks: &[Cuboid], goal: &GoalShape) -> Result<f64> {
    fractional_overlap_with(blocks, goal, &OverlapOptions::default())
}

/// Fraction of the imposed goal volume covered by the union of `blocks`.
///
/// Both unions are evaluated at voxel centers of a grid that tiles the
/// bounding box of the imposed parts.
pub fn fractional_overlap_with(blocks: &[Cuboid], goal: &GoalShape, opts: &OverlapOptions) -> Result<f64> {
    let imposed: Vec<&Cuboid> = goal.imposed().collect();
    if imposed.is_empty() {
        return Err(Error::MetricUndefined("goal has no imposed parts".into()));
    }
    if !(opts.voxel > 0.0) {
        return Err(Error::Config(format!("voxel edge {} must be positive", opts.voxel)));
    }
    if opts.exact_single && blocks.len() == 1 && imposed.len() == 1 {
        let g = imposed[0];
        let full = clipped_volume(g, g);
        let covered = clipped_volume(g, &blocks[0]);
        return Ok((covered / full).clamp(0.0, 1.0));
    }

    let (mut lo, mut hi) = imposed[0].aabb();
    for p in &imposed[1..] {
        let (l, h) = p.aabb();
        lo = lo.inf(&l);
        hi = hi.sup(&h);
    }
    let goal_tests: Vec<Containment> = imposed.iter().map(|c| Containment::new(c)).collect();
    let block_tests: Vec<(Containment, Vec3, Vec3)> = blocks
        .iter()
        .map(|b| {
            let (l, h) = b.aabb();
            (Containment::new(b), l, h)
        })
        .filter(|(_, l, h)| (0..3).all(|i| l[i] <= hi[i] && h[i] >= lo[i]))
        .collect();

    let ext = hi - lo;
    let n: [usize; 3] = std::array::from_fn(|i| ((ext[i] / opts.voxel).round() as usize).max(1));
    let step: [f64; 3] = std::array::from_fn(|i| ext[i] / n[i] as f64);
    let (mut in_goal, mut covered) = (0u64, 0u64);
    for ix in 0..n[0] {
        let x = lo.x + (ix as f64 + 0.5) * step[0];
        for iy in 0..n[1] {
            let y = lo.y + (iy as f64 + 0.5) * step[1];
            for iz in 0..n[2] {
                let p = Vec3::new(x, y, lo.z + (iz as f64 + 0.5) * step[2]);
                if !goal_tests.iter().any(|g| g.contains(&p)) {
                    continue;
                }
                in_goal += 1;
                let hit = block_tests.iter().any(|(c, l, h)| {
                    (0..3).all(|i| p[i] >= l[i] && p[i] <= h[i]) && c.contains(&p)
                });
                if hit {
                    covered += 1;
                }
            }
        }
    }
    if in_goal == 0 {
        return Err(Error::MetricUndefined("goal smaller than one voxel".into()));
    }
    Ok(covered as f64 / in_goal as f64)
}

// ---------------------------------------------------------------------------
// Scenes

/// A set of blocks and a goal, as consumed by the `overlap` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub blocks: Vec<Cuboid>,
    pub goal: Vec<GoalPart>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalPart {
    #[serde(flatten)]
    pub cuboid: Cuboid,
    #[serde(default = "yes")]
    pub imposed: bool,
}

fn yes() -> bool {
    true
}

impl Scene {
    pub fn new(blocks: Vec<Cuboid>, goal: &GoalShape) -> Self {
        let goal = goal
            .parts
            .iter()
            .zip(&goal.imposed_mask)
            .map(|(c, &imposed)| GoalPart { cuboid: c.clone(), imposed })
            .collect();
        Self { blocks, goal }
    }

    pub fn goal_shape(&self) -> GoalShape {
        GoalShape {
            parts: self.goal.iter().map(|g| g.cuboid.clone()).collect(),
            imposed_mask: self.goal.iter().map(|g| g.imposed).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Settle drop

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettleResult {
    pub poses: Vec<Pose>,
    /// Simulated time until rest (or the cap).
    pub time: f64,
    /// False when the time cap was hit before the blocks came to rest.
    pub converged: bool,
}

/// Drops `blocks` onto the floor with no robot and returns their resting poses.
pub fn settle_drop(blocks: &[Cuboid], seed: u64) -> Result<SettleResult> {
    settle_drop_with(blocks, seed, &PhysicsConstants::shipped(), &WorldParams::default())
}

/// Settle drop with explicit constants and world parameters.
///
/// The seed perturbs each block horizontally by at most 0.1 mm before the
/// drop, so distinct seeds explore nearby resting configurations.
pub fn settle_drop_with(
    blocks: &[Cuboid],
    seed: u64,
    constants: &PhysicsConstants,
    params: &WorldParams,
) -> Result<SettleResult> {
    let mut rng = rng_for(mix_seed(&[seed, 0x5e771e]), 0);
    let states = blocks
        .iter()
        .map(|b| {
            b.validate_block()?;
            let mut pose = b.pose;
            pose.position.x += uniform(&mut rng, -1e-4, 1e-4);
            pose.position.y += uniform(&mut rng, -1e-4, 1e-4);
            Ok(BlockState::at_rest(pose, b.size, b.mass))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut world = WorldState::without_robot(states, Vec::new(), params.clone());
    let s = &constants.settle;
    let (mut quiet, dt) = (0.0, constants.dt);
    let converged = loop {
        world = dynamics::step_passive(&world, constants)?;
        if world.kinetic_energy() < s.kinetic_energy_threshold {
            quiet += dt;
            if quiet >= s.quiet_time {
                break true;
            }
        } else {
            quiet = 0.0;
        }
        if world.time >= s.time_cap {
            log::warn!("settle drop hit the {} s cap without coming to rest", s.time_cap);
            break false;
        }
    };
    Ok(SettleResult {
        poses: world.blocks.iter().map(|b| b.pose).collect(),
        time: world.time,
        converged,
    })
}
