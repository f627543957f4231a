//! Deterministic rigid-body backend.
//!
//! Blocks are boxes with full 6-DoF state; the floor, the stage wall and
//! obstacles are static. Contacts use a spring-damper normal force and a
//! regularized Coulomb friction clamped at `μ·N`. The stiffness and damping of
//! a contact manifold are shared equally by its points, so a face resting on
//! four corners is as stiff as one touching at a single corner.
//!
//! The robot is reduced to nine independent joint inertias driven by a clamped
//! PD position loop or by direct torques. Fingertips are spheres whose contact
//! forces act on the joints through the transposed finger Jacobian.
//!
//! Integration is semi-implicit Euler with a fixed number of substeps per
//! simulation step. All reductions run in a fixed order, so identical inputs
//! give bitwise-identical outputs.

mod constants;
pub mod contacts;
pub mod kinematics;

pub use constants::{FingerGeometry, IkSettings, PhysicsConstants, SettleSettings};
pub use kinematics::{forward_kinematics, inverse_kinematics, IkSolution};

use serde::{Deserialize, Serialize};

use crate::geometry::{Cuboid, Pose};
use crate::math::{integrate_orientation, Mat3, Vec3};
use crate::{Error, Result};
use contacts::{BoxGeom, ContactPoint};

/// Joint-space default: fingertips gathered above the arena center.
pub const DEFAULT_JOINTS: [f64; 9] = [-1.13, -0.6, -1.5, -1.13, -0.6, -1.5, -1.13, -0.6, -1.5];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    JointPosition,
    JointTorque,
    EePosition,
    DeltaJointPosition,
    DeltaJointTorque,
    DeltaEePosition,
}

impl ActionMode {
    pub const ALL: [ActionMode; 6] = [
        ActionMode::JointPosition,
        ActionMode::JointTorque,
        ActionMode::EePosition,
        ActionMode::DeltaJointPosition,
        ActionMode::DeltaJointTorque,
        ActionMode::DeltaEePosition,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionMode::JointPosition => "joint_position",
            ActionMode::JointTorque => "joint_torque",
            ActionMode::EePosition => "ee_position",
            ActionMode::DeltaJointPosition => "delta_joint_position",
            ActionMode::DeltaJointTorque => "delta_joint_torque",
            ActionMode::DeltaEePosition => "delta_ee_position",
        }
    }
}

impl std::str::FromStr for ActionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ActionMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Action(format!("unknown action mode `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotCommand {
    pub mode: ActionMode,
    pub values: [f64; 9],
}

impl RobotCommand {
    pub fn new(mode: ActionMode, values: [f64; 9]) -> Self {
        Self { mode, values }
    }

    /// Builds a command from a slice, checking length and finiteness.
    pub fn from_slice(mode: ActionMode, values: &[f64]) -> Result<Self> {
        if values.len() != 9 {
            return Err(Error::Action(format!("expected 9 action values, got {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Action("action contains a non-finite value".into()));
        }
        let mut v = [0.0; 9];
        v.copy_from_slice(values);
        Ok(Self::new(mode, v))
    }
}

/// What the joint motors track during one control period.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Drive {
    Position([f64; 9]),
    Torque([f64; 9]),
}

/// Intervenable world parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldParams {
    pub gravity_z: f64,
    pub floor_friction: f64,
    pub stage_friction: f64,
    pub link_masses: [f64; 9],
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            gravity_z: -9.81,
            floor_friction: 0.5,
            stage_friction: 0.5,
            link_masses: [0.03; 9],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockState {
    pub pose: Pose,
    pub linvel: Vec3,
    pub angvel: Vec3,
    pub size: [f64; 3],
    pub mass: f64,
}

impl BlockState {
    pub fn at_rest(pose: Pose, size: [f64; 3], mass: f64) -> Self {
        Self { pose, linvel: Vec3::zeros(), angvel: Vec3::zeros(), size, mass }
    }

    pub fn cuboid(&self) -> Cuboid {
        Cuboid::new(self.pose, self.size, self.mass)
    }

    fn geom(&self) -> BoxGeom {
        BoxGeom {
            center: self.pose.position,
            rot: *self.pose.orientation.to_rotation_matrix().matrix(),
            half: Vec3::new(0.5 * self.size[0], 0.5 * self.size[1], 0.5 * self.size[2]),
        }
    }

    fn body_inertia(&self) -> Vec3 {
        let [x, y, z] = self.size;
        let k = self.mass / 12.0;
        Vec3::new(k * (y * y + z * z), k * (x * x + z * z), k * (x * x + y * y))
    }

    fn world_inertia(&self, rot: &Mat3) -> Mat3 {
        rot * Mat3::from_diagonal(&self.body_inertia()) * rot.transpose()
    }

    fn point_velocity(&self, p: &Vec3) -> Vec3 {
        self.linvel + self.angvel.cross(&(p - self.pose.position))
    }

    pub fn kinetic_energy(&self) -> f64 {
        let rot = *self.pose.orientation.to_rotation_matrix().matrix();
        let i = self.world_inertia(&rot);
        0.5 * self.mass * self.linvel.norm_squared() + 0.5 * self.angvel.dot(&(i * self.angvel))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub time: f64,
    /// False for robot-free worlds such as the settle drop.
    pub robot: bool,
    pub joint_positions: [f64; 9],
    pub joint_velocities: [f64; 9],
    /// Motor torques of the most recent substep.
    pub motor_torques: [f64; 9],
    pub blocks: Vec<BlockState>,
    pub obstacles: Vec<Cuboid>,
    pub params: WorldParams,
}

impl WorldState {
    pub fn new(joints: [f64; 9], blocks: Vec<BlockState>, obstacles: Vec<Cuboid>, params: WorldParams) -> Self {
        Self {
            time: 0.0,
            robot: true,
            joint_positions: joints,
            joint_velocities: [0.0; 9],
            motor_torques: [0.0; 9],
            blocks,
            obstacles,
            params,
        }
    }

    pub fn without_robot(blocks: Vec<BlockState>, obstacles: Vec<Cuboid>, params: WorldParams) -> Self {
        Self { robot: false, ..Self::new([0.0; 9], blocks, obstacles, params) }
    }

    pub fn fingertips(&self, constants: &PhysicsConstants) -> [Vec3; 3] {
        forward_kinematics(&constants.finger, &self.joint_positions)
    }

    pub fn block_cuboids(&self) -> Vec<Cuboid> {
        self.blocks.iter().map(BlockState::cuboid).collect()
    }

    /// Kinetic energy of the blocks.
    pub fn kinetic_energy(&self) -> f64 {
        self.blocks.iter().map(BlockState::kinetic_energy).sum::<f64>()
    }

    /// Kinetic plus gravitational potential energy of the blocks and joints.
    pub fn mechanical_energy(&self, constants: &PhysicsConstants) -> f64 {
        let pot: f64 = self
            .blocks
            .iter()
            .map(|b| -b.mass * self.params.gravity_z * b.pose.position.z)
            .sum();
        let inertia = joint_inertias(constants, &self.params.link_masses);
        let joints: f64 = (0..9).map(|j| 0.5 * inertia[j] * self.joint_velocities[j].powi(2)).sum();
        self.kinetic_energy() + pot + joints
    }

    fn check_finite(&self) -> Result<()> {
        for (i, b) in self.blocks.iter().enumerate() {
            let q = b.pose.orientation.quaternion();
            let finite = b.pose.position.iter().chain(b.linvel.iter()).chain(b.angvel.iter()).all(|v| v.is_finite())
                && q.coords.iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::SimulationDiverged { body: format!("block_{i}"), time: self.time });
            }
        }
        for f in 0..3 {
            let finite = (3 * f..3 * f + 3).all(|j| self.joint_positions[j].is_finite() && self.joint_velocities[j].is_finite());
            if !finite {
                return Err(Error::SimulationDiverged { body: format!("finger_{f}"), time: self.time });
            }
        }
        Ok(())
    }
}

/// Effective inertia of each joint about its axis, treating the downstream
/// links as point masses at their midpoints along a straight chain.
pub fn joint_inertias(constants: &PhysicsConstants, link_masses: &[f64; 9]) -> [f64; 9] {
    let l = constants.finger.link_lengths;
    std::array::from_fn(|j| {
        let (f, local) = (j / 3, j % 3);
        let mut inertia = constants.rotor_inertia;
        let mut reach = 0.0;
        for link in local..3 {
            let d = reach + 0.5 * l[link];
            inertia += link_masses[3 * f + link] * d * d;
            reach += l[link];
        }
        inertia
    })
}

/// Turns a command into a motor drive against the current state.
///
/// Delta modes are relative to the state passed in; end-effector modes are
/// solved with inverse kinematics seeded at the current joints. Unreachable
/// targets fall back to the best-effort solution.
pub fn resolve_command(state: &WorldState, cmd: &RobotCommand, constants: &PhysicsConstants) -> Result<(Drive, Option<IkSolution>)> {
    if cmd.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Action("action contains a non-finite value".into()));
    }
    let q = state.joint_positions;
    let v = cmd.values;
    let ee = |targets: [Vec3; 3]| inverse_kinematics(&constants.finger, &constants.ik, &targets, &q);
    let tips = || forward_kinematics(&constants.finger, &q);
    let limit = constants.torque_limit;
    Ok(match cmd.mode {
        ActionMode::JointPosition => (Drive::Position(v), None),
        ActionMode::DeltaJointPosition => (Drive::Position(std::array::from_fn(|i| q[i] + v[i])), None),
        ActionMode::JointTorque => (Drive::Torque(v.map(|t| t.clamp(-limit, limit))), None),
        ActionMode::DeltaJointTorque => (
            Drive::Torque(std::array::from_fn(|i| (state.motor_torques[i] + v[i]).clamp(-limit, limit))),
            None,
        ),
        ActionMode::EePosition => {
            let sol = ee(std::array::from_fn(|f| Vec3::new(v[3 * f], v[3 * f + 1], v[3 * f + 2])));
            (Drive::Position(sol.joints), Some(sol))
        }
        ActionMode::DeltaEePosition => {
            let t = tips();
            let sol = ee(std::array::from_fn(|f| t[f] + Vec3::new(v[3 * f], v[3 * f + 1], v[3 * f + 2])));
            (Drive::Position(sol.joints), Some(sol))
        }
    })
}

/// One simulation step of `constants.dt` under an arbitrary command.
pub fn step_world(state: &WorldState, cmd: &RobotCommand, constants: &PhysicsConstants) -> Result<WorldState> {
    let (drive, _) = resolve_command(state, cmd, constants)?;
    advance(state, &drive, constants)
}

/// One simulation step with the motors off.
pub fn step_passive(state: &WorldState, constants: &PhysicsConstants) -> Result<WorldState> {
    advance(state, &Drive::Torque([0.0; 9]), constants)
}

/// One simulation step of `constants.dt` under a resolved drive.
pub fn advance(state: &WorldState, drive: &Drive, constants: &PhysicsConstants) -> Result<WorldState> {
    let mut s = state.clone();
    let h = constants.dt / constants.substeps as f64;
    let inertia = joint_inertias(constants, &s.params.link_masses);
    let kd: [f64; 9] = std::array::from_fn(|j| 2.0 * constants.joint_damping_ratio * (constants.joint_kp * inertia[j]).sqrt());
    let mut scratch = Scratch::default();
    for _ in 0..constants.substeps {
        substep(&mut s, drive, constants, &inertia, &kd, h, &mut scratch);
    }
    s.time = state.time + constants.dt;
    s.check_finite()?;
    Ok(s)
}

#[derive(Default)]
struct Scratch {
    contacts: Vec<ContactPoint>,
    force: Vec<Vec3>,
    torque: Vec<Vec3>,
    geoms: Vec<BoxGeom>,
}

/// Force on body A at a contact, given the velocity of A relative to B.
fn contact_force(c: &ContactPoint, vrel: &Vec3, k: f64, damping: f64, friction_slope: f64, mu: f64) -> Vec3 {
    let vn = vrel.dot(&c.normal);
    let fn_mag = (k * c.depth - damping * vn).max(0.0);
    if fn_mag == 0.0 {
        return Vec3::zeros();
    }
    let vt = vrel - c.normal * vn;
    let speed = vt.norm();
    let mut f = c.normal * fn_mag;
    if speed > 0.0 {
        let ft = (friction_slope * speed).min(mu * fn_mag);
        f -= vt * (ft / speed);
    }
    f
}

fn substep(
    s: &mut WorldState,
    drive: &Drive,
    c: &PhysicsConstants,
    inertia: &[f64; 9],
    kd: &[f64; 9],
    h: f64,
    scratch: &mut Scratch,
) {
    let n = s.blocks.len();
    let Scratch { contacts, force, torque, geoms } = scratch;
    force.clear();
    torque.clear();
    geoms.clear();
    for b in &s.blocks {
        force.push(Vec3::new(0.0, 0.0, b.mass * s.params.gravity_z));
        torque.push(Vec3::zeros());
        geoms.push(b.geom());
    }
    let obstacle_geoms: Vec<BoxGeom> = s
        .obstacles
        .iter()
        .map(BoxGeom::from)
        .collect();
    let (k, cd, cf) = (c.contact_stiffness, c.contact_damping, c.friction_damping);

    let apply = |i: usize, p: &Vec3, f: &Vec3, force: &mut Vec<Vec3>, torque: &mut Vec<Vec3>, blocks: &[BlockState]| {
        force[i] += f;
        torque[i] += (p - blocks[i].pose.position).cross(f);
    };

    // Static environment.
    for i in 0..n {
        for (mu, wall) in [(s.params.floor_friction, false), (s.params.stage_friction, true)] {
            contacts.clear();
            if wall {
                contacts::box_wall(&geoms[i], c.stage_radius, contacts);
            } else {
                contacts::box_floor(&geoms[i], contacts);
            }
            let m = contacts.len() as f64;
            for cp in contacts.iter() {
                let v = s.blocks[i].point_velocity(&cp.point);
                let f = contact_force(cp, &v, k / m, cd / m, cf / m, mu);
                apply(i, &cp.point, &f, force, torque, &s.blocks);
            }
        }
        for og in &obstacle_geoms {
            contacts.clear();
            contacts::box_box(&geoms[i], og, contacts);
            let m = contacts.len() as f64;
            for cp in contacts.iter() {
                let v = s.blocks[i].point_velocity(&cp.point);
                let f = contact_force(cp, &v, k / m, cd / m, cf / m, c.block_friction);
                apply(i, &cp.point, &f, force, torque, &s.blocks);
            }
        }
    }

    // Block pairs.
    for i in 0..n {
        for j in i + 1..n {
            contacts.clear();
            contacts::box_box(&geoms[i], &geoms[j], contacts);
            let m = contacts.len() as f64;
            for cp in contacts.iter() {
                let v = s.blocks[i].point_velocity(&cp.point) - s.blocks[j].point_velocity(&cp.point);
                let f = contact_force(cp, &v, k / m, cd / m, cf / m, c.block_friction);
                apply(i, &cp.point, &f, force, torque, &s.blocks);
                apply(j, &cp.point, &(-f), force, torque, &s.blocks);
            }
        }
    }

    // Fingertips.
    let mut joint_torque = [0.0; 9];
    if s.robot {
        for f in 0..3 {
            let qf = &s.joint_positions[3 * f..3 * f + 3];
            let frames = kinematics::finger_frames(&c.finger, f, qf);
            let jac = frames.jacobian();
            let qd = Vec3::new(s.joint_velocities[3 * f], s.joint_velocities[3 * f + 1], s.joint_velocities[3 * f + 2]);
            let tip_v = jac * qd;
            let mut on_tip = Vec3::zeros();
            let r = c.fingertip_radius;
            if let Some(cp) = contacts::sphere_floor(&frames.tip, r) {
                on_tip += contact_force(&cp, &tip_v, k, cd, cf, c.fingertip_friction);
            }
            for og in &obstacle_geoms {
                if let Some(cp) = contacts::sphere_box(&frames.tip, r, og) {
                    on_tip += contact_force(&cp, &tip_v, k, cd, cf, c.fingertip_friction);
                }
            }
            for i in 0..n {
                if let Some(mut cp) = contacts::sphere_box(&frames.tip, r, &geoms[i]) {
                    // Normal from the fingertip towards the block.
                    cp.normal = -cp.normal;
                    let v = s.blocks[i].point_velocity(&cp.point) - tip_v;
                    let fb = contact_force(&cp, &v, k, cd, cf, c.fingertip_friction);
                    apply(i, &cp.point, &fb, force, torque, &s.blocks);
                    on_tip -= fb;
                }
            }
            let tau = jac.transpose() * on_tip;
            for a in 0..3 {
                joint_torque[3 * f + a] = tau[a];
            }
        }

        let limit = c.torque_limit;
        for j in 0..9 {
            let motor = match drive {
                Drive::Position(target) => {
                    (c.joint_kp * (target[j] - s.joint_positions[j]) - kd[j] * s.joint_velocities[j]).clamp(-limit, limit)
                }
                Drive::Torque(t) => t[j].clamp(-limit, limit),
            };
            s.motor_torques[j] = motor;
            let acc = (motor + joint_torque[j] - c.joint_viscous_damping * s.joint_velocities[j]) / inertia[j];
            s.joint_velocities[j] += h * acc;
            s.joint_positions[j] += h * s.joint_velocities[j];
        }
    }

    for (i, b) in s.blocks.iter_mut().enumerate() {
        let rot = geoms[i].rot;
        let inv_i = rot * Mat3::from_diagonal(&b.body_inertia().map(|v| 1.0 / v)) * rot.transpose();
        b.linvel += force[i] * (h / b.mass);
        b.angvel += inv_i * torque[i] * h;
        b.pose.position += b.linvel * h;
        b.pose.orientation = integrate_orientation(&b.pose.orientation, &b.angvel, h);
    }
}
