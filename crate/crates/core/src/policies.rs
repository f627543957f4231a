//! Scripted controllers used as oracles and in demos.
//!
//! Every policy reads the structured observation and emits joint-position
//! commands. Fingertip targets are turned into joints with the damped
//! least-squares solver seeded at the observed joints.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{inverse_kinematics, ActionMode, PhysicsConstants, RobotCommand};
use crate::env::{Observation, ObservationLayout};
use crate::math::{rng_for, uniform, Vec3};
use crate::{Error, Result};

pub trait Policy: Send {
    fn name(&self) -> &'static str;

    /// Clears internal state for a new episode.
    fn reset(&mut self, layout: ObservationLayout, seed: u64);

    fn act(&mut self, obs: &Observation) -> RobotCommand;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Noop,
    Push,
    Pick,
    Random,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [PolicyKind::Noop, PolicyKind::Push, PolicyKind::Pick, PolicyKind::Random];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Noop => "noop",
            PolicyKind::Push => "push",
            PolicyKind::Pick => "pick",
            PolicyKind::Random => "random",
        }
    }

    pub fn build(self, constants: &PhysicsConstants) -> Box<dyn Policy> {
        match self {
            PolicyKind::Noop => Box::new(NoopPolicy::default()),
            PolicyKind::Push => Box::new(PushPolicy::new(constants.clone())),
            PolicyKind::Pick => Box::new(PickPolicy::new(constants.clone())),
            PolicyKind::Random => Box::new(RandomPolicy::default()),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy `{s}`")))
    }
}

fn joints_of(obs: &Observation) -> [f64; 9] {
    std::array::from_fn(|i| obs.0[1 + i])
}

fn tips_of(obs: &Observation) -> [Vec3; 3] {
    std::array::from_fn(|f| Vec3::from(obs.vec3_at(19 + 3 * f)))
}

fn hold(obs: &Observation) -> RobotCommand {
    RobotCommand::new(ActionMode::JointPosition, joints_of(obs))
}

/// Largest carrot displacement per control step (m).
const CARROT_SPEED: f64 = 0.004;
/// Largest distance between a carrot and its fingertip (m).
const CARROT_LEASH: f64 = 0.03;

/// Commanded fingertip points that travel in straight lines toward their
/// targets and never run far ahead of the fingertips, so the joint loop
/// traces lines instead of joint-space arcs.
#[derive(Clone, Debug, Default)]
struct Carrot {
    points: Option<[Vec3; 3]>,
}

impl Carrot {
    fn advance(&mut self, tips: &[Vec3; 3], targets: &[Vec3; 3]) -> [Vec3; 3] {
        let prev = self.points.unwrap_or(*tips);
        let next = std::array::from_fn(|f| {
            let d = targets[f] - prev[f];
            let n = d.norm();
            let p = if n > CARROT_SPEED { prev[f] + d * (CARROT_SPEED / n) } else { targets[f] };
            let off = p - tips[f];
            if off.norm() > CARROT_LEASH {
                tips[f] + off * (CARROT_LEASH / off.norm())
            } else {
                p
            }
        });
        self.points = Some(next);
        next
    }
}

fn solve_ik(constants: &PhysicsConstants, obs: &Observation, points: &[Vec3; 3]) -> RobotCommand {
    let sol = inverse_kinematics(&constants.finger, &constants.ik, points, &joints_of(obs));
    RobotCommand::new(ActionMode::JointPosition, sol.joints)
}

fn flat(v: &Vec3) -> Vec3 {
    Vec3::new(v.x, v.y, 0.0)
}

/// Holds the first observed joint positions.
#[derive(Clone, Debug, Default)]
pub struct NoopPolicy {
    joints: Option<[f64; 9]>,
}

impl Policy for NoopPolicy {
    fn name(&self) -> &'static str {
        "noop"
    }

    fn reset(&mut self, _layout: ObservationLayout, _seed: u64) {
        self.joints = None;
    }

    fn act(&mut self, obs: &Observation) -> RobotCommand {
        let q = *self.joints.get_or_insert_with(|| joints_of(obs));
        RobotCommand::new(ActionMode::JointPosition, q)
    }
}

/// Uniform joint targets, redrawn every `hold_steps` steps.
#[derive(Clone, Debug)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
    target: [f64; 9],
    steps: usize,
    pub hold_steps: usize,
}

impl Default for RandomPolicy {
    fn default() -> Self {
        Self { rng: rng_for(0, 0x7a9d), target: [0.0; 9], steps: 0, hold_steps: 10 }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &'static str {
        "random"
    }

    fn reset(&mut self, _layout: ObservationLayout, seed: u64) {
        self.rng = rng_for(seed, 0x7a9d);
        self.steps = 0;
    }

    fn act(&mut self, _obs: &Observation) -> RobotCommand {
        const LO: [f64; 3] = [-1.57, -1.2, -3.0];
        const HI: [f64; 3] = [-0.69, 0.0, 0.0];
        if self.steps.is_multiple_of(self.hold_steps) {
            let rng = &mut self.rng;
            self.target = std::array::from_fn(|i| uniform(rng, LO[i % 3], HI[i % 3]));
        }
        self.steps += 1;
        RobotCommand::new(ActionMode::JointPosition, self.target)
    }
}

/// Steps after which a positioning phase moves on even if the fingertips
/// have not settled on their targets.
const PHASE_STEPS: usize = 60;
/// Fingertip targets closer than this count as reached.
const REACHED: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PushPhase {
    Lift,
    Approach,
    Descend,
    Push,
    Hold,
}

/// Push-to-goal controller.
///
/// The block is pushed in legs along the goal's own axes, each leg with a
/// bar of two fingertips flush against one face, so the block squares up to
/// the goal orientation as it slides. The third finger parks above its
/// base. Once the block is within `tolerance` of the goal the fingers back
/// off and hold.
#[derive(Clone, Debug)]
pub struct PushPolicy {
    constants: PhysicsConstants,
    layout: Option<ObservationLayout>,
    pub phase: PushPhase,
    pub tolerance: f64,
    /// How far ahead of the contact point the fingertips are commanded.
    pub lead: f64,
    /// Lateral drift of the block off the bar center that triggers a new
    /// approach.
    pub realign: f64,
    /// Remaining error along a leg's axis at which the leg ends.
    pub leg_done: f64,
    direction: Vec3,
    pushers: [bool; 3],
    timer: usize,
    carrot: Carrot,
    hold_targets: Option<[Vec3; 3]>,
}

impl PushPolicy {
    pub fn new(constants: PhysicsConstants) -> Self {
        Self {
            constants,
            layout: None,
            phase: PushPhase::Lift,
            tolerance: 0.01,
            lead: 0.008,
            realign: 0.012,
            leg_done: 0.003,
            direction: Vec3::y(),
            pushers: [true; 3],
            timer: 0,
            carrot: Carrot::default(),
            hold_targets: None,
        }
    }

    fn enter(&mut self, phase: PushPhase) {
        self.phase = phase;
        self.timer = 0;
        self.hold_targets = None;
    }

    fn solve(&mut self, obs: &Observation, targets: [Vec3; 3]) -> RobotCommand {
        let points = self.carrot.advance(&tips_of(obs), &targets);
        solve_ik(&self.constants, obs, &points)
    }

    /// Parking spot of a finger: high and toward its own base.
    fn park(&self, f: usize) -> Vec3 {
        let a = 2.0 * std::f64::consts::PI * f as f64 / 3.0;
        Vec3::new(0.1 * a.cos(), 0.1 * a.sin(), 0.16)
    }

    /// Picks the two fingers whose shoulders are most comfortably placed
    /// for the whole stroke from `start` to `end`.
    fn choose_pushers(&mut self, start: &Vec3, end: &Vec3) {
        let geom = &self.constants.finger;
        let comfort = 0.5 * (geom.link_lengths[1] + geom.link_lengths[2]) + 0.05;
        let mut d: Vec<(f64, usize)> = (0..3)
            .map(|f| {
                let a = 2.0 * std::f64::consts::PI * f as f64 / 3.0;
                let shoulder = Vec3::new(
                    geom.base_radius * a.cos(),
                    geom.base_radius * a.sin(),
                    geom.base_height - geom.link_lengths[0],
                );
                let worst = [start, end]
                    .iter()
                    .map(|p| ((*p - shoulder).norm() - comfort).abs())
                    .fold(0.0, f64::max);
                (worst, f)
            })
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0));
        self.pushers = [false; 3];
        self.pushers[d[0].1] = true;
        self.pushers[d[1].1] = true;
    }

    /// Bar of pusher targets centered on `center`, perpendicular to the
    /// pushing direction.
    fn bar(&self, center: &Vec3, half_width: f64) -> [Vec3; 3] {
        let side = Vec3::new(-self.direction.y, self.direction.x, 0.0);
        let mut k = 0;
        std::array::from_fn(|f| {
            if !self.pushers[f] {
                return self.park(f);
            }
            let s = if k == 0 { -1.0 } else { 1.0 };
            k += 1;
            center + side * (s * half_width)
        })
    }
}

/// Goal-frame axis, as a signed horizontal unit vector, along which most of
/// `error` lies.
fn leg_direction(error: &Vec3, goal_yaw: f64) -> Vec3 {
    let ax = Vec3::new(goal_yaw.cos(), goal_yaw.sin(), 0.0);
    let ay = Vec3::new(-goal_yaw.sin(), goal_yaw.cos(), 0.0);
    let (ex, ey) = (error.dot(&ax), error.dot(&ay));
    if ex.abs() >= ey.abs() {
        ax * ex.signum()
    } else {
        ay * ey.signum()
    }
}

fn yaw_at(obs: &Observation, at: usize) -> f64 {
    let [x, y, z, w] = [obs.0[at], obs.0[at + 1], obs.0[at + 2], obs.0[at + 3]];
    (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z))
}

impl Policy for PushPolicy {
    fn name(&self) -> &'static str {
        "push"
    }

    fn reset(&mut self, layout: ObservationLayout, _seed: u64) {
        self.layout = Some(layout);
        self.pushers = [true; 3];
        self.carrot = Carrot::default();
        self.enter(PushPhase::Lift);
    }

    fn act(&mut self, obs: &Observation) -> RobotCommand {
        let Some(layout) = self.layout else { return hold(obs) };
        if layout.blocks == 0 || layout.goal_parts == 0 {
            return hold(obs);
        }
        let b = layout.block(0);
        let block = Vec3::from(obs.vec3_at(b));
        let size = obs.vec3_at(b + 13);
        let g = layout.goal_part(0);
        let goal = Vec3::from(obs.vec3_at(g));
        let goal_yaw = yaw_at(obs, g + 3);
        let tips = tips_of(obs);
        let r = self.constants.fingertip_radius;

        let to_goal = flat(&(goal - block));
        let dist = to_goal.norm();
        if dist < self.tolerance && self.phase != PushPhase::Hold {
            self.enter(PushPhase::Hold);
        }
        let half = 0.5 * size[0].max(size[1]);
        let push_z = (0.4 * size[2]).max(r + 0.002);
        let travel_z = block.z + 0.5 * size[2] + r + 0.012;
        let half_width = (0.3 * size[0].min(size[1])).min(0.02);
        self.timer += 1;
        let arrived = |targets: &[Vec3; 3], pushers: &[bool; 3], timer: usize| {
            timer > PHASE_STEPS || (0..3).filter(|&f| pushers[f]).all(|f| (tips[f] - targets[f]).norm() < REACHED)
        };

        // A realignment can chain through several phases in one step; the
        // bound keeps a degenerate scene from cycling forever.
        for _ in 0..8 {
            match self.phase {
                PushPhase::Lift => {
                    self.direction = leg_direction(&to_goal, goal_yaw);
                    let behind = flat(&block) - self.direction * (half + r + 0.015);
                    let end = flat(&block) + self.direction * (to_goal.dot(&self.direction) - half - r);
                    self.choose_pushers(&Vec3::new(behind.x, behind.y, travel_z), &Vec3::new(end.x, end.y, push_z));
                    let targets = std::array::from_fn(|f| {
                        if self.pushers[f] {
                            Vec3::new(tips[f].x, tips[f].y, travel_z.max(tips[f].z))
                        } else {
                            self.park(f)
                        }
                    });
                    if self.timer > PHASE_STEPS || (0..3).filter(|&f| self.pushers[f]).all(|f| tips[f].z >= travel_z - REACHED) {
                        self.enter(PushPhase::Approach);
                        continue;
                    }
                    return self.solve(obs, targets);
                }
                PushPhase::Approach => {
                    let behind = flat(&block) - self.direction * (half + r + 0.015);
                    let targets = self.bar(&Vec3::new(behind.x, behind.y, travel_z), half_width);
                    if arrived(&targets, &self.pushers, self.timer) {
                        self.enter(PushPhase::Descend);
                        continue;
                    }
                    return self.solve(obs, targets);
                }
                PushPhase::Descend => {
                    let behind = flat(&block) - self.direction * (half + r + 0.015);
                    let targets = self.bar(&Vec3::new(behind.x, behind.y, push_z), half_width);
                    if arrived(&targets, &self.pushers, self.timer) {
                        self.enter(PushPhase::Push);
                        continue;
                    }
                    return self.solve(obs, targets);
                }
                PushPhase::Push => {
                    let side = Vec3::new(-self.direction.y, self.direction.x, 0.0);
                    let pushers: Vec<&Vec3> = (0..3).filter(|&f| self.pushers[f]).map(|f| &tips[f]).collect();
                    let bar_center = pushers.iter().fold(Vec3::zeros(), |a, t| a + flat(t)) / pushers.len() as f64;
                    let off_line = (flat(&block) - bar_center).dot(&side).abs();
                    let along = to_goal.dot(&self.direction);
                    if off_line > self.realign || along < self.leg_done {
                        self.enter(PushPhase::Lift);
                        continue;
                    }
                    let contact = flat(&block) - self.direction * (half + r);
                    let center = contact + self.direction * self.lead.min(along);
                    let targets = self.bar(&Vec3::new(center.x, center.y, push_z), half_width);
                    return self.solve(obs, targets);
                }
                PushPhase::Hold => {
                    if dist > 2.0 * self.tolerance {
                        self.enter(PushPhase::Lift);
                        continue;
                    }
                    let back = self.direction * 0.02;
                    let pushers = self.pushers;
                    let parked: [Vec3; 3] = std::array::from_fn(|f| self.park(f));
                    let targets = *self.hold_targets.get_or_insert_with(|| {
                        std::array::from_fn(|f| {
                            if pushers[f] {
                                tips[f] - back + Vec3::new(0.0, 0.0, 0.03)
                            } else {
                                parked[f]
                            }
                        })
                    });
                    return self.solve(obs, targets);
                }
            }
        }
        hold(obs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PickPhase {
    Open,
    Descend,
    Grasp,
    Carry,
}

/// Grasps block 0 between two opposing fingertips and carries it to goal 0.
///
/// The grasp axis is the block face axis best matched by a pair of fingers
/// standing on opposite sides; the remaining finger parks.
#[derive(Clone, Debug)]
pub struct PickPolicy {
    constants: PhysicsConstants,
    layout: Option<ObservationLayout>,
    pub phase: PickPhase,
    /// How far inside the block faces the fingertips are commanded.
    pub squeeze: f64,
    /// Control steps spent closing the grasp before lifting.
    pub grasp_steps: usize,
    timer: usize,
    carrot: Carrot,
    /// Grasp axis and the fingers on its positive and negative side.
    grasp: Option<(Vec3, usize, usize)>,
}

impl PickPolicy {
    pub fn new(constants: PhysicsConstants) -> Self {
        Self {
            constants,
            layout: None,
            phase: PickPhase::Open,
            squeeze: 0.012,
            grasp_steps: 25,
            timer: 0,
            carrot: Carrot::default(),
            grasp: None,
        }
    }

    fn enter(&mut self, phase: PickPhase) {
        self.phase = phase;
        self.timer = 0;
    }

    fn solve(&mut self, obs: &Observation, targets: [Vec3; 3]) -> RobotCommand {
        let points = self.carrot.advance(&tips_of(obs), &targets);
        solve_ik(&self.constants, obs, &points)
    }

    fn choose_grasp(block_yaw: f64) -> (Vec3, usize, usize) {
        let dirs: [Vec3; 3] = std::array::from_fn(|f| {
            let a = 2.0 * std::f64::consts::PI * f as f64 / 3.0;
            Vec3::new(a.cos(), a.sin(), 0.0)
        });
        let mut best = (f64::NEG_INFINITY, (Vec3::x(), 0, 1));
        for axis in [block_yaw, block_yaw + 0.5 * std::f64::consts::PI] {
            let u = Vec3::new(axis.cos(), axis.sin(), 0.0);
            for (i, j) in [(0, 1), (0, 2), (1, 2), (1, 0), (2, 0), (2, 1)] {
                let score = dirs[i].dot(&u) - dirs[j].dot(&u);
                if score > best.0 {
                    best = (score, (u, i, j));
                }
            }
        }
        best.1
    }

    /// Fingertip targets on both sides of `center` along the grasp axis,
    /// `gap` outside the faces; the idle finger parks.
    fn pinch(&self, center: &Vec3, half: f64, gap: f64) -> [Vec3; 3] {
        let (u, pos, neg) = self.grasp.unwrap_or((Vec3::x(), 0, 1));
        let d = half + self.constants.fingertip_radius + gap;
        std::array::from_fn(|f| {
            if f == pos {
                center + u * d
            } else if f == neg {
                center - u * d
            } else {
                let a = 2.0 * std::f64::consts::PI * f as f64 / 3.0;
                Vec3::new(0.1 * a.cos(), 0.1 * a.sin(), 0.2)
            }
        })
    }
}

impl Policy for PickPolicy {
    fn name(&self) -> &'static str {
        "pick"
    }

    fn reset(&mut self, layout: ObservationLayout, _seed: u64) {
        self.layout = Some(layout);
        self.carrot = Carrot::default();
        self.grasp = None;
        self.enter(PickPhase::Open);
    }

    fn act(&mut self, obs: &Observation) -> RobotCommand {
        let Some(layout) = self.layout else { return hold(obs) };
        if layout.blocks == 0 || layout.goal_parts == 0 {
            return hold(obs);
        }
        let b = layout.block(0);
        let block = Vec3::from(obs.vec3_at(b));
        let size = obs.vec3_at(b + 13);
        let goal = Vec3::from(obs.vec3_at(layout.goal_part(0)));
        let tips = tips_of(obs);
        self.timer += 1;

        for _ in 0..4 {
            if self.grasp.is_none() || self.phase == PickPhase::Open {
                self.grasp = Some(Self::choose_grasp(yaw_at(obs, b + 3)));
            }
            let (u, pos, neg) = self.grasp.expect("grasp chosen");
            let half = 0.5 * (size[0] * u.dot(&Vec3::x()).abs().max(u.dot(&Vec3::y()).abs())).max(0.5 * size[0].min(size[1]));
            let pair = [pos, neg];
            let reached = |targets: &[Vec3; 3], timer: usize| {
                timer > PHASE_STEPS || pair.iter().all(|&f| (tips[f] - targets[f]).norm() < REACHED)
            };
            match self.phase {
                PickPhase::Open => {
                    let above = Vec3::new(block.x, block.y, block.z + 0.5 * size[2] + 0.03);
                    let targets = self.pinch(&above, half, 0.02);
                    if reached(&targets, self.timer) {
                        self.enter(PickPhase::Descend);
                        continue;
                    }
                    return self.solve(obs, targets);
                }
                PickPhase::Descend => {
                    let targets = self.pinch(&block, half, 0.015);
                    if reached(&targets, self.timer) {
                        self.enter(PickPhase::Grasp);
                        continue;
                    }
                    return self.solve(obs, targets);
                }
                PickPhase::Grasp => {
                    if self.timer > self.grasp_steps {
                        self.enter(PickPhase::Carry);
                        continue;
                    }
                    let targets = self.pinch(&block, half, -self.squeeze);
                    return self.solve(obs, targets);
                }
                PickPhase::Carry => {
                    let mid = (tips[pos] + tips[neg]) * 0.5;
                    let dropped = (mid - block).norm() > 0.025;
                    if dropped && self.timer > 10 {
                        self.enter(PickPhase::Open);
                        continue;
                    }
                    let targets = self.pinch(&goal, half, -self.squeeze);
                    return self.solve(obs, targets);
                }
            }
        }
        hold(obs)
    }
}
