//! Environment lifecycle: reset, step and in-episode do-interventions.
//!
//! An [`Env`] owns one world. Its configuration is the source of truth for
//! everything static (goal, sizes, masses, friction, gravity); the world
//! state carries the dynamic part. Before a mid-episode intervention is
//! validated, block poses and joint positions are copied from the world into
//! the configuration so the family rules see the scene as it is.

use serde::{Deserialize, Serialize};

use crate::dynamics::{self, ActionMode, BlockState, PhysicsConstants, RobotCommand, WorldParams, WorldState};
use crate::geometry::{GoalShape, OverlapOptions};
use crate::math::{mix_seed, yaw_of};
use crate::param_space::{instance_id, Catalog, EnvConfig, Intervention, Outcome, Rejection};
use crate::rewards::{self, RewardContext, RewardType, Snapshot, DEFAULT_SPARSE_THRESHOLD};
use crate::tasks::{self, Family, Phase, TaskInstance};
use crate::{Error, Result};

/// Entries before the first block: time left, joint positions, joint
/// velocities and fingertip positions.
pub const OBS_HEADER: usize = 1 + 9 + 9 + 9;
/// Position, quaternion, linear and angular velocity, size and mass.
pub const OBS_PER_BLOCK: usize = 3 + 4 + 3 + 3 + 3 + 1;
/// Position, quaternion and size.
pub const OBS_PER_PART: usize = 3 + 4 + 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationLayout {
    pub blocks: usize,
    pub goal_parts: usize,
    pub obstacles: usize,
}

impl ObservationLayout {
    pub fn new(blocks: usize, goal_parts: usize, obstacles: usize) -> Self {
        Self { blocks, goal_parts, obstacles }
    }

    pub fn for_task(task: &TaskInstance) -> Self {
        Self::new(task.blocks.len(), task.goal.len(), task.obstacles.len())
    }

    pub fn len(&self) -> usize {
        OBS_HEADER + OBS_PER_BLOCK * self.blocks + OBS_PER_PART * (self.goal_parts + self.obstacles)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn block(&self, i: usize) -> usize {
        OBS_HEADER + OBS_PER_BLOCK * i
    }

    pub fn goal_part(&self, j: usize) -> usize {
        OBS_HEADER + OBS_PER_BLOCK * self.blocks + OBS_PER_PART * j
    }

    pub fn obstacle(&self, k: usize) -> usize {
        self.goal_part(self.goal_parts) + OBS_PER_PART * k
    }

    /// Named slices, in order, for documentation and the wire protocol.
    pub fn fields(&self) -> Vec<(String, usize, usize)> {
        let mut out = vec![
            ("time_left_fraction".to_string(), 0, 1),
            ("joint_positions".to_string(), 1, 9),
            ("joint_velocities".to_string(), 10, 9),
            ("fingertip_positions".to_string(), 19, 9),
        ];
        let block = ["position", "orientation", "linear_velocity", "angular_velocity", "size", "mass"];
        let block_len = [3, 4, 3, 3, 3, 1];
        for i in 0..self.blocks {
            let mut at = self.block(i);
            for (name, len) in block.iter().zip(block_len) {
                out.push((format!("block_{i}.{name}"), at, len));
                at += len;
            }
        }
        let part = [("position", 3), ("orientation", 4), ("size", 3)];
        for (scope, count, start) in [
            ("goal", self.goal_parts, self.goal_part(0)),
            ("obstacle", self.obstacles, self.obstacle(0)),
        ] {
            for j in 0..count {
                let mut at = start + OBS_PER_PART * j;
                for (name, len) in part {
                    out.push((format!("{scope}_{j}.{name}"), at, len));
                    at += len;
                }
            }
        }
        out
    }
}

/// Structured observation vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn vec3_at(&self, at: usize) -> [f64; 3] {
        [self.0[at], self.0[at + 1], self.0[at + 2]]
    }

    /// Bitwise digest, used by episode logs.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in &self.0 {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(&h.finalize()[..16])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub fractional_success: f64,
    /// Interventions applied since the previous step.
    pub interventions_applied: usize,
    /// Interventions suppressed since the previous step.
    pub suppressed: usize,
    pub time_left_seconds: f64,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterventionResult {
    pub applied: bool,
    pub observation: Observation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection: Option<Rejection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvOptions {
    pub reward: RewardType,
    pub sparse_threshold: f64,
    pub action_mode: ActionMode,
    pub overlap: OverlapOptions,
}

impl Default for EnvOptions {
    fn default() -> Self {
        Self {
            reward: RewardType::Fractional,
            sparse_threshold: DEFAULT_SPARSE_THRESHOLD,
            action_mode: ActionMode::JointPosition,
            overlap: OverlapOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
struct Episode {
    task: TaskInstance,
    config: EnvConfig,
    world: WorldState,
    seed: u64,
    steps: u64,
    done: bool,
    interventions: u64,
    applied: usize,
    suppressed: usize,
}

#[derive(Clone, Debug)]
pub struct Env {
    catalog: Catalog,
    constants: PhysicsConstants,
    options: EnvOptions,
    episode: Option<Episode>,
}

fn world_params(config: &EnvConfig) -> WorldParams {
    let d = WorldParams::default();
    WorldParams {
        gravity_z: config.scalar("gravity_z").unwrap_or(d.gravity_z),
        floor_friction: config.scalar("floor_friction").unwrap_or(d.floor_friction),
        stage_friction: config.scalar("stage_friction").unwrap_or(d.stage_friction),
        link_masses: std::array::from_fn(|k| config.scalar(&instance_id("link.mass", k)).unwrap_or(d.link_masses[k])),
    }
}

fn joints(config: &EnvConfig) -> [f64; 9] {
    match config.get("joint_positions") {
        Some(q) if q.len() == 9 => std::array::from_fn(|i| q[i]),
        _ => dynamics::DEFAULT_JOINTS,
    }
}

fn build_world(task: &TaskInstance, config: &EnvConfig) -> WorldState {
    let blocks = task.blocks.iter().map(|c| BlockState::at_rest(c.pose, c.size, c.mass)).collect();
    WorldState::new(joints(config), blocks, task.obstacles.clone(), world_params(config))
}

fn rejected_or<T>(o: Outcome<T>) -> std::result::Result<T, Rejection> {
    match o {
        Outcome::Accepted(v) => Ok(v),
        Outcome::Rejected(r) => Err(r),
    }
}

impl Env {
    pub fn new(options: EnvOptions) -> Self {
        Self::with_parts(Catalog::shipped(), PhysicsConstants::shipped(), options)
    }

    pub fn with_parts(catalog: Catalog, constants: PhysicsConstants, options: EnvOptions) -> Self {
        Self { catalog, constants, options, episode: None }
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn constants(&self) -> &PhysicsConstants {
        &self.constants
    }

    pub fn options(&self) -> &EnvOptions {
        &self.options
    }

    fn live(&self) -> Result<&Episode> {
        self.episode.as_ref().ok_or_else(|| Error::Lifecycle("reset has not been called".into()))
    }

    /// Starts an episode of `task.family` under `config`.
    pub fn reset(&mut self, task: &TaskInstance, config: &EnvConfig, seed: u64) -> Result<Observation> {
        let family = task.family;
        if let Outcome::Rejected(r) = tasks::validate_config(family, config)? {
            return Err(Error::Config(format!("{family} configuration rejected: {}", r.detail)));
        }
        if let Outcome::Rejected(r) = tasks::check_feasibility(family, &self.constants, config)? {
            return Err(Error::Config(format!("infeasible configuration: {}", r.detail)));
        }
        if self.options.reward == RewardType::Dense && !family.has_dense_reward() {
            return Err(Error::UnsupportedFamily(family.to_string()));
        }
        let task = TaskInstance::from_config(family, config, &self.constants)?;
        let world = build_world(&task, config);
        self.episode = Some(Episode {
            task,
            config: config.clone(),
            world,
            seed,
            steps: 0,
            done: false,
            interventions: 0,
            applied: 0,
            suppressed: 0,
        });
        self.observation()
    }

    /// Resets to the task's own configuration.
    pub fn reset_task(&mut self, task: &TaskInstance, seed: u64) -> Result<Observation> {
        let config = task.config.clone();
        self.reset(task, &config, seed)
    }

    pub fn task(&self) -> Result<&TaskInstance> {
        Ok(&self.live()?.task)
    }

    pub fn world(&self) -> Result<&WorldState> {
        Ok(&self.live()?.world)
    }

    /// Seed the running episode was reset with.
    pub fn seed(&self) -> Result<u64> {
        Ok(self.live()?.seed)
    }

    pub fn steps(&self) -> Result<u64> {
        Ok(self.live()?.steps)
    }

    pub fn is_done(&self) -> bool {
        self.episode.as_ref().is_some_and(|e| e.done)
    }

    pub fn layout(&self) -> Result<ObservationLayout> {
        Ok(ObservationLayout::for_task(&self.live()?.task))
    }

    /// The configuration with block poses and joint positions read back from
    /// the world.
    pub fn exposed_config(&self) -> Result<EnvConfig> {
        let ep = self.live()?;
        let mut cfg = ep.config.clone();
        for (i, b) in ep.world.blocks.iter().enumerate() {
            let id = instance_id("block.pose_cyl", i);
            cfg.set(id, tasks::cyl_from_position(&b.pose.position, yaw_of(&b.pose.orientation)));
        }
        if cfg.get("joint_positions").is_some() {
            cfg.set("joint_positions", ep.world.joint_positions.to_vec());
        }
        Ok(cfg)
    }

    pub fn fractional_success(&self) -> Result<f64> {
        let ep = self.live()?;
        rewards::fractional_success_with(&ep.world, &ep.task.goal, &self.options.overlap)
    }

    pub fn observation(&self) -> Result<Observation> {
        let ep = self.live()?;
        let layout = ObservationLayout::for_task(&ep.task);
        let w = &ep.world;
        let mut v = Vec::with_capacity(layout.len());
        let limit = ep.task.episode_limit_steps as f64;
        v.push((limit - ep.steps as f64) / limit);
        v.extend_from_slice(&w.joint_positions);
        v.extend_from_slice(&w.joint_velocities);
        for t in w.fingertips(&self.constants) {
            v.extend_from_slice(&[t.x, t.y, t.z]);
        }
        for b in &w.blocks {
            v.extend(b.pose.position.iter());
            v.extend_from_slice(&b.pose.quat_xyzw());
            v.extend(b.linvel.iter());
            v.extend(b.angvel.iter());
            v.extend_from_slice(&b.size);
            v.push(b.mass);
        }
        for c in ep.task.goal.parts.iter().chain(&ep.task.obstacles) {
            v.extend(c.pose.position.iter());
            v.extend_from_slice(&c.pose.quat_xyzw());
            v.extend_from_slice(&c.size);
        }
        debug_assert_eq!(v.len(), layout.len());
        Ok(Observation(v))
    }

    /// Advances one control period.
    pub fn step(&mut self, action: &RobotCommand) -> Result<StepResult> {
        let mode = self.options.action_mode;
        let ep = self.live()?;
        if ep.done {
            return Err(Error::Lifecycle("episode is over; call reset".into()));
        }
        if action.mode != mode {
            return Err(Error::Action(format!("environment expects {} actions, got {}", mode.name(), action.mode.name())));
        }
        let (drive, _) = dynamics::resolve_command(&ep.world, action, &self.constants)?;
        let mut world = ep.world.clone();
        for _ in 0..self.constants.sim_steps_per_control {
            world = dynamics::advance(&world, &drive, &self.constants)?;
        }
        let prev = Snapshot::from_state(&ep.world, &self.constants);
        let curr = Snapshot::from_state(&world, &self.constants);

        let ep = self.episode.as_mut().expect("live episode");
        ep.world = world;
        ep.steps += 1;
        ep.done = ep.steps >= ep.task.episode_limit_steps;
        let fraction = rewards::fractional_success_with(&ep.world, &ep.task.goal, &self.options.overlap)?;
        let reward = match self.options.reward {
            RewardType::Fractional => fraction,
            RewardType::Sparse => rewards::sparse_reward(fraction, self.options.sparse_threshold),
            RewardType::Dense => rewards::dense_reward(&reward_context(&ep.task, prev, curr))?,
        };
        let info = StepInfo {
            fractional_success: fraction,
            interventions_applied: std::mem::take(&mut ep.applied),
            suppressed: std::mem::take(&mut ep.suppressed),
            time_left_seconds: (ep.task.episode_limit_steps - ep.steps) as f64 / self.constants.control_rate_hz() as f64,
            step: ep.steps,
        };
        let done = ep.done;
        Ok(StepResult { observation: self.observation()?, reward, done, info })
    }

    /// Applies `iv` to the running episode.
    ///
    /// Malformed interventions are errors. Interventions the family rules
    /// reject leave the world untouched and report `applied = false`.
    pub fn do_intervention(&mut self, iv: &Intervention) -> Result<InterventionResult> {
        let base = self.exposed_config()?;
        let ep = self.live()?;
        let family = ep.task.family;
        let seed = mix_seed(&[ep.seed, ep.steps, ep.interventions]);
        let outcome = tasks::prepare_intervention(family, &self.catalog, &self.constants, &base, iv, Phase::MidEpisode, seed)?;
        let ep = self.episode.as_mut().expect("live episode");
        ep.interventions += 1;
        let next = match rejected_or(outcome) {
            Ok(next) => next,
            Err(r) => {
                ep.suppressed += 1;
                return Ok(InterventionResult { applied: false, observation: self.observation()?, rejection: Some(r) });
            }
        };
        let changed = base.diff(&next);
        let task = TaskInstance::from_config(family, &next, &self.constants)?;
        let mut world = ep.world.clone();
        world.params = world_params(&next);
        if changed.contains("joint_positions") {
            world.joint_positions = joints(&next);
            world.joint_velocities = [0.0; 9];
        }
        for (i, b) in world.blocks.iter_mut().enumerate() {
            let touched = ["block.pose_cyl", "block.size", "block.mass"]
                .iter()
                .any(|t| changed.contains(&instance_id(t, i)));
            if !touched {
                continue;
            }
            let c = &task.blocks[i];
            if changed.contains(&instance_id("block.pose_cyl", i)) {
                *b = BlockState::at_rest(c.pose, c.size, c.mass);
            } else {
                b.size = c.size;
                b.mass = c.mass;
            }
        }
        ep.world = world;
        ep.task = task;
        ep.config = next;
        ep.applied += 1;
        Ok(InterventionResult { applied: true, observation: self.observation()?, rejection: None })
    }
}

fn reward_context(task: &TaskInstance, prev: Snapshot, curr: Snapshot) -> RewardContext {
    RewardContext {
        family: task.family,
        prev,
        curr,
        goals: task.goal.parts.iter().map(|g| g.pose.position.into()).collect(),
        goal_sizes: task.goal.parts.iter().map(|g| g.size).collect(),
    }
}

/// Goal of a task as currently configured, for callers that only hold a
/// family and a configuration.
pub fn goal_of(family: Family, config: &EnvConfig, constants: &PhysicsConstants) -> Result<GoalShape> {
    Ok(TaskInstance::from_config(family, config, constants)?.goal)
}
