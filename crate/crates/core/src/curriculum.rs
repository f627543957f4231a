//! Scheduled intervention actors and their composition into curricula.
//!
//! An actor is plain data: a schedule, a sampling rule and a space. The
//! sampling itself is a pure function of the exposed configuration and a
//! seed, so curricula serialize to JSON and replay exactly.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::PhysicsConstants;
use crate::env::{Env, InterventionResult, Observation};
use crate::math::{mix_seed, rng_for};
use crate::param_space::{split_id, Catalog, EnvConfig, Intervention, Outcome, Rejection, Space};
use crate::tasks::{prepare_intervention, sample_all, sample_groups, sample_variables, Family, FamilySample, Phase, TaskInstance, VariableGroup};
use crate::{Error, Result};

/// When an actor fires.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorSchedule {
    pub start_episode: u64,
    /// Exclusive.
    pub stop_episode: u64,
    /// Control step the actor acts before; 0 means at reset.
    pub timestep_in_episode: u64,
    pub episode_periodicity: u64,
}

impl ActorSchedule {
    pub fn new(start_episode: u64, stop_episode: u64, timestep_in_episode: u64, episode_periodicity: u64) -> Result<Self> {
        let s = Self {
            start_episode,
            stop_episode,
            timestep_in_episode,
            episode_periodicity,
        };
        s.validate()?;
        Ok(s)
    }

    /// Every episode, at reset, forever.
    pub fn every_reset() -> Self {
        Self {
            start_episode: 0,
            stop_episode: u64::MAX,
            timestep_in_episode: 0,
            episode_periodicity: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.start_episode >= self.stop_episode {
            return Err(Error::Config(format!(
                "schedule starts at episode {} but stops at {}",
                self.start_episode, self.stop_episode
            )));
        }
        if self.episode_periodicity == 0 {
            return Err(Error::Config("episode periodicity must be at least 1".into()));
        }
        Ok(())
    }

    /// Checks the timestep against an episode length in control steps.
    pub fn validate_for(&self, episode_limit_steps: u64) -> Result<()> {
        self.validate()?;
        if self.timestep_in_episode >= episode_limit_steps {
            return Err(Error::Config(format!(
                "timestep {} is past the episode limit of {episode_limit_steps} steps",
                self.timestep_in_episode
            )));
        }
        Ok(())
    }

    pub fn fires(&self, episode: u64, step: u64) -> bool {
        (self.start_episode..self.stop_episode).contains(&episode)
            && (episode - self.start_episode).is_multiple_of(self.episode_periodicity)
            && step == self.timestep_in_episode
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorType {
    /// Redraws the goal pose (and the picking height).
    GoalRandomizer,
    /// Redraws every variable the family lets vary, structure included.
    FullRandomizer,
    /// Redraws the listed variables; template ids cover every instance.
    VariableRandomizer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterventionActor {
    pub actor_type: ActorType,
    pub schedule: ActorSchedule,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub variables: BTreeSet<String>,
    pub space: Space,
}

/// What an actor needs to know about the environment it drives.
#[derive(Clone, Copy, Debug)]
pub struct ActorContext<'a> {
    pub family: Family,
    pub catalog: &'a Catalog,
    pub constants: &'a PhysicsConstants,
}

impl InterventionActor {
    pub fn goal_randomizer(space: Space, schedule: ActorSchedule) -> Self {
        Self {
            actor_type: ActorType::GoalRandomizer,
            schedule,
            variables: BTreeSet::new(),
            space,
        }
    }

    pub fn full_randomizer(space: Space, schedule: ActorSchedule) -> Self {
        Self {
            actor_type: ActorType::FullRandomizer,
            schedule,
            variables: BTreeSet::new(),
            space,
        }
    }

    pub fn variable_randomizer<I, S>(variables: I, space: Space, schedule: ActorSchedule) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            actor_type: ActorType::VariableRandomizer,
            schedule,
            variables: variables.into_iter().map(Into::into).collect(),
            space,
        }
    }

    pub fn validate(&self, catalog: &Catalog) -> Result<()> {
        self.schedule.validate()?;
        if self.space == Space::Union {
            return Err(Error::Config("actors sample from space A or B".into()));
        }
        match self.actor_type {
            ActorType::VariableRandomizer => {
                if self.variables.is_empty() {
                    return Err(Error::Config("variable randomizer lists no variables".into()));
                }
                for v in &self.variables {
                    catalog.spec(v)?;
                }
            }
            _ if !self.variables.is_empty() => {
                return Err(Error::Config(format!("{:?} takes no variable list", self.actor_type)));
            }
            _ => {}
        }
        Ok(())
    }

    /// The draw behind a firing, with its audit trail.
    pub fn sample(&self, ctx: &ActorContext, exposed: &EnvConfig, seed: u64) -> Result<FamilySample> {
        let mut rng = rng_for(seed, 0xac70);
        match self.actor_type {
            ActorType::GoalRandomizer => sample_groups(
                ctx.family,
                ctx.catalog,
                ctx.constants,
                exposed,
                &[VariableGroup::GoalPose],
                self.space,
                &mut rng,
            ),
            ActorType::FullRandomizer => {
                Ok(sample_all(ctx.family, ctx.catalog, ctx.constants, exposed, self.space, seed)?.1)
            }
            ActorType::VariableRandomizer => {
                let present: BTreeSet<String> = self
                    .variables
                    .iter()
                    .filter(|v| applies_to(ctx, exposed, v))
                    .cloned()
                    .collect();
                sample_variables(ctx.catalog, exposed, &present, self.space, &mut rng)
            }
        }
    }
}

fn applies_to(ctx: &ActorContext, exposed: &EnvConfig, var: &str) -> bool {
    let exposed_here = ctx.catalog.spec(var).is_ok_and(|s| s.exposed_for(ctx.family));
    let present = match split_id(var) {
        (_, Some(_)) => exposed.get(var).is_some(),
        (t, None) if t.contains('.') => {
            let (head, tail) = t.split_once('.').expect("template");
            exposed.ids().any(|id| split_id(id).0 == format!("{head}.{tail}"))
        }
        _ => exposed.get(var).is_some(),
    };
    exposed_here && present
}

/// The intervention `actor` submits at `(episode, step)`, if it fires.
pub fn actor_decides(
    actor: &InterventionActor,
    ctx: &ActorContext,
    episode: u64,
    step: u64,
    exposed: &EnvConfig,
    seed: u64,
) -> Result<Option<Intervention>> {
    if !actor.schedule.fires(episode, step) {
        return Ok(None);
    }
    Ok(Some(actor.sample(ctx, exposed, seed)?.intervention))
}

/// Actors polled in list order; later actors win on shared variables.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Curriculum {
    pub actors: Vec<InterventionActor>,
}

/// Merged decision for one `(episode, step)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub intervention: Intervention,
    /// Every value drawn, tagged with the space it came from.
    pub audit: Vec<(Space, String, Vec<f64>)>,
    /// Indices of the actors that fired.
    pub fired: Vec<usize>,
}

impl Curriculum {
    pub fn compose(actors: Vec<InterventionActor>) -> Self {
        Self { actors }
    }

    /// 0: no changes. 1: goal pose from A at every reset. 2: every
    /// variable from A at every reset.
    pub fn standard(index: u8) -> Result<Self> {
        let every = ActorSchedule::every_reset();
        Ok(match index {
            0 => Self::default(),
            1 => Self::compose(vec![InterventionActor::goal_randomizer(Space::A, every)]),
            2 => Self::compose(vec![InterventionActor::full_randomizer(Space::A, every)]),
            n => return Err(Error::Config(format!("no standard curriculum {n}; use 0, 1 or 2"))),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Curriculum = serde_json::from_str(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("curriculum serializes")
    }

    pub fn validate(&self, catalog: &Catalog) -> Result<()> {
        self.actors.iter().try_for_each(|a| a.validate(catalog))
    }

    /// Merged intervention at `(episode, step)`, or `None` if nobody fires.
    pub fn decide(
        &self,
        ctx: &ActorContext,
        episode: u64,
        step: u64,
        exposed: &EnvConfig,
        seed: u64,
    ) -> Result<Option<Decision>> {
        let mut out: Option<Decision> = None;
        for (k, actor) in self.actors.iter().enumerate() {
            if !actor.schedule.fires(episode, step) {
                continue;
            }
            let s = actor.sample(ctx, exposed, mix_seed(&[seed, episode, step, k as u64]))?;
            let d = out.get_or_insert_with(Decision::default);
            d.intervention.merge(&s.intervention);
            d.audit.extend(s.audit.into_iter().map(|v| (actor.space, v.id, v.value)));
            d.fired.push(k);
        }
        Ok(out)
    }
}

/// A reset-time or mid-episode intervention as it happened.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppliedIntervention {
    pub episode: u64,
    pub step: u64,
    pub decision: Decision,
    pub applied: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection: Option<Rejection>,
}

/// Drives one environment through a curriculum, episode by episode.
///
/// Reset-time interventions change the configuration the next episode
/// starts from and persist; mid-episode ones go through
/// [`Env::do_intervention`].
#[derive(Clone, Debug)]
pub struct CurriculumRunner {
    pub curriculum: Curriculum,
    pub family: Family,
    config: EnvConfig,
    episode: u64,
    seed: u64,
    history: Vec<AppliedIntervention>,
}

impl CurriculumRunner {
    pub fn new(curriculum: Curriculum, task: &TaskInstance, seed: u64) -> Self {
        Self {
            curriculum,
            family: task.family,
            config: task.config.clone(),
            episode: 0,
            seed,
            history: Vec::new(),
        }
    }

    /// Index of the episode the next `begin_episode` starts.
    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn history(&self) -> &[AppliedIntervention] {
        &self.history
    }

    pub fn episode_seed(&self, episode: u64) -> u64 {
        mix_seed(&[self.seed, episode, 0xe915])
    }

    /// Applies reset-time interventions, then resets `env`.
    pub fn begin_episode(&mut self, env: &mut Env) -> Result<Observation> {
        let ep = self.episode;
        self.episode += 1;
        let ctx = ActorContext {
            family: self.family,
            catalog: env.catalog(),
            constants: env.constants(),
        };
        if let Some(decision) = self.curriculum.decide(&ctx, ep, 0, &self.config, self.seed)? {
            let phase_seed = mix_seed(&[self.seed, ep, 0x9e5e]);
            let outcome = prepare_intervention(
                self.family,
                ctx.catalog,
                ctx.constants,
                &self.config,
                &decision.intervention,
                Phase::Reset,
                phase_seed,
            )?;
            let (applied, rejection) = match outcome {
                Outcome::Accepted(c) => {
                    self.config = c;
                    (true, None)
                }
                Outcome::Rejected(r) => (false, Some(r)),
            };
            self.history.push(AppliedIntervention {
                episode: ep,
                step: 0,
                decision,
                applied,
                rejection,
            });
        }
        let task = TaskInstance::from_config(self.family, &self.config, env.constants())?;
        env.reset(&task, &self.config, self.episode_seed(ep))
    }

    /// Submits any mid-episode intervention due before the next step.
    pub fn before_step(&mut self, env: &mut Env) -> Result<Option<InterventionResult>> {
        let step = env.steps()?;
        if step == 0 {
            return Ok(None);
        }
        let ep = self.episode.checked_sub(1).ok_or_else(|| Error::Lifecycle("no episode has begun".into()))?;
        let exposed = env.exposed_config()?;
        let ctx = ActorContext {
            family: self.family,
            catalog: env.catalog(),
            constants: env.constants(),
        };
        let Some(decision) = self.curriculum.decide(&ctx, ep, step, &exposed, self.seed)? else {
            return Ok(None);
        };
        let result = env.do_intervention(&decision.intervention)?;
        self.history.push(AppliedIntervention {
            episode: ep,
            step,
            decision,
            applied: result.applied,
            rejection: result.rejection.clone(),
        });
        Ok(Some(result))
    }
}
