//! Evaluation protocols, seeded episode scoring and report aggregation.
//!
//! A protocol names the variable groups that are redrawn for each episode
//! and the space they are drawn from. Every episode is scored by the
//! fractional success at its last step.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Env, ObservationLayout};
use crate::math::{mix_seed, rng_for};
use crate::param_space::{EnvConfig, Outcome, Space, Timing};
use crate::policies::Policy;
use crate::tasks::{prepare_intervention, sample_groups, Family, Phase, TaskInstance, VariableGroup};
use crate::{Error, Result};

/// Bumped whenever the composition of the default suite changes.
pub const SUITE_VERSION: u32 = 1;
pub const DEFAULT_EPISODES: usize = 200;
/// Redraws allowed when a sample breaks a family constraint.
pub const MAX_RESAMPLES: u64 = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProtocolSpace {
    #[serde(rename = "default")]
    Default,
    A,
    B,
}

impl ProtocolSpace {
    pub fn space(self) -> Option<Space> {
        match self {
            ProtocolSpace::Default => None,
            ProtocolSpace::A => Some(Space::A),
            ProtocolSpace::B => Some(Space::B),
        }
    }
}

impl fmt::Display for ProtocolSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProtocolSpace::Default => "default",
            ProtocolSpace::A => "A",
            ProtocolSpace::B => "B",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub id: String,
    pub family: Family,
    pub sampled_variables: BTreeSet<VariableGroup>,
    pub space: ProtocolSpace,
    #[serde(default)]
    pub timing: Timing,
}

impl ProtocolSpec {
    pub fn validate(&self) -> Result<()> {
        match (self.space, self.sampled_variables.is_empty()) {
            (ProtocolSpace::Default, false) => Err(Error::Config(format!(
                "protocol {} samples variables but uses the default space",
                self.id
            ))),
            (ProtocolSpace::A | ProtocolSpace::B, true) => {
                Err(Error::Config(format!("protocol {} names a space but samples nothing", self.id)))
            }
            _ => Ok(()),
        }
    }

    /// Short label such as `bp+gp@B`.
    pub fn label(&self) -> String {
        if self.sampled_variables.is_empty() {
            return "default".into();
        }
        let vars: Vec<&str> = self.sampled_variables.iter().map(|g| g.code()).collect();
        format!("{}@{}", vars.join("+"), self.space)
    }
}

/// P0 default; P1-P5 one group each from A; P6-P10 the same from B; P11
/// all five from B.
pub fn default_protocol_suite(family: Family) -> Vec<ProtocolSpec> {
    use VariableGroup::*;
    let singles = [FloorFriction, BlockMass, BlockSize, BlockPose, GoalPose];
    let mut out = vec![ProtocolSpec {
        id: "P0".into(),
        family,
        sampled_variables: BTreeSet::new(),
        space: ProtocolSpace::Default,
        timing: Timing::OnReset,
    }];
    for (offset, space) in [(1, ProtocolSpace::A), (6, ProtocolSpace::B)] {
        for (k, g) in singles.iter().enumerate() {
            out.push(ProtocolSpec {
                id: format!("P{}", offset + k),
                family,
                sampled_variables: BTreeSet::from([*g]),
                space,
                timing: Timing::OnReset,
            });
        }
    }
    out.push(ProtocolSpec {
        id: "P11".into(),
        family,
        sampled_variables: singles.into_iter().collect(),
        space: ProtocolSpace::B,
        timing: Timing::OnReset,
    });
    out
}

/// Picks protocols from the default suite by id (`P0`, `P11`, ...).
pub fn select_protocols(family: Family, ids: &[String]) -> Result<Vec<ProtocolSpec>> {
    let suite = default_protocol_suite(family);
    ids.iter()
        .map(|id| {
            suite
                .iter()
                .find(|p| p.id.eq_ignore_ascii_case(id))
                .cloned()
                .ok_or_else(|| Error::Config(format!("unknown protocol `{id}`")))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub id: String,
    pub value: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub index: usize,
    pub seed: u64,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    /// Values drawn for this episode.
    pub sampled: Vec<AuditEntry>,
    /// Configuration the episode ran with.
    pub config: EnvConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub protocol: String,
    pub family: Family,
    pub space: ProtocolSpace,
    pub suite_version: u32,
    pub policy: String,
    pub seed: u64,
    pub episodes: usize,
    pub mean_final_fractional_success: f64,
    /// Episodes scored 0 because the policy or the simulation failed.
    pub failed_episodes: usize,
    pub records: Vec<EpisodeRecord>,
}

impl ScoreReport {
    pub fn scores(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.score).collect()
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.seed).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Drawn values that fall outside the declared space, as `(episode, id)`.
pub fn audit_space(env: &Env, report: &ScoreReport) -> Result<Vec<(usize, String)>> {
    let Some(space) = report.space.space() else {
        return Ok(report
            .records
            .iter()
            .flat_map(|r| r.sampled.iter().map(move |s| (r.index, s.id.clone())))
            .collect());
    };
    let mut bad = Vec::new();
    for r in &report.records {
        for s in &r.sampled {
            if !env.catalog().membership_in(Some(&r.config), &s.id, &s.value, space)? {
                bad.push((r.index, s.id.clone()));
            }
        }
    }
    Ok(bad)
}

/// Builds a fresh policy for each episode.
pub type PolicyFactory<'a> = &'a (dyn Fn() -> Box<dyn Policy> + Sync);

/// Episode seeds derived from the run seed.
pub fn episode_seeds(seed: u64, episodes: usize) -> Vec<u64> {
    (0..episodes as u64).map(|i| mix_seed(&[seed, i])).collect()
}

/// Runs `episodes` episodes of `protocol` against `base` in parallel.
///
/// `env` is a template; each episode runs on its own clone.
pub fn run_protocol(
    env: &Env,
    base: &TaskInstance,
    protocol: &ProtocolSpec,
    policy: PolicyFactory,
    episodes: usize,
    seed: u64,
) -> Result<ScoreReport> {
    run_with_seeds(env, base, protocol, policy, &episode_seeds(seed, episodes), seed)
}

/// Like [`run_protocol`] with explicit per-episode seeds.
pub fn run_with_seeds(
    env: &Env,
    base: &TaskInstance,
    protocol: &ProtocolSpec,
    policy: PolicyFactory,
    seeds: &[u64],
    seed: u64,
) -> Result<ScoreReport> {
    protocol.validate()?;
    if protocol.family != base.family {
        return Err(Error::Config(format!(
            "protocol {} is for {} but the task is {}",
            protocol.id, protocol.family, base.family
        )));
    }
    let records: Vec<EpisodeRecord> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &s)| run_episode(env, base, protocol, policy, i, s))
        .collect::<Result<_>>()?;
    let n = records.len();
    let mean = if n == 0 { 0.0 } else { records.iter().map(|r| r.score).sum::<f64>() / n as f64 };
    Ok(ScoreReport {
        protocol: protocol.id.clone(),
        family: protocol.family,
        space: protocol.space,
        suite_version: SUITE_VERSION,
        policy: policy().name().to_string(),
        seed,
        episodes: n,
        mean_final_fractional_success: mean,
        failed_episodes: records.iter().filter(|r| r.failure.is_some()).count(),
        records,
    })
}

/// Draws the protocol's groups and applies them under the family rules.
fn sample_episode(env: &Env, base: &TaskInstance, protocol: &ProtocolSpec, seed: u64) -> Result<(EnvConfig, Vec<AuditEntry>)> {
    let Some(space) = protocol.space.space() else {
        return Ok((base.config.clone(), Vec::new()));
    };
    let groups: Vec<VariableGroup> = protocol.sampled_variables.iter().copied().collect();
    let mut last = String::new();
    for attempt in 0..MAX_RESAMPLES {
        let mut rng = rng_for(mix_seed(&[seed, attempt]), 0xe7a1);
        let s = sample_groups(base.family, env.catalog(), env.constants(), &base.config, &groups, space, &mut rng)?;
        let outcome = prepare_intervention(
            base.family,
            env.catalog(),
            env.constants(),
            &base.config,
            &s.intervention,
            Phase::Reset,
            mix_seed(&[seed, attempt, 1]),
        )?;
        match outcome {
            Outcome::Accepted(c) => {
                let audit = s.audit.into_iter().map(|v| AuditEntry { id: v.id, value: v.value }).collect();
                return Ok((c, audit));
            }
            Outcome::Rejected(r) => last = r.detail,
        }
    }
    Err(Error::Config(format!(
        "protocol {}: no feasible sample after {MAX_RESAMPLES} draws: {last}",
        protocol.id
    )))
}

fn run_episode(
    template: &Env,
    base: &TaskInstance,
    protocol: &ProtocolSpec,
    factory: PolicyFactory,
    index: usize,
    seed: u64,
) -> Result<EpisodeRecord> {
    let mut env = template.clone();
    let (sampled_config, sampled) = sample_episode(&env, base, protocol, seed)?;
    // Mid-episode protocols start from the default scene and intervene later.
    let (config, later) = match protocol.timing {
        Timing::OnReset => (sampled_config, None),
        Timing::AtStep(t) => (base.config.clone(), Some((t, sampled_config))),
    };
    let task = TaskInstance::from_config(base.family, &config, env.constants())?;
    let mut obs = env.reset(&task, &config, seed)?;
    let mut policy = factory();
    policy.reset(ObservationLayout::for_task(&task), seed);
    let mut record = EpisodeRecord {
        index,
        seed,
        score: 0.0,
        failure: None,
        sampled,
        config,
    };
    let mut score = env.fractional_success()?;
    while !env.is_done() {
        if let Some((t, target)) = &later {
            if env.steps()? == *t {
                let mut iv = crate::param_space::Intervention::new();
                for id in target.diff(&record.config) {
                    if let Some(v) = target.get(&id) {
                        iv.assignments.insert(id, v.to_vec());
                    }
                }
                obs = env.do_intervention(&iv)?.observation;
            }
        }
        let action = policy.act(&obs);
        match env.step(&action) {
            Ok(r) => {
                score = r.info.fractional_success;
                obs = r.observation;
            }
            Err(e @ (Error::Action(_) | Error::SimulationDiverged { .. })) => {
                record.failure = Some(e.to_string());
                return Ok(record);
            }
            Err(e) => return Err(e),
        }
    }
    record.score = score;
    Ok(record)
}

/// One protocol row of a benchmark table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub protocol: String,
    pub replicates: usize,
    pub episodes: usize,
    pub mean: f64,
    /// Population standard deviation of the replicate means.
    pub std: f64,
    pub failed_episodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub family: Family,
    pub suite_version: u32,
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["family", "protocol", "replicates", "episodes", "mean", "std", "failed_episodes"])
            .map_err(csv_error)?;
        for r in &self.rows {
            w.write_record([
                self.family.name().to_string(),
                r.protocol.clone(),
                r.replicates.to_string(),
                r.episodes.to_string(),
                r.mean.to_string(),
                r.std.to_string(),
                r.failed_episodes.to_string(),
            ])
            .map_err(csv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Aggregation(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Aggregation(e.to_string())
}

/// Mean and spread of per-protocol means across replicate reports.
///
/// Rows follow the order in which protocols first appear.
pub fn aggregate_report(reports: &[ScoreReport]) -> Result<BenchmarkTable> {
    let first = reports.first().ok_or_else(|| Error::Aggregation("no reports to aggregate".into()))?;
    if let Some(r) = reports.iter().find(|r| r.family != first.family) {
        return Err(Error::Aggregation(format!(
            "mixed families: {} and {}",
            first.family, r.family
        )));
    }
    let mut order: Vec<&str> = Vec::new();
    for r in reports {
        if !order.contains(&r.protocol.as_str()) {
            order.push(&r.protocol);
        }
    }
    let rows = order
        .into_iter()
        .map(|id| {
            let group: Vec<&ScoreReport> = reports.iter().filter(|r| r.protocol == id).collect();
            let means: Vec<f64> = group.iter().map(|r| r.mean_final_fractional_success).collect();
            let n = means.len() as f64;
            let mean = means.iter().sum::<f64>() / n;
            let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n;
            BenchmarkRow {
                protocol: id.to_string(),
                replicates: group.len(),
                episodes: group.iter().map(|r| r.episodes).sum(),
                mean,
                std: var.sqrt(),
                failed_episodes: group.iter().map(|r| r.failed_episodes).sum(),
            }
        })
        .collect();
    Ok(BenchmarkTable {
        family: first.family,
        suite_version: first.suite_version,
        rows,
    })
}

impl FromStr for ProtocolSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(ProtocolSpace::Default),
            "A" | "a" => Ok(ProtocolSpace::A),
            "B" | "b" => Ok(ProtocolSpace::B),
            other => Err(Error::Config(format!("unknown protocol space `{other}`"))),
        }
    }
}
