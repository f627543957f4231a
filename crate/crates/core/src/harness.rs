//! Episode logs, replay verification and the newline-delimited JSON wire
//! protocol spoken by external agents.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::curriculum::CurriculumRunner;
use crate::dynamics::{ActionMode, RobotCommand};
use crate::env::{Env, EnvOptions, InterventionResult, Observation, ObservationLayout, StepInfo, StepResult};
use crate::env::{OBS_HEADER, OBS_PER_BLOCK, OBS_PER_PART};
use crate::param_space::{Catalog, EnvConfig, Intervention, Outcome, Rejection};
use crate::policies::Policy;
use crate::rewards::RewardType;
use crate::tasks::{build_task, prepare_intervention, Family, Phase, TaskInstance, TaskParams};
use crate::{Error, Result};

pub const LOG_SCHEMA_VERSION: u32 = 1;
/// Steps between full observation snapshots in a log.
pub const SNAPSHOT_EVERY: u64 = 50;
pub const WIRE_VERSION: u32 = 1;

// Episode logs

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema_version: u32,
    pub family: Family,
    pub seed: u64,
    /// Configuration the episode was reset with.
    pub config: EnvConfig,
    pub options: EnvOptions,
    pub snapshot_every: u64,
    pub initial: Observation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoggedIntervention {
    pub intervention: Intervention,
    pub applied: bool,
}

/// One control step. `t` counts the steps taken before this one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub action: RobotCommand,
    /// Interventions submitted just before the action.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub interventions: Vec<LoggedIntervention>,
    pub obs_digest: String,
    pub reward: f64,
    pub fractional_success: f64,
    pub done: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<Observation>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLine {
    Header(LogHeader),
    Step(StepRecord),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub header: LogHeader,
    pub steps: Vec<StepRecord>,
}

impl EpisodeLog {
    /// JSON lines: the header, then one line per step.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&LogLine::Header(self.header.clone())).expect("header serializes");
        out.push('\n');
        for s in &self.steps {
            out.push_str(&serde_json::to_string(&LogLine::Step(s.clone())).expect("step serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let parse = |i: usize, l: &str| -> Result<LogLine> {
            serde_json::from_str(l).map_err(|e| Error::Schema(format!("corrupted log at line {}: {e}", i + 1)))
        };
        let header = match lines.next() {
            Some((i, l)) => {
                let v: serde_json::Value =
                    serde_json::from_str(l).map_err(|e| Error::Schema(format!("corrupted log at line {}: {e}", i + 1)))?;
                let version = v.get("schema_version").and_then(|x| x.as_u64());
                if version != Some(LOG_SCHEMA_VERSION as u64) {
                    return Err(Error::Schema(format!(
                        "log schema version {version:?}, this build reads {LOG_SCHEMA_VERSION}"
                    )));
                }
                match parse(i, l)? {
                    LogLine::Header(h) => h,
                    LogLine::Step(_) => return Err(Error::Schema("log does not start with a header".into())),
                }
            }
            None => return Err(Error::Schema("empty log".into())),
        };
        let steps = lines
            .map(|(i, l)| match parse(i, l)? {
                LogLine::Step(s) => Ok(s),
                LogLine::Header(_) => Err(Error::Schema(format!("second header at line {}", i + 1))),
            })
            .collect::<Result<_>>()?;
        Ok(Self { header, steps })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }

    /// Every logged observation with the step count it was taken at.
    pub fn snapshots(&self) -> Vec<(u64, &Observation)> {
        let mut out = vec![(0, &self.header.initial)];
        out.extend(self.steps.iter().filter_map(|s| s.snapshot.as_ref().map(|o| (s.t + 1, o))));
        out
    }
}

/// Wraps a freshly reset environment and logs everything done to it.
#[derive(Clone, Debug)]
pub struct Recorder {
    log: EpisodeLog,
    pending: Vec<LoggedIntervention>,
}

impl Recorder {
    /// Starts a log for the episode `env` was just reset into.
    pub fn begin(env: &Env, snapshot_every: u64) -> Result<Self> {
        if env.steps()? != 0 {
            return Err(Error::Lifecycle("recording starts right after reset".into()));
        }
        let task = env.task()?;
        Ok(Self {
            log: EpisodeLog {
                header: LogHeader {
                    schema_version: LOG_SCHEMA_VERSION,
                    family: task.family,
                    seed: env.seed()?,
                    config: task.config.clone(),
                    options: env.options().clone(),
                    snapshot_every: snapshot_every.max(1),
                    initial: env.observation()?,
                },
                steps: Vec::new(),
            },
            pending: Vec::new(),
        })
    }

    /// Notes an intervention that was already submitted to the environment.
    pub fn note(&mut self, iv: &Intervention, result: &InterventionResult) {
        self.pending.push(LoggedIntervention {
            intervention: iv.clone(),
            applied: result.applied,
        });
    }

    pub fn intervene(&mut self, env: &mut Env, iv: &Intervention) -> Result<InterventionResult> {
        let r = env.do_intervention(iv)?;
        self.note(iv, &r);
        Ok(r)
    }

    pub fn step(&mut self, env: &mut Env, action: &RobotCommand) -> Result<StepResult> {
        let t = env.steps()?;
        let r = env.step(action)?;
        let every = self.log.header.snapshot_every;
        let snapshot = ((t + 1) % every == 0 || r.done).then(|| r.observation.clone());
        self.log.steps.push(StepRecord {
            t,
            action: action.clone(),
            interventions: std::mem::take(&mut self.pending),
            obs_digest: r.observation.digest(),
            reward: r.reward,
            fractional_success: r.info.fractional_success,
            done: r.done,
            snapshot,
        });
        Ok(r)
    }

    pub fn finish(self) -> EpisodeLog {
        self.log
    }
}

/// Resets `env` and records `policy` until the episode ends.
pub fn record_episode(
    env: &mut Env,
    task: &TaskInstance,
    config: &EnvConfig,
    seed: u64,
    policy: &mut dyn Policy,
    snapshot_every: u64,
) -> Result<EpisodeLog> {
    let mut obs = env.reset(task, config, seed)?;
    policy.reset(env.layout()?, seed);
    let mut rec = Recorder::begin(env, snapshot_every)?;
    while !env.is_done() {
        obs = rec.step(env, &policy.act(&obs))?.observation;
    }
    Ok(rec.finish())
}

/// Runs the runner's next episode with `policy` and records it, including
/// any mid-episode interventions.
pub fn record_curriculum_episode(
    env: &mut Env,
    runner: &mut CurriculumRunner,
    policy: &mut dyn Policy,
    snapshot_every: u64,
) -> Result<EpisodeLog> {
    let mut obs = runner.begin_episode(env)?;
    policy.reset(env.layout()?, env.seed()?);
    let mut rec = Recorder::begin(env, snapshot_every)?;
    while !env.is_done() {
        if let Some(r) = runner.before_step(env)? {
            let last = runner.history().last().expect("intervention recorded");
            rec.note(&last.decision.intervention, &r);
            obs = r.observation;
        }
        obs = rec.step(env, &policy.act(&obs))?.observation;
    }
    Ok(rec.finish())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Pass { steps: usize },
    Fail { index: u64, field: String, detail: String },
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass { .. })
    }
}

fn same_bits(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits()
}

fn fail(index: u64, field: &str, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict::Fail {
        index,
        field: field.into(),
        detail: detail.into(),
    })
}

/// Re-executes `log` on a copy of `template` and compares every logged
/// value bit for bit.
pub fn replay(template: &Env, log: &EpisodeLog) -> Result<Verdict> {
    let h = &log.header;
    if h.schema_version != LOG_SCHEMA_VERSION {
        return Err(Error::Schema(format!("log schema version {}", h.schema_version)));
    }
    let mut env = Env::with_parts(template.catalog().clone(), template.constants().clone(), h.options.clone());
    let task = TaskInstance::from_config(h.family, &h.config, env.constants())?;
    let initial = env.reset(&task, &h.config, h.seed)?;
    if initial != h.initial {
        return fail(0, "initial", "initial observation differs");
    }
    for (k, s) in log.steps.iter().enumerate() {
        if s.t != k as u64 {
            return Err(Error::Schema(format!("step {k} is labelled t={}", s.t)));
        }
        for iv in &s.interventions {
            let r = env.do_intervention(&iv.intervention)?;
            if r.applied != iv.applied {
                return fail(s.t, "interventions", format!("applied {} but the log says {}", r.applied, iv.applied));
            }
        }
        let r = match env.step(&s.action) {
            Ok(r) => r,
            Err(e @ (Error::Action(_) | Error::Lifecycle(_) | Error::SimulationDiverged { .. })) => {
                return fail(s.t, "action", e.to_string())
            }
            Err(e) => return Err(e),
        };
        let digest = r.observation.digest();
        if digest != s.obs_digest {
            return fail(s.t, "obs_digest", format!("{digest} != {}", s.obs_digest));
        }
        if !same_bits(r.reward, s.reward) {
            return fail(s.t, "reward", format!("{} != {}", r.reward, s.reward));
        }
        if !same_bits(r.info.fractional_success, s.fractional_success) {
            return fail(s.t, "fractional_success", format!("{} != {}", r.info.fractional_success, s.fractional_success));
        }
        if r.done != s.done {
            return fail(s.t, "done", format!("{} != {}", r.done, s.done));
        }
        if let Some(snap) = &s.snapshot {
            let equal = snap.len() == r.observation.len()
                && snap.values().iter().zip(r.observation.values()).all(|(a, b)| same_bits(*a, *b));
            if !equal {
                return fail(s.t, "snapshot", "full observation differs");
            }
        }
    }
    Ok(Verdict::Pass { steps: log.steps.len() })
}

// Wire protocol

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Reset {
        task: Family,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        config_overrides: BTreeMap<String, Vec<f64>>,
        #[serde(default)]
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reward: Option<RewardType>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        action_mode: Option<ActionMode>,
    },
    Step {
        action: Vec<f64>,
        mode: ActionMode,
    },
    Intervene {
        assignments: BTreeMap<String, Vec<f64>>,
    },
    SpecQuery,
    Close,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Response {
    Observation {
        observation: Observation,
        reward: f64,
        done: bool,
        info: StepInfo,
    },
    Intervention {
        applied: bool,
        observation: Observation,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rejection: Option<Rejection>,
    },
    Spec {
        spec: Box<SpecDocument>,
    },
    Closed,
    Error {
        code: String,
        detail: String,
    },
}

impl Response {
    pub fn error(e: &Error) -> Self {
        Response::Error {
            code: e.code().to_string(),
            detail: e.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub name: Family,
    pub dense_reward: bool,
    /// Default instance; other block counts follow `observation_formula`.
    pub default_blocks: usize,
    pub default_goal_parts: usize,
    pub obstacles: usize,
    pub episode_limit_steps: u64,
    pub observation_length: usize,
    pub observation_fields: Vec<(String, usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationFormula {
    pub header: usize,
    pub per_block: usize,
    pub per_goal_part: usize,
    pub per_obstacle: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecDocument {
    pub wire_version: u32,
    pub log_schema_version: u32,
    pub control_rate_hz: u64,
    pub action_dims: usize,
    pub action_modes: Vec<ActionMode>,
    pub reward_types: Vec<RewardType>,
    pub observation_formula: ObservationFormula,
    pub families: Vec<FamilySpec>,
    pub catalog: Catalog,
}

pub fn spec_document(env: &Env) -> Result<SpecDocument> {
    let families = Family::ALL
        .iter()
        .map(|&f| {
            let task = build_task(f, &TaskParams::default(), 0)?;
            let layout = ObservationLayout::for_task(&task);
            Ok(FamilySpec {
                name: f,
                dense_reward: f.has_dense_reward(),
                default_blocks: layout.blocks,
                default_goal_parts: layout.goal_parts,
                obstacles: layout.obstacles,
                episode_limit_steps: task.episode_limit_steps,
                observation_length: layout.len(),
                observation_fields: layout.fields(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(SpecDocument {
        wire_version: WIRE_VERSION,
        log_schema_version: LOG_SCHEMA_VERSION,
        control_rate_hz: env.constants().control_rate_hz(),
        action_dims: 9,
        action_modes: ActionMode::ALL.to_vec(),
        reward_types: vec![RewardType::Fractional, RewardType::Sparse, RewardType::Dense],
        observation_formula: ObservationFormula {
            header: OBS_HEADER,
            per_block: OBS_PER_BLOCK,
            per_goal_part: OBS_PER_PART,
            per_obstacle: OBS_PER_PART,
        },
        families,
        catalog: env.catalog().clone(),
    })
}

/// One connection's environment.
#[derive(Clone, Debug)]
pub struct Session {
    template: Env,
    env: Env,
}

impl Session {
    pub fn new(template: &Env) -> Self {
        Self {
            template: template.clone(),
            env: template.clone(),
        }
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    /// Answers one request. The flag is true when the connection should
    /// close.
    pub fn handle(&mut self, req: &Request) -> (Response, bool) {
        match self.dispatch(req) {
            Ok(r) => {
                let close = matches!(r, Response::Closed);
                (r, close)
            }
            Err(e) => (Response::error(&e), false),
        }
    }

    fn dispatch(&mut self, req: &Request) -> Result<Response> {
        match req {
            Request::Reset {
                task,
                config_overrides,
                seed,
                reward,
                action_mode,
            } => {
                let mut options = self.template.options().clone();
                if let Some(r) = reward {
                    options.reward = *r;
                }
                if let Some(m) = action_mode {
                    options.action_mode = *m;
                }
                let mut env = Env::with_parts(self.template.catalog().clone(), self.template.constants().clone(), options);
                let base = build_task(*task, &TaskParams::default(), *seed)?;
                let config = if config_overrides.is_empty() {
                    base.config.clone()
                } else {
                    let iv = Intervention {
                        assignments: config_overrides.clone(),
                        ..Intervention::default()
                    };
                    match prepare_intervention(*task, env.catalog(), env.constants(), &base.config, &iv, Phase::Reset, *seed)? {
                        Outcome::Accepted(c) => c,
                        Outcome::Rejected(r) => {
                            return Err(Error::Config(format!("config overrides rejected: {}", r.detail)))
                        }
                    }
                };
                let task = TaskInstance::from_config(*task, &config, env.constants())?;
                let observation = env.reset(&task, &config, *seed)?;
                let info = StepInfo {
                    fractional_success: env.fractional_success()?,
                    interventions_applied: 0,
                    suppressed: 0,
                    time_left_seconds: task.episode_limit_steps as f64 / env.constants().control_rate_hz() as f64,
                    step: 0,
                };
                self.env = env;
                Ok(Response::Observation {
                    observation,
                    reward: 0.0,
                    done: false,
                    info,
                })
            }
            Request::Step { action, mode } => {
                let cmd = RobotCommand::from_slice(*mode, action)?;
                let r = self.env.step(&cmd)?;
                Ok(Response::Observation {
                    observation: r.observation,
                    reward: r.reward,
                    done: r.done,
                    info: r.info,
                })
            }
            Request::Intervene { assignments } => {
                let iv = Intervention {
                    assignments: assignments.clone(),
                    ..Intervention::default()
                };
                let r = self.env.do_intervention(&iv)?;
                Ok(Response::Intervention {
                    applied: r.applied,
                    observation: r.observation,
                    rejection: r.rejection,
                })
            }
            Request::SpecQuery => Ok(Response::Spec {
                spec: Box::new(spec_document(&self.env)?),
            }),
            Request::Close => Ok(Response::Closed),
        }
    }
}

/// Serves one connection until `close` or end of input.
///
/// Lines that are not valid requests get an error response; the
/// connection stays open.
pub fn serve_connection<R: BufRead, W: Write>(template: &Env, reader: R, mut writer: W) -> Result<()> {
    let mut session = Session::new(template);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (response, close) = match serde_json::from_str::<Request>(&line) {
            Ok(req) => session.handle(&req),
            Err(e) => (
                Response::Error {
                    code: "parse".into(),
                    detail: e.to_string(),
                },
                false,
            ),
        };
        serde_json::to_writer(&mut writer, &response)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        if close {
            break;
        }
    }
    Ok(())
}

pub fn serve_stdio(template: &Env) -> Result<()> {
    let stdin = std::io::stdin();
    serve_connection(template, stdin.lock(), std::io::stdout().lock())
}

pub fn bind<A: ToSocketAddrs>(addr: A) -> Result<TcpListener> {
    Ok(TcpListener::bind(addr)?)
}

/// Accepts connections forever, one thread and one environment each.
pub fn serve_tcp(template: &Env, listener: TcpListener) -> Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let template = template.clone();
        std::thread::spawn(move || {
            if let Err(e) = serve_stream(&template, stream) {
                log::warn!("connection ended with an error: {e}");
            }
        });
    }
    Ok(())
}

fn serve_stream(template: &Env, stream: TcpStream) -> Result<()> {
    let reader = BufReader::new(stream.try_clone()?);
    serve_connection(template, reader, stream)
}

/// Blocking client for one connection; used by tests and tools.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self> {
        let writer = TcpStream::connect(addr)?;
        Ok(Self {
            reader: BufReader::new(writer.try_clone()?),
            writer,
        })
    }

    /// Sends one raw line and reads one response.
    pub fn send_line(&mut self, line: &str) -> Result<Response> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        let mut buf = String::new();
        if self.reader.read_line(&mut buf)? == 0 {
            return Err(Error::Io(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "server closed the connection")));
        }
        Ok(serde_json::from_str(&buf)?)
    }

    pub fn request(&mut self, req: &Request) -> Result<Response> {
        self.send_line(&serde_json::to_string(req)?)
    }
}
