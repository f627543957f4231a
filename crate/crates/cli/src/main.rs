use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blockworld::curriculum::{Curriculum, CurriculumRunner};
use blockworld::evaluation::{aggregate_report, audit_space, run_protocol, select_protocols, ScoreReport};
use blockworld::geometry::{fractional_overlap_with, OverlapOptions, Scene};
use blockworld::harness::{self, EpisodeLog, Verdict, SNAPSHOT_EVERY};
use blockworld::math::mix_seed;
use blockworld::param_space::{EnvConfig, Intervention, Outcome};
use blockworld::policies::{Policy, PolicyKind};
use blockworld::tasks::{build_task, prepare_intervention, sample_all, Phase, TaskParams};
use blockworld::{Catalog, Env, EnvOptions, Error, Family, PhysicsConstants, Space, TaskInstance};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

#[derive(Parser, Debug)]
#[command(name = "blockworld", version, about = "Block-manipulation environments with do-interventions")]
struct Cli {
    /// Run configuration (JSON): catalog path, env options, overrides, curriculum.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Physics constants file (JSON) replacing the shipped one.
    #[arg(long, global = true)]
    physics_constants: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a policy for a few episodes and print their scores.
    Demo {
        #[command(flatten)]
        target: Target,
        #[arg(long, default_value = "push")]
        policy: PolicyKind,
        #[arg(long, default_value_t = 1)]
        episodes: u64,
    },
    /// Print a task configuration, optionally sampled from a space.
    Task {
        #[command(flatten)]
        target: Target,
        /// Draw every variable from this space (A or B).
        #[arg(long)]
        space: Option<Space>,
    },
    /// Fractional overlap of a scene file.
    Overlap {
        scene: PathBuf,
        #[arg(long)]
        voxel: Option<f64>,
    },
    /// Run evaluation protocols and write a report.
    Evaluate {
        #[command(flatten)]
        target: Target,
        /// Comma-separated protocol ids; all twelve when omitted.
        #[arg(long, value_delimiter = ',')]
        protocols: Vec<String>,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        #[arg(long, default_value = "push")]
        policy: PolicyKind,
        /// Independent replicates, each with its own derived seed.
        #[arg(long, default_value_t = 1)]
        replicates: u64,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Serve the wire protocol on stdio or TCP.
    Serve {
        #[arg(long, conflicts_with = "stdio")]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        stdio: bool,
    },
    /// Record episodes to JSON-lines logs.
    Record {
        #[command(flatten)]
        target: Target,
        #[arg(long, default_value = "random")]
        policy: PolicyKind,
        /// Standard curriculum 0, 1 or 2.
        #[arg(long, default_value_t = 0)]
        curriculum: u8,
        #[arg(long, default_value_t = 1)]
        episodes: u64,
        #[arg(long, default_value_t = SNAPSHOT_EVERY)]
        snapshot_every: u64,
        /// Log file, or a directory when recording several episodes.
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run a log and check it bit for bit.
    Replay { log: PathBuf },
}

#[derive(Args, Debug)]
struct Target {
    #[arg(long, default_value = "pushing")]
    family: Family,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    catalog: Option<PathBuf>,
    #[serde(default)]
    options: Option<EnvOptions>,
    #[serde(default)]
    overrides: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    curriculum: Option<Curriculum>,
}

enum Failure {
    Usage(String),
    Runtime(Error),
    Diverged(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

struct Context {
    env: Env,
    run: RunConfig,
    seed: u64,
}

impl Context {
    fn load(cli: &Cli) -> Result<Self, Failure> {
        let run: RunConfig = match &cli.config {
            Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?).map_err(Error::from)?,
            None => RunConfig::default(),
        };
        let catalog = match &run.catalog {
            Some(p) => Catalog::load(p)?,
            None => Catalog::shipped(),
        };
        let constants = match &cli.physics_constants {
            Some(p) => PhysicsConstants::load(p)?,
            None => PhysicsConstants::shipped(),
        };
        let options = run.options.clone().unwrap_or_default();
        Ok(Self {
            env: Env::with_parts(catalog, constants, options),
            run,
            seed: cli.seed,
        })
    }

    /// Default task of `family` with the run's overrides applied.
    fn task(&self, family: Family) -> Result<TaskInstance, Failure> {
        let base = build_task(family, &TaskParams::default(), self.seed)?;
        if self.run.overrides.is_empty() {
            return Ok(base);
        }
        let iv = Intervention {
            assignments: self.run.overrides.clone(),
            ..Intervention::default()
        };
        let (cat, k) = (self.env.catalog(), self.env.constants());
        match prepare_intervention(family, cat, k, &base.config, &iv, Phase::Reset, self.seed)? {
            Outcome::Accepted(c) => Ok(TaskInstance::from_config(family, &c, k)?),
            Outcome::Rejected(r) => Err(Failure::Usage(format!("overrides rejected: {}", r.detail))),
        }
    }

    fn policy(&self, kind: PolicyKind) -> Box<dyn Policy> {
        kind.build(self.env.constants())
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn demo(ctx: &Context, family: Family, kind: PolicyKind, episodes: u64) -> Result<(), Failure> {
    let task = ctx.task(family)?;
    let mut env = ctx.env.clone();
    let mut policy = ctx.policy(kind);
    for e in 0..episodes {
        let seed = mix_seed(&[ctx.seed, e]);
        let mut obs = env.reset(&task, &task.config, seed)?;
        policy.reset(env.layout()?, seed);
        let mut last = env.fractional_success()?;
        let mut total = 0.0;
        while !env.is_done() {
            let r = env.step(&policy.act(&obs))?;
            total += r.reward;
            last = r.info.fractional_success;
            obs = r.observation;
        }
        println!("episode {e}: steps {} return {total:.4} final fractional success {last:.4}", env.steps()?);
    }
    Ok(())
}

fn task(ctx: &Context, family: Family, space: Option<Space>) -> Result<(), Failure> {
    let task = ctx.task(family)?;
    let config: EnvConfig = match space {
        None => task.config.clone(),
        Some(Space::Union) => return Err(Failure::Usage("sample from A or B".into())),
        Some(s) => sample_all(family, ctx.env.catalog(), ctx.env.constants(), &task.config, s, ctx.seed)?.0,
    };
    let task = TaskInstance::from_config(family, &config, ctx.env.constants())?;
    print_json(&serde_json::json!({
        "family": family,
        "episode_limit_steps": task.episode_limit_steps,
        "observation_layout": blockworld::env::ObservationLayout::for_task(&task).fields(),
        "config": config,
    }));
    Ok(())
}

fn overlap(scene: &Path, voxel: Option<f64>) -> Result<(), Failure> {
    let scene: Scene = serde_json::from_str(&std::fs::read_to_string(scene)?).map_err(Error::from)?;
    let mut opts = OverlapOptions::default();
    if let Some(v) = voxel {
        if !(v > 0.0) {
            return Err(Failure::Usage("voxel size must be positive".into()));
        }
        opts.voxel = v;
    }
    let f = fractional_overlap_with(&scene.blocks, &scene.goal_shape(), &opts)?;
    println!("{f}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    ctx: &Context,
    family: Family,
    protocols: &[String],
    episodes: usize,
    kind: PolicyKind,
    replicates: u64,
    json: Option<&Path>,
    csv: Option<&Path>,
) -> Result<(), Failure> {
    let suite = if protocols.is_empty() {
        blockworld::evaluation::default_protocol_suite(family)
    } else {
        select_protocols(family, protocols).map_err(|e| Failure::Usage(e.to_string()))?
    };
    if episodes == 0 || replicates == 0 {
        return Err(Failure::Usage("episodes and replicates must be positive".into()));
    }
    let task = ctx.task(family)?;
    let constants = ctx.env.constants().clone();
    let factory = move || kind.build(&constants);
    let mut reports: Vec<ScoreReport> = Vec::new();
    for p in &suite {
        for r in 0..replicates {
            let seed = if replicates == 1 { ctx.seed } else { mix_seed(&[ctx.seed, r]) };
            let report = run_protocol(&ctx.env, &task, p, &factory, episodes, seed)?;
            let bad = audit_space(&ctx.env, &report)?;
            if !bad.is_empty() {
                log::warn!("{}: {} sampled values outside {}", p.id, bad.len(), p.space);
            }
            eprintln!(
                "{} ({}) replicate {r}: mean {:.4} over {} episodes, {} failed",
                p.id,
                p.label(),
                report.mean_final_fractional_success,
                report.episodes,
                report.failed_episodes
            );
            reports.push(report);
        }
    }
    let table = aggregate_report(&reports)?;
    print!("{}", table.to_csv()?);
    if let Some(path) = json {
        let doc = serde_json::json!({ "table": table, "reports": reports });
        std::fs::write(path, serde_json::to_string_pretty(&doc).map_err(Error::from)?)?;
    }
    if let Some(path) = csv {
        std::fs::write(path, table.to_csv()?)?;
    }
    Ok(())
}

fn serve(ctx: &Context, port: Option<u16>, host: &str, stdio: bool) -> Result<(), Failure> {
    match (port, stdio) {
        (Some(p), false) => {
            let listener = harness::bind((host, p))?;
            eprintln!("listening on {}", listener.local_addr()?);
            harness::serve_tcp(&ctx.env, listener)?;
        }
        (None, true) => harness::serve_stdio(&ctx.env)?,
        _ => return Err(Failure::Usage("choose --stdio or --port".into())),
    }
    Ok(())
}

fn record(
    ctx: &Context,
    family: Family,
    kind: PolicyKind,
    curriculum: u8,
    episodes: u64,
    snapshot_every: u64,
    out: &Path,
) -> Result<(), Failure> {
    let curriculum = match &ctx.run.curriculum {
        Some(c) => c.clone(),
        None => Curriculum::standard(curriculum).map_err(|e| Failure::Usage(e.to_string()))?,
    };
    curriculum.validate(ctx.env.catalog())?;
    let task = ctx.task(family)?;
    let mut env = ctx.env.clone();
    let mut runner = CurriculumRunner::new(curriculum, &task, ctx.seed);
    let mut policy = ctx.policy(kind);
    if episodes > 1 {
        std::fs::create_dir_all(out)?;
    }
    for e in 0..episodes {
        let log = harness::record_curriculum_episode(&mut env, &mut runner, policy.as_mut(), snapshot_every)?;
        let path = if episodes > 1 { out.join(format!("episode_{e:03}.jsonl")) } else { out.to_path_buf() };
        log.save(&path)?;
        eprintln!("wrote {} ({} steps)", path.display(), log.steps.len());
    }
    Ok(())
}

fn replay(ctx: &Context, path: &Path) -> Result<(), Failure> {
    let log = EpisodeLog::load(path)?;
    match harness::replay(&ctx.env, &log)? {
        Verdict::Pass { steps } => {
            println!("pass: {steps} steps reproduced");
            Ok(())
        }
        Verdict::Fail { index, field, detail } => {
            Err(Failure::Diverged(format!("diverged at step {index} on {field}: {detail}")))
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let ctx = Context::load(&cli)?;
    match &cli.command {
        Command::Demo { target, policy, episodes } => demo(&ctx, target.family, *policy, *episodes),
        Command::Task { target, space } => task(&ctx, target.family, *space),
        Command::Overlap { scene, voxel } => overlap(scene, *voxel),
        Command::Evaluate {
            target,
            protocols,
            episodes,
            policy,
            replicates,
            json,
            csv,
        } => evaluate(
            &ctx,
            target.family,
            protocols,
            *episodes,
            *policy,
            *replicates,
            json.as_deref(),
            csv.as_deref(),
        ),
        Command::Serve { port, host, stdio } => serve(&ctx, *port, host, *stdio),
        Command::Record {
            target,
            policy,
            curriculum,
            episodes,
            snapshot_every,
            out,
        } => record(&ctx, target.family, *policy, *curriculum, *episodes, *snapshot_every, out),
        Command::Replay { log } => replay(&ctx, log),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Diverged(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(3)
        }
    }
}
