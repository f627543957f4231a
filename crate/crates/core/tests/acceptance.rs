//! Acceptance suite. Runs every primary criterion, prints one line per
//! criterion and exits non-zero if any of them fails.
//!
//! Built with `harness = false` so the verdict lines are always visible
//! under `cargo test`.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use blockworld::curriculum::{ActorContext, ActorSchedule, Curriculum, CurriculumRunner, InterventionActor};
use blockworld::env::{ObservationLayout, OBS_HEADER, OBS_PER_BLOCK, OBS_PER_PART};
use blockworld::evaluation::{audit_space, default_protocol_suite, run_protocol, ScoreReport};
use blockworld::geometry::{box_pair_overlap, fractional_overlap, GoalShape, DEFAULT_VOXEL};
use blockworld::harness::{record_curriculum_episode, record_episode, replay, EpisodeLog, Verdict};
use blockworld::math::{Quat, Vec3};
use blockworld::param_space::Bound;
use blockworld::policies::PolicyKind;
use blockworld::rewards::{dense_reward, RewardContext, RewardType, Snapshot, PICK_AND_PLACE_LIFT};
use blockworld::tasks::{build_task, TaskParams};
use blockworld::{Catalog, Cuboid, Env, EnvOptions, Error, Family, PhysicsConstants, Pose, RobotCommand, Space, TaskInstance};
use nalgebra::{Quaternion, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniformly random rotation (Shoemake).
fn random_rotation(r: &mut ChaCha8Rng) -> Quat {
    let (u1, u2, u3): (f64, f64, f64) = (r.random(), r.random(), r.random());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    UnitQuaternion::new_normalize(Quaternion::new(
        a * (tau * u2).sin(),
        a * (tau * u2).cos(),
        b * (tau * u3).sin(),
        b * (tau * u3).cos(),
    ))
}

fn random_cuboid(r: &mut ChaCha8Rng, spread: f64, lo: f64, hi: f64) -> Cuboid {
    let p = Vec3::new(r.random_range(-spread..spread), r.random_range(-spread..spread), r.random_range(0.0..spread));
    let size = [r.random_range(lo..hi), r.random_range(lo..hi), r.random_range(lo..hi)];
    Cuboid::new(Pose::new(p, random_rotation(r)), size, 0.03)
}

/// Point-in-box written against nalgebra only.
struct Oracle {
    center: Vec3,
    rot_t: nalgebra::Matrix3<f64>,
    half: Vec3,
}

impl Oracle {
    fn new(c: &Cuboid) -> Self {
        Self {
            center: c.pose.position,
            rot_t: c.pose.orientation.to_rotation_matrix().matrix().transpose(),
            half: Vec3::new(c.size[0], c.size[1], c.size[2]) * 0.5,
        }
    }

    fn contains(&self, p: &Vec3) -> bool {
        let l = self.rot_t * (p - self.center);
        l.x.abs() <= self.half.x && l.y.abs() <= self.half.y && l.z.abs() <= self.half.z
    }

    fn world(&self, local: &Vec3) -> Vec3 {
        self.center + self.rot_t.transpose() * local
    }
}

// Metric bounds and anchors

fn metric_bounds() -> Outcome {
    let bad: Vec<usize> = (0..10_000usize)
        .into_par_iter()
        .filter_map(|i| {
            let mut r = rng(i as u64);
            let blocks: Vec<Cuboid> = (0..r.random_range(1..5)).map(|_| random_cuboid(&mut r, 0.08, 0.02, 0.1)).collect();
            let parts: Vec<Cuboid> = (0..r.random_range(1..4)).map(|_| random_cuboid(&mut r, 0.08, 0.03, 0.1)).collect();
            let mut goal = GoalShape::new(parts);
            if goal.parts.len() > 1 {
                goal.imposed_mask[0] = r.random_bool(0.5);
            }
            let f = fractional_overlap(&blocks, &goal).ok()?;
            (!(0.0..=1.0).contains(&f)).then_some(i)
        })
        .collect();
    ensure(bad.is_empty(), || format!("{} scenes outside [0,1], first seed {}", bad.len(), bad[0]))?;

    let mut r = rng(99);
    let mut anchors = 0;
    for _ in 0..50 {
        let c = random_cuboid(&mut r, 0.08, 0.03, 0.1);
        let same = fractional_overlap(std::slice::from_ref(&c), &GoalShape::new(vec![c.clone()])).map_err(|e| e.to_string())?;
        ensure(same == 1.0, || format!("coincident block scored {same}"))?;
        let mut far = c.clone();
        far.pose.position.x += 1.0;
        let none = fractional_overlap(&[far], &GoalShape::new(vec![c])).map_err(|e| e.to_string())?;
        ensure(none == 0.0, || format!("disjoint block scored {none}"))?;
        anchors += 2;
    }

    let task = build_task(Family::Stacking2, &TaskParams::default(), 0).map_err(|e| e.to_string())?;
    let mut parts = task.goal.parts.clone();
    parts.sort_by(|a, b| a.pose.position.z.total_cmp(&b.pose.position.z));
    let bottom = parts[0].clone();
    let mut aside = parts[1].clone();
    aside.pose.position = Vec3::new(-0.1, 0.1, 0.5 * aside.size[2]);
    let half = fractional_overlap(&[bottom, aside], &task.goal).map_err(|e| e.to_string())?;
    let total_height = parts.iter().map(|p| p.size[2]).sum::<f64>();
    let tol = DEFAULT_VOXEL / total_height;
    ensure(half <= 0.5 + tol, || format!("bottom-only stacking2 scored {half}"))?;
    Ok(format!("10000 fuzzed scenes in [0,1]; {anchors} exact anchors; bottom-only stacking2 = {half:.4} (<= 0.5 + {tol:.4})"))
}

// Geometry oracle

fn geometry_oracle() -> Outcome {
    const N: usize = 1_000_000;
    let pairs: Vec<(usize, f64, f64, f64)> = (0..100usize)
        .into_par_iter()
        .map(|i| {
            let mut r = rng(1000 + i as u64);
            let a = random_cuboid(&mut r, 0.03, 0.03, 0.1);
            let b = random_cuboid(&mut r, 0.03, 0.03, 0.1);
            let exact = box_pair_overlap(&a, &b);
            let (oa, ob) = (Oracle::new(&a), Oracle::new(&b));
            let half = oa.half;
            let hits = (0..N)
                .filter(|_| {
                    let l = Vec3::new(
                        r.random_range(-half.x..half.x),
                        r.random_range(-half.y..half.y),
                        r.random_range(-half.z..half.z),
                    );
                    ob.contains(&oa.world(&l))
                })
                .count();
            let va = a.size.iter().product::<f64>();
            let p = hits as f64 / N as f64;
            let sigma = va * (p * (1.0 - p) / N as f64).sqrt();
            (i, exact, va * p, sigma)
        })
        .collect();
    let worst = pairs
        .iter()
        .map(|&(i, e, m, s)| (i, (e - m).abs() / s.max(1e-12)))
        .fold((0, 0.0f64), |acc, x| if x.1 > acc.1 { x } else { acc });
    let outside: Vec<_> = pairs.iter().filter(|&&(_, e, m, s)| (e - m).abs() > 3.0 * s + 1e-12).collect();
    ensure(outside.is_empty(), || {
        let (i, e, m, s) = outside[0];
        format!("{} pairs beyond 3 sigma; pair {i}: exact {e:.3e}, estimate {m:.3e}, sigma {s:.1e}", outside.len())
    })?;

    let scenes: Vec<(usize, f64, f64)> = (0..100usize)
        .into_par_iter()
        .map(|i| {
            let mut r = rng(5000 + i as u64);
            let blocks: Vec<Cuboid> = (0..r.random_range(1..5)).map(|_| random_cuboid(&mut r, 0.04, 0.04, 0.09)).collect();
            let parts: Vec<Cuboid> = (0..r.random_range(1..4)).map(|_| random_cuboid(&mut r, 0.04, 0.04, 0.09)).collect();
            let goal = GoalShape::new(parts.clone());
            let voxel = fractional_overlap(&blocks, &goal).expect("goal has volume");
            let go: Vec<Oracle> = parts.iter().map(Oracle::new).collect();
            let bo: Vec<Oracle> = blocks.iter().map(Oracle::new).collect();
            let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
            for p in &parts {
                for c in p.corners() {
                    lo = lo.inf(&c);
                    hi = hi.sup(&c);
                }
            }
            let (mut inside, mut covered) = (0u64, 0u64);
            for _ in 0..N {
                let q = Vec3::new(r.random_range(lo.x..hi.x), r.random_range(lo.y..hi.y), r.random_range(lo.z..hi.z));
                if go.iter().any(|g| g.contains(&q)) {
                    inside += 1;
                    if bo.iter().any(|b| b.contains(&q)) {
                        covered += 1;
                    }
                }
            }
            (i, voxel, covered as f64 / inside as f64)
        })
        .collect();
    let worst_scene = scenes.iter().map(|&(_, v, m)| (v - m).abs()).fold(0.0, f64::max);
    let off: Vec<_> = scenes.iter().filter(|&&(_, v, m)| (v - m).abs() > 0.02).collect();
    ensure(off.is_empty(), || {
        let (i, v, m) = off[0];
        format!("{} scenes off by > 0.02; scene {i}: voxel {v:.4}, Monte-Carlo {m:.4}", off.len())
    })?;
    Ok(format!(
        "100 pairs within 3 sigma (worst {:.2} sigma, pair {}); 100 scenes within 0.02 (worst {worst_scene:.4})",
        worst.1, worst.0
    ))
}

// Space discipline

type Row = (&'static str, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);

/// The published variable tables, transcribed by hand. `pose_cyl` rows list
/// radius, azimuth and height; the fourth (yaw) component is checked
/// separately. NaN stands for the symbolic `h/2` bound.
fn published_table() -> Vec<Row> {
    let pi = std::f64::consts::PI;
    let h = f64::NAN;
    let rgb = |lo: f64, hi: f64| (vec![lo; 3], vec![hi; 3]);
    let (ca, cb) = (rgb(0.0, 0.5), rgb(0.5, 1.0));
    let mut rows: Vec<Row> = vec![
        ("gravity_z", vec![-10.0], vec![-7.0], vec![-7.0], vec![-4.0]),
        ("floor_friction", vec![0.3], vec![0.6], vec![0.6], vec![0.8]),
        ("stage_friction", vec![0.3], vec![0.6], vec![0.6], vec![0.8]),
        (
            "joint_positions",
            [-1.57, -1.2, -3.0].repeat(3),
            [-0.69, 0.0, 0.0].repeat(3),
            [-0.69, 0.0, 0.0].repeat(3),
            [1.0, 1.57, 3.0].repeat(3),
        ),
        ("block.size", vec![0.055; 3], vec![0.075; 3], vec![0.075; 3], vec![0.095; 3]),
        ("block.mass", vec![0.015], vec![0.045], vec![0.045], vec![0.1]),
        ("block.pose_cyl", vec![0.0, -pi, h], vec![0.11, pi, 0.15], vec![0.11, -pi, h], vec![0.15, pi, 0.3]),
        ("goal.size", vec![0.055; 3], vec![0.075; 3], vec![0.075; 3], vec![0.095; 3]),
        ("link.mass", vec![0.015], vec![0.045], vec![0.045], vec![0.1]),
        ("goal_height", vec![0.08], vec![0.20], vec![0.20], vec![0.25]),
        ("tower_dims", vec![0.08; 3], vec![0.12; 3], vec![0.12; 3], vec![0.20; 3]),
    ];
    for id in ["stage_color", "floor_color", "block.color", "goal.color", "link.color"] {
        rows.push((id, ca.0.clone(), ca.1.clone(), cb.0.clone(), cb.1.clone()));
    }
    rows
}

fn bound_matches(b: &Bound, expected: f64) -> bool {
    match b {
        Bound::Symbol(s) => expected.is_nan() && s == "h/2",
        Bound::Value(v) => !expected.is_nan() && (v - expected).abs() < 1e-12,
    }
}

fn space_discipline() -> Outcome {
    let cat = Catalog::shipped();
    let mut checked = 0;
    for (id, alo, ahi, blo, bhi) in published_table() {
        let spec = cat.spec(id).map_err(|e| e.to_string())?;
        for (bounds, want, what) in [
            (&spec.space_a.0, &alo, "A low"),
            (&spec.space_a.1, &ahi, "A high"),
            (&spec.space_b.0, &blo, "B low"),
            (&spec.space_b.1, &bhi, "B high"),
        ] {
            for (k, w) in want.iter().enumerate() {
                ensure(bound_matches(&bounds[k], *w), || format!("{id} {what}[{k}] is {:?}, table says {w}", bounds[k]))?;
                checked += 1;
            }
        }
    }

    let names: Vec<String> = cat.variables.keys().cloned().collect();
    let overlaps: Vec<String> = names
        .par_iter()
        .filter_map(|id| {
            let mut r = rng(7);
            let spec = cat.spec(id).unwrap();
            let h = 0.0325;
            let (alo, ahi) = spec.space_a.resolve(h);
            let (blo, bhi) = spec.space_b.resolve(h);
            for k in 0..10_000 {
                // Alternate draws from each space with draws over their hull.
                let v: Vec<f64> = match k % 3 {
                    0 => cat.sample_value(None, id, Space::A, &mut r).unwrap(),
                    1 => cat.sample_value(None, id, Space::B, &mut r).unwrap(),
                    _ => (0..spec.dims)
                        .map(|d| {
                            let (lo, hi) = (alo[d].min(blo[d]), ahi[d].max(bhi[d]));
                            let x: f64 = r.random_range(lo..=hi);
                            if spec.kind == blockworld::param_space::VarKind::Integer {
                                x.round()
                            } else {
                                x
                            }
                        })
                        .collect(),
                };
                let in_a = cat.space_membership(id, &v, Space::A).unwrap();
                let in_b = cat.space_membership(id, &v, Space::B).unwrap();
                if in_a && in_b {
                    return Some(format!("{id} {v:?}"));
                }
            }
            None
        })
        .collect();
    ensure(overlaps.is_empty(), || format!("A and B intersect: {overlaps:?}"))?;

    let env = Env::new(EnvOptions::default());
    let k = env.constants().clone();
    let factory = move || PolicyKind::Noop.build(&k);
    let jobs: Vec<(Family, usize)> = Family::ALL.iter().flat_map(|&f| (1..12).map(move |p| (f, p))).collect();
    let results: Vec<std::result::Result<(usize, usize), String>> = jobs
        .par_iter()
        .map(|&(family, p)| {
            let task = build_task(family, &TaskParams::default(), 0).map_err(|e| e.to_string())?;
            let protocol = &default_protocol_suite(family)[p];
            let episodes = if family == Family::Pushing { 4 } else { 1 };
            let report = run_protocol(&env, &task, protocol, &factory, episodes, p as u64).map_err(|e| format!("{family} P{p}: {e}"))?;
            // Audit from the serialized report, as a log reader would.
            let report: ScoreReport = serde_json::from_str(&report.to_json()).map_err(|e| e.to_string())?;
            let bad = audit_space(&env, &report).map_err(|e| e.to_string())?;
            if !bad.is_empty() {
                return Err(format!("{family} P{p}: values outside {}: {bad:?}", report.space));
            }
            Ok((report.records.iter().map(|r| r.sampled.len()).sum(), report.episodes))
        })
        .collect();
    let mut values = 0;
    let mut episodes = 0;
    for r in results {
        let (v, e) = r?;
        values += v;
        episodes += e;
    }
    Ok(format!(
        "{checked} published bounds match; A and B disjoint over 10^4 points for {} variables; {values} values from {episodes} protocol episodes in their space",
        names.len()
    ))
}

// Episode structure

fn rollout_noop(env: &mut Env, task: &TaskInstance) -> std::result::Result<u64, String> {
    let obs = env.reset_task(task, 0).map_err(|e| e.to_string())?;
    let hold = RobotCommand::from_slice(blockworld::ActionMode::JointPosition, &obs.values()[1..10]).unwrap();
    let mut steps = 0;
    while !env.is_done() {
        env.step(&hold).map_err(|e| e.to_string())?;
        steps += 1;
        if steps > 10_000 {
            return Err("episode never ended".into());
        }
    }
    match env.step(&hold) {
        Err(Error::Lifecycle(_)) => Ok(steps),
        other => Err(format!("stepping a finished episode gave {other:?}")),
    }
}

fn episode_structure() -> Outcome {
    let rate = PhysicsConstants::shipped().control_rate_hz();
    let lengths: Vec<std::result::Result<(usize, u64), String>> = (1..=5usize)
        .into_par_iter()
        .map(|n| {
            let mut env = Env::new(EnvOptions::default());
            let params = TaskParams {
                num_blocks: Some(n),
                ..TaskParams::default()
            };
            let task = build_task(Family::StackedBlocks, &params, 0).map_err(|e| e.to_string())?;
            let steps = rollout_noop(&mut env, &task)?;
            let want = n as u64 * 10 * rate;
            if steps != want {
                return Err(format!("{n} blocks ended after {steps} steps, expected {want}"));
            }
            Ok((n, steps))
        })
        .collect();
    let mut seen = Vec::new();
    for l in lengths {
        seen.push(l?.1);
    }

    let mut env = Env::new(EnvOptions::default());
    let mut lens = Vec::new();
    for family in Family::ALL {
        let task = build_task(family, &TaskParams::default(), 0).map_err(|e| e.to_string())?;
        let obs = env.reset_task(&task, 0).map_err(|e| e.to_string())?;
        let want = 28 + 17 * task.blocks.len() + 10 * task.goal.parts.len() + 10 * task.obstacles.len();
        ensure(obs.len() == want, || format!("{family}: observation has {} values, expected {want}", obs.len()))?;
        lens.push(format!("{family}={want}"));
    }
    Ok(format!("limits {seen:?} steps for 1..5 blocks; lengths {}", lens.join(" ")))
}

// Determinism

fn determinism() -> Outcome {
    let results: Vec<std::result::Result<(String, usize), String>> = (0..20u64)
        .into_par_iter()
        .map(|i| {
            let family = Family::ALL[i as usize % 8];
            let curriculum = (i % 3) as u8;
            let task = build_task(family, &TaskParams::default(), i).map_err(|e| e.to_string())?;
            let mut env = Env::new(EnvOptions::default());
            let mut runner = CurriculumRunner::new(Curriculum::standard(curriculum).unwrap(), &task, i);
            let mut policy = PolicyKind::Random.build(env.constants());
            let log = record_curriculum_episode(&mut env, &mut runner, policy.as_mut(), 50).map_err(|e| e.to_string())?;
            let text = log.to_jsonl();
            let back = EpisodeLog::from_jsonl(&text).map_err(|e| e.to_string())?;
            let fresh = Env::new(EnvOptions::default());
            match replay(&fresh, &back).map_err(|e| e.to_string())? {
                Verdict::Pass { steps } => Ok((format!("{family}/c{curriculum}"), steps)),
                v => Err(format!("{family} curriculum {curriculum}: {v:?}")),
            }
        })
        .collect();
    let mut steps = 0;
    let mut runs = BTreeSet::new();
    for r in results {
        let (name, s) = r?;
        runs.insert(name);
        steps += s;
    }

    let mut env = Env::new(EnvOptions::default());
    let task = build_task(Family::Pushing, &TaskParams::default(), 0).map_err(|e| e.to_string())?;
    let mut policy = PolicyKind::Random.build(env.constants());
    let log = record_episode(&mut env, &task, &task.config, 3, policy.as_mut(), 50).map_err(|e| e.to_string())?;
    let mut corrupted = log.clone();
    let v = &mut corrupted.steps[211].action.values;
    v[2] = if v[2].abs() > 0.05 { 0.0 } else { 0.1 };
    let verdict = replay(&env, &corrupted).map_err(|e| e.to_string())?;
    ensure(matches!(verdict, Verdict::Fail { index: 211, .. }), || format!("perturbed step 211 gave {verdict:?}"))?;
    let mut text = log.to_jsonl();
    let cut = text.find("\"reward\"").unwrap();
    text.replace_range(cut..cut + 3, "#!");
    ensure(matches!(EpisodeLog::from_jsonl(&text), Err(Error::Schema(_))), || "garbled log was accepted".into())?;
    Ok(format!("20 episodes ({} family/curriculum pairs, {steps} steps) replay bitwise; perturbation found at step 211", runs.len()))
}

// Dense-reward fidelity

/// Dense rewards written from the published formulas, reading everything
/// from two consecutive observations.
fn oracle_reward(family: Family, layout: &ObservationLayout, prev: &[f64], curr: &[f64]) -> f64 {
    let v3 = |o: &[f64], at: usize| Vec3::new(o[at], o[at + 1], o[at + 2]);
    let tips = |o: &[f64]| [v3(o, 19), v3(o, 22), v3(o, 25)];
    let block = |o: &[f64], i: usize| v3(o, OBS_HEADER + OBS_PER_BLOCK * i);
    let goal = |o: &[f64], j: usize| v3(o, OBS_HEADER + OBS_PER_BLOCK * layout.blocks + OBS_PER_PART * j);
    let d = |o: &[f64], i: usize| tips(o).iter().map(|e| (e - block(o, i)).norm()).sum::<f64>();
    let delta_d = |i: usize| d(curr, i) - d(prev, i);
    let dv = (10..19).map(|k| (curr[k] - prev[k]).powi(2)).sum::<f64>().sqrt();
    let planar = |a: Vec3, b: Vec3| ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
    let (o1, o1p, g1) = (block(curr, 0), block(prev, 0), goal(curr, 0));
    match family {
        Family::Pushing => -750.0 * delta_d(0) - 250.0 * ((o1 - g1).norm() - (o1p - g1).norm()),
        Family::Picking => {
            -750.0 * delta_d(0)
                - 250.0 * ((o1.z - g1.z).abs() - (o1p.z - g1.z).abs())
                - 125.0 * (planar(o1, g1) - planar(o1p, g1))
                - 0.005 * dv
        }
        Family::PickAndPlace => {
            let goal_height = curr[OBS_HEADER + OBS_PER_BLOCK * layout.blocks + 9];
            let t = if (o1.z - g1.z).abs() > 1e-3 { PICK_AND_PLACE_LIFT } else { 0.5 * goal_height };
            -750.0 * delta_d(0) - 50.0 * (planar(o1, g1) - planar(o1p, g1)) - 250.0 * ((o1.z - t).abs() - (o1p.z - t).abs())
                - 0.005 * dv
        }
        Family::Stacking2 => {
            let (o2, o2p, g2) = (block(curr, 1), block(prev, 1), goal(curr, 1));
            let far = if d(curr, 0) > 0.02 { 1.0 } else { 0.0 };
            let near = if d(curr, 0) < 0.02 { 1.0 } else { 0.0 };
            let above = if o2.z - g2.z > 0.0 { 1.0 } else { 0.0 };
            far * (-750.0 * delta_d(0) - 250.0 * ((o1 - g1).norm() - (o1p - g1).norm()))
                + near
                    * (-750.0 * delta_d(1)
                        - 250.0 * ((o2.z - g2.z).abs() - (o1p.z - g2.z).abs())
                        - above * 125.0 * (planar(o2, g2) - planar(o2p, g2)))
                - 0.005 * dv
        }
        _ => unreachable!(),
    }
}

fn snapshot(tips: [[f64; 3]; 3], blocks: Vec<[f64; 3]>, jv: f64) -> Snapshot {
    Snapshot {
        time: 0.0,
        fingertips: tips,
        blocks,
        joint_velocities: [jv; 9],
    }
}

/// Builds observation-shaped vectors for a stacking2 context so the
/// oracle can read them.
fn stacking_vectors(s: &Snapshot, goals: &[[f64; 3]; 2]) -> Vec<f64> {
    let layout = ObservationLayout::new(2, 2, 0);
    let mut v = vec![0.0; layout.len()];
    v[10..19].copy_from_slice(&s.joint_velocities);
    for (k, t) in s.fingertips.iter().enumerate() {
        v[19 + 3 * k..22 + 3 * k].copy_from_slice(t);
    }
    for (i, b) in s.blocks.iter().enumerate() {
        v[layout.block(i)..layout.block(i) + 3].copy_from_slice(b);
    }
    for (j, g) in goals.iter().enumerate() {
        v[layout.goal_part(j)..layout.goal_part(j) + 3].copy_from_slice(g);
    }
    v
}

fn dense_fidelity() -> Outcome {
    let cases = [
        (Family::Pushing, PolicyKind::Push),
        (Family::Pushing, PolicyKind::Random),
        (Family::Picking, PolicyKind::Pick),
        (Family::PickAndPlace, PolicyKind::Random),
        (Family::Stacking2, PolicyKind::Random),
    ];
    let results: Vec<std::result::Result<(usize, f64), String>> = cases
        .par_iter()
        .map(|&(family, kind)| {
            let options = EnvOptions {
                reward: RewardType::Dense,
                ..EnvOptions::default()
            };
            let mut env = Env::new(options);
            let task = build_task(family, &TaskParams::default(), 0).map_err(|e| e.to_string())?;
            let mut policy = kind.build(env.constants());
            let log = record_episode(&mut env, &task, &task.config, 11, policy.as_mut(), 1).map_err(|e| e.to_string())?;
            let log = EpisodeLog::from_jsonl(&log.to_jsonl()).map_err(|e| e.to_string())?;
            let layout = ObservationLayout::for_task(&task);
            let mut prev = log.header.initial.values().to_vec();
            let mut worst = 0.0f64;
            for s in &log.steps {
                let curr = s.snapshot.as_ref().ok_or("missing snapshot")?.values().to_vec();
                let want = oracle_reward(family, &layout, &prev, &curr);
                let err = (want - s.reward).abs();
                worst = worst.max(err);
                if err > 1e-9 {
                    return Err(format!("{family}/{kind} step {}: logged {} vs recomputed {want}", s.t, s.reward));
                }
                prev = curr;
            }
            Ok((log.steps.len(), worst))
        })
        .collect();
    let mut steps = 0;
    let mut worst = 0.0f64;
    for r in results {
        let (n, w) = r?;
        steps += n;
        worst = worst.max(w);
    }

    // Fingertips are spheres outside the block, so d(o1, e) never drops
    // below 0.02 in simulation; the near branches are checked on
    // constructed snapshots instead.
    let goals = [[0.0, 0.0, 0.0325], [0.0, 0.0, 0.0975]];
    let near_tips = |c: [f64; 3]| [[c[0] + 0.005, c[1], c[2]], [c[0], c[1] + 0.005, c[2]], [c[0], c[1], c[2] + 0.005]];
    let branch_cases = [
        // far from block 1
        (snapshot(near_tips([0.1, 0.0, 0.1]), vec![[0.05, 0.0, 0.0325], [0.1, 0.05, 0.0325]], 0.1),
         snapshot(near_tips([0.09, 0.0, 0.1]), vec![[0.04, 0.0, 0.0325], [0.1, 0.05, 0.0325]], 0.3)),
        // holding block 1 with block 2 below its goal
        (snapshot(near_tips([0.05, 0.0, 0.0325]), vec![[0.05, 0.0, 0.0325], [0.02, 0.03, 0.05]], 0.0),
         snapshot(near_tips([0.05, 0.0, 0.0325]), vec![[0.05, 0.0, 0.0325], [0.01, 0.02, 0.06]], 0.2)),
        // holding block 1 with block 2 above its goal
        (snapshot(near_tips([0.05, 0.0, 0.0325]), vec![[0.05, 0.0, 0.0325], [0.02, 0.03, 0.11]], 0.0),
         snapshot(near_tips([0.05, 0.0, 0.0325]), vec![[0.05, 0.0, 0.0325], [0.01, 0.02, 0.12]], -0.2)),
        // exactly on the switch: both indicators are off
        (snapshot([[0.0; 3]; 3], vec![[0.02 / 3.0, 0.0, 0.0], [0.0, 0.0, 0.2]], 0.0),
         snapshot([[0.0; 3]; 3], vec![[0.02 / 3.0, 0.0, 0.0], [0.1, 0.0, 0.2]], 0.0)),
    ];
    let layout = ObservationLayout::new(2, 2, 0);
    for (k, (p, c)) in branch_cases.iter().enumerate() {
        let ctx = RewardContext {
            family: Family::Stacking2,
            prev: p.clone(),
            curr: c.clone(),
            goals: goals.to_vec(),
            goal_sizes: vec![[0.065; 3]; 2],
        };
        let got = dense_reward(&ctx).map_err(|e| e.to_string())?;
        let want = oracle_reward(Family::Stacking2, &layout, &stacking_vectors(p, &goals), &stacking_vectors(c, &goals));
        ensure((got - want).abs() <= 1e-9, || format!("stacking branch case {k}: {got} vs {want}"))?;
    }
    let on_switch = dense_reward(&RewardContext {
        family: Family::Stacking2,
        prev: branch_cases[3].0.clone(),
        curr: branch_cases[3].1.clone(),
        goals: goals.to_vec(),
        goal_sizes: vec![[0.065; 3]; 2],
    })
    .map_err(|e| e.to_string())?;
    ensure(on_switch == 0.0, || format!("reward on the switch distance is {on_switch}"))?;
    Ok(format!(
        "{steps} logged steps over 4 families recomputed (worst error {worst:.1e}); 4 stacking branch cases match"
    ))
}

// Curriculum semantics

fn curriculum_semantics() -> Outcome {
    let catalog = Catalog::shipped();
    let constants = PhysicsConstants::shipped();
    let mut env = Env::new(EnvOptions::default());

    let task = build_task(Family::Pushing, &TaskParams::default(), 0).map_err(|e| e.to_string())?;
    let mut c0 = CurriculumRunner::new(Curriculum::standard(0).unwrap(), &task, 1);
    for _ in 0..100 {
        c0.begin_episode(&mut env).map_err(|e| e.to_string())?;
        ensure(env.task().unwrap().config == task.config, || "curriculum 0 changed the configuration".into())?;
    }
    ensure(c0.history().is_empty(), || format!("curriculum 0 intervened {} times", c0.history().len()))?;

    let mut resets = 0;
    for family in Family::ALL {
        let task = build_task(family, &TaskParams::default(), 0).map_err(|e| e.to_string())?;
        let episodes = if family == Family::Pushing { 100 } else { 15 };
        let mut c1 = CurriculumRunner::new(Curriculum::standard(1).unwrap(), &task, 2);
        let mut c2 = CurriculumRunner::new(Curriculum::standard(2).unwrap(), &task, 3);
        for ep in 0..episodes {
            c1.begin_episode(&mut env).map_err(|e| format!("{family} c1: {e}"))?;
            let h = c1.history().last().filter(|h| h.episode == ep).ok_or(format!("{family}: curriculum 1 skipped episode {ep}"))?;
            let touched: Vec<&String> = h.decision.intervention.assignments.keys().collect();
            let goal_pose = |id: &String| id.starts_with("goal_") && id.ends_with(".pose_cyl") || id == "goal_height";
            ensure(!touched.is_empty() && touched.iter().all(|id| goal_pose(id)), || {
                format!("{family}: curriculum 1 touched {touched:?}")
            })?;
            ensure(h.applied, || format!("{family}: curriculum 1 intervention rejected"))?;

            c2.begin_episode(&mut env).map_err(|e| format!("{family} c2: {e}"))?;
            let h = c2.history().last().filter(|h| h.episode == ep).ok_or(format!("{family}: curriculum 2 skipped episode {ep}"))?;
            ensure(h.applied, || format!("{family}: curriculum 2 intervention rejected"))?;
            let after = c2.config();
            let assigned: BTreeSet<&String> = h.decision.intervention.assignments.keys().collect();
            // num_blocks is only free where the generator takes it as input.
            let expected: BTreeSet<&String> = after
                .ids()
                .filter(|id| id.as_str() != "num_blocks" || family.free_block_count())
                .collect();
            ensure(assigned == expected, || {
                let missing: Vec<_> = expected.difference(&assigned).collect();
                let extra: Vec<_> = assigned.difference(&expected).collect();
                format!("{family}: curriculum 2 left {missing:?} unassigned and assigned {extra:?}")
            })?;
            for (space, id, v) in &h.decision.audit {
                let ok = catalog.membership_in(Some(after), id, v, *space).map_err(|e| e.to_string())?;
                ensure(ok, || format!("{family}: curriculum 2 drew {id}={v:?} outside {space}"))?;
            }
            resets += 1;
        }
    }

    let schedules = [
        ActorSchedule::new(0, 100, 0, 1).unwrap(),
        ActorSchedule::new(3, 40, 0, 7).unwrap(),
        ActorSchedule::new(10, 95, 2, 5).unwrap(),
        ActorSchedule::new(50, 51, 1, 3).unwrap(),
    ];
    let actors: Vec<InterventionActor> = schedules
        .iter()
        .map(|s| InterventionActor::variable_randomizer(["floor_friction"], Space::A, *s))
        .collect();
    let ctx = ActorContext {
        family: Family::Pushing,
        catalog: &catalog,
        constants: &constants,
    };
    let single = Curriculum::compose(vec![actors[1].clone()]);
    let mut fired = BTreeSet::new();
    for ep in 0..100u64 {
        for step in 0..4u64 {
            if single.decide(&ctx, ep, step, &task.config, 0).map_err(|e| e.to_string())?.is_some() {
                fired.insert((ep, step));
            }
        }
    }
    let closed: BTreeSet<(u64, u64)> = (3..40u64).step_by(7).map(|e| (e, 0)).collect();
    ensure(fired == closed, || format!("schedule fired at {fired:?}, expected {closed:?}"))?;

    let mut runner = CurriculumRunner::new(Curriculum::compose(actors), &task, 4);
    let hold = RobotCommand::from_slice(blockworld::ActionMode::JointPosition, &[0.0, 0.9, -1.7, 0.0, 0.9, -1.7, 0.0, 0.9, -1.7]).unwrap();
    for _ in 0..100 {
        runner.begin_episode(&mut env).map_err(|e| e.to_string())?;
        for _ in 0..3 {
            runner.before_step(&mut env).map_err(|e| e.to_string())?;
            env.step(&hold).map_err(|e| e.to_string())?;
        }
    }
    let got: BTreeSet<(u64, u64)> = runner.history().iter().map(|h| (h.episode, h.step)).collect();
    let mut want = BTreeSet::new();
    for ep in 0..100u64 {
        for s in &schedules {
            let t = s.timestep_in_episode;
            let live = ep >= s.start_episode && ep < s.stop_episode && (ep - s.start_episode) % s.episode_periodicity == 0;
            if live && t < 3 {
                want.insert((ep, t));
            }
        }
    }
    ensure(got == want, || format!("runner fired {} times, closed form says {}", got.len(), want.len()))?;
    Ok(format!(
        "curriculum 0: 0 interventions in 100 episodes; curricula 1 and 2 checked on {resets} resets; {} scheduled firings exact",
        want.len()
    ))
}

// Protocol pipeline

fn protocol_pipeline() -> Outcome {
    let env = Env::new(EnvOptions::default());
    let task = build_task(Family::Pushing, &TaskParams::default(), 0).map_err(|e| e.to_string())?;
    let suite = default_protocol_suite(Family::Pushing);
    let k = env.constants().clone();
    let noop = {
        let k = k.clone();
        move || PolicyKind::Noop.build(&k)
    };
    let push = move || PolicyKind::Push.build(&k);

    let r = run_protocol(&env, &task, &suite[0], &noop, 200, 0).map_err(|e| e.to_string())?;
    let s = r.scores();
    ensure(s.len() == 200 && s.iter().all(|&x| x == s[0]), || "no-op scores on P0 differ".into())?;
    let p0 = run_protocol(&env, &task, &suite[0], &push, 200, 0).map_err(|e| e.to_string())?;
    let p11 = run_protocol(&env, &task, &suite[11], &push, 200, 0).map_err(|e| e.to_string())?;
    let (m0, m11) = (p0.mean_final_fractional_success, p11.mean_final_fractional_success);
    ensure(m0 >= 0.7, || format!("push policy P0 mean {m0:.4} < 0.7"))?;
    ensure(m0 >= m11, || format!("push policy P0 mean {m0:.4} below its P11 mean {m11:.4}"))?;
    Ok(format!(
        "no-op P0: 200 scores all {:.4}; push P0 mean {m0:.4} >= 0.7 and >= P11 mean {m11:.4} ({} failed episodes)",
        s[0],
        p0.failed_episodes + p11.failed_episodes
    ))
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria = [
        Criterion { name: "metric bounds and anchors", budget: Duration::from_secs(120), run: metric_bounds },
        Criterion { name: "geometry oracle", budget: Duration::from_secs(300), run: geometry_oracle },
        Criterion { name: "space discipline", budget: Duration::from_secs(60), run: space_discipline },
        Criterion { name: "episode structure", budget: Duration::from_secs(120), run: episode_structure },
        Criterion { name: "determinism", budget: Duration::from_secs(300), run: determinism },
        Criterion { name: "dense-reward fidelity", budget: Duration::from_secs(120), run: dense_fidelity },
        Criterion { name: "curriculum semantics", budget: Duration::from_secs(120), run: curriculum_semantics },
        Criterion { name: "protocol pipeline", budget: Duration::from_secs(600), run: protocol_pipeline },
    ];
    let mut failed = 0;
    for c in criteria.iter().filter(|c| filter.is_empty() || filter.iter().any(|f| c.name.contains(f.as_str()))) {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or("panic".into()))
        });
        let took = start.elapsed();
        let result = match result {
            Ok(detail) if took > c.budget => Err(format!("{detail}; took {took:.1?}, budget {:?}", c.budget)),
            r => r,
        };
        match result {
            Ok(detail) => println!("PASS  {:<28} {detail} [{took:.1?}]", c.name),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:<28} {why} [{took:.1?}]", c.name);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
