//! Acceptance criteria 1-9. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. `ACCEPTANCE_ONLY=1,3,9` runs a subset.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use modnet::composition::{
    log_prob_gaussian, log_prob_grads, tie_and_accumulate, Architecture, BlockId, ComposedPolicy, OptimizerBank,
    ParameterStore, PolicyGradient,
};
use modnet::harness::{self, ExperimentConfig, Variant};
use modnet::nn::{gradient_check, DropoutMask, Mode, OptimizerConfig};
use modnet::rng::stream_rng;
use modnet::sim::{self, forward_kinematics, reset, ObjectState, SimConfig, SimState, Split};
use modnet::trainer::{
    ilqr_solve, iterations_to_threshold, train_grid, ControlProblem, Expert, GridRun, IlqrConfig, TrainHyper,
};
use modnet::universe::{RobotSpec, TaskKind, TaskSpec, Universe, World, WorldSpec};
use modnet::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config_path(name: &str) -> PathBuf {
    workspace_root().join("configs").join(name)
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().is_none_or(|o| o.contains(&n));

    // Criterion 4 is judged on the experts trained by criteria 5 and 6.
    let mut experts: Vec<(WorldSpec, Expert)> = Vec::new();
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let mut record = |n: u32, o: Outcome| {
        println!("criterion {n}: {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };

    if wanted(1) {
        record(1, guarded(criterion_1));
    }
    if wanted(2) {
        record(2, guarded(criterion_2));
    }
    if wanted(3) {
        record(3, guarded(criterion_3));
    }
    let need_reach = wanted(4) || wanted(5) || wanted(8);
    let reach = if need_reach { Some(guarded_value(reach_grid)) } else { None };
    if let Some(Ok(r)) = &reach {
        experts.extend(r.experts.iter().cloned());
    }
    let manip = if wanted(4) || wanted(6) { Some(guarded_value(manip_grid)) } else { None };
    if let Some(Ok(m)) = &manip {
        experts.extend(m.experts.iter().cloned());
    }
    if wanted(4) {
        let o = match (&reach, &manip) {
            (Some(Err(e)), _) | (_, Some(Err(e))) => outcome(false, e.clone()),
            _ => guarded(|| criterion_4(&experts)),
        };
        record(4, o);
    }
    if wanted(5) {
        record(5, reach.as_ref().map_or_else(|| outcome(false, "not run"), criterion_5));
    }
    if wanted(6) {
        record(6, manip.as_ref().map_or_else(|| outcome(false, "not run"), criterion_6));
    }
    if wanted(7) {
        record(7, guarded(criterion_7));
    }
    if wanted(8) {
        record(8, reach.as_ref().map_or_else(|| outcome(false, "not run"), criterion_8));
    }
    if wanted(9) {
        record(9, guarded(criterion_9));
    }

    let failed: Vec<u32> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        println!("acceptance: {} criteria passed", results.len());
    } else {
        println!("acceptance: failed {failed:?}");
        std::process::exit(1);
    }
}

fn panic_message(e: Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panic".into())
}

fn guarded(f: impl FnOnce() -> Outcome + std::panic::UnwindSafe) -> Outcome {
    std::panic::catch_unwind(f).unwrap_or_else(|e| outcome(false, format!("panicked: {}", panic_message(e))))
}

fn guarded_value<T>(f: impl FnOnce() -> T + std::panic::UnwindSafe) -> Result<T, String> {
    std::panic::catch_unwind(f).map_err(|e| format!("panicked: {}", panic_message(e)))
}

// ---------------------------------------------------------------- 1

fn random_task(rng: &mut impl Rng, id: &str) -> TaskSpec {
    let kind = match rng.random_range(0..3) {
        0 => {
            let n = rng.random_range(1..=4);
            TaskKind::Reach {
                target_index: rng.random_range(0..n),
                num_targets: n,
            }
        }
        1 => TaskKind::PushBlock {
            push_distance: rng.random_range(0.2..0.6),
        },
        _ => TaskKind::Drawer {
            axis: [0.0, 1.0],
            target_displacement: 0.4,
            travel: 0.6,
        },
    };
    TaskSpec::new(id, kind)
}

/// A plausible observation: a reset scene with a random arm state.
fn random_state(spec: &WorldSpec, rng: &mut impl Rng, seed: u64) -> SimState {
    let mut s = reset(spec, Split::Train, rng.random_range(0..8), seed);
    for a in s.arm.angles.iter_mut() {
        *a = rng.random_range(-3.0..3.0);
    }
    for v in s.arm.velocities.iter_mut() {
        *v = rng.random_range(-2.0..2.0);
    }
    s
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let configs = 60;
    let mut worst: f64 = 0.0;
    for seed in 0..configs {
        let mut rng = stream_rng(seed, &[1]);
        let links: Vec<f64> = (0..rng.random_range(2..=3)).map(|_| rng.random_range(0.4..1.2)).collect();
        let u = Universe::new(vec![RobotSpec::new("r", links)], vec![random_task(&mut rng, "k")]).unwrap();
        let world = World::new("r", "k");
        let hidden = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<usize> {
            (0..rng.random_range(1..=2)).map(|_| rng.random_range(3..=12)).collect()
        };
        let arch = Architecture {
            task_hidden: hidden(&mut rng),
            robot_hidden: hidden(&mut rng),
            bottleneck: rng.random_range(2..=16),
            dropout: 0.2,
            initial_log_std: rng.random_range(-1.5..0.0),
        };
        let store = ParameterStore::init(&u, std::slice::from_ref(&world), &arch, seed).unwrap();
        let spec = u.world_spec(&world).unwrap();
        let obs = spec.split_observation(&random_state(&spec, &mut rng, seed)).unwrap();
        let base = store.policy(&world).unwrap();
        let act: Vec<f64> = (0..base.action_dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let keep: Vec<bool> = (0..base.bottleneck()).map(|_| rng.random::<f64>() > 0.2).collect();
        let mask = DropoutMask::from_keep(keep, 0.2).unwrap();
        let loss = |p: &ComposedPolicy<'_>| {
            let mean = p.forward_with_mask(&obs, mask.clone()).unwrap().mean().to_vec();
            log_prob_gaussian(&mean, &p.log_std, &act).unwrap()
        };
        let cache = base.forward_with_mask(&obs, mask.clone()).unwrap();
        let (dm, ds) = log_prob_grads(cache.mean(), &base.log_std, &act);
        let g = base.backward(&cache, &dm, &ds).unwrap();
        let r_err = gradient_check(
            |p| {
                let mut r = base.robot.clone();
                r.assign(p).unwrap();
                loss(&ComposedPolicy { robot: &r, ..base.clone() })
            },
            &g.robot,
            &base.robot.flatten(),
            1e-6,
        )
        .unwrap();
        let t_err = gradient_check(
            |p| {
                let mut t = base.task.clone();
                t.assign(p).unwrap();
                loss(&ComposedPolicy { task: &t, ..base.clone() })
            },
            &g.task,
            &base.task.flatten(),
            1e-6,
        )
        .unwrap();
        let s_err = gradient_check(
            |p| loss(&ComposedPolicy { log_std: p.to_vec(), ..base.clone() }),
            &g.log_std,
            &base.log_std,
            1e-6,
        )
        .unwrap();
        worst = worst.max(r_err).max(t_err).max(s_err);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-6 && secs < 30.0,
        format!("{configs} configurations, max error |g - fd| / max(1, |g|) = {worst:.2e} (< 1e-6), {secs:.1} s (< 30 s)"),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let robots = vec![
        RobotSpec::new("r1", vec![1.0, 1.0]),
        RobotSpec::new("r2", vec![0.7, 1.3]),
        RobotSpec::new("r3", vec![0.7, 0.7, 0.6]),
    ];
    let tasks = vec![
        TaskSpec::new("reach", TaskKind::Reach { target_index: 1, num_targets: 3 }),
        TaskSpec::new("push", TaskKind::PushBlock { push_distance: 0.4 }),
        TaskSpec::new(
            "drawer",
            TaskKind::Drawer {
                axis: [0.0, 1.0],
                target_displacement: 0.5,
                travel: 0.6,
            },
        ),
    ];
    let u = Universe::new(robots, tasks).unwrap();
    let worlds = u.enumerate_worlds();
    let mut store = ParameterStore::init(&u, &worlds, &Architecture::default(), 3).unwrap();
    let mut rng = stream_rng(2, &[]);
    let mut contributions = Vec::new();
    for w in &worlds {
        let spec = u.world_spec(w).unwrap();
        let p = store.policy(w).unwrap();
        // Several samples per world, summed into one per-world gradient.
        let mut g = PolicyGradient::zeros(&p);
        for _ in 0..4 {
            let obs = spec.split_observation(&random_state(&spec, &mut rng, 2)).unwrap();
            let cache = p.forward(&obs, Mode::Train, &mut rng).unwrap();
            let act: Vec<f64> = (0..p.action_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (dm, ds) = log_prob_grads(cache.mean(), &p.log_std, &act);
            g.add_assign(&p.backward(&cache, &dm, &ds).unwrap());
        }
        contributions.push((w.clone(), g));
    }
    let tied = tie_and_accumulate(&store, &contributions).unwrap();

    // Independent per-block sums.
    let mut expected: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut add = |name: String, g: &[f64]| {
        let e = expected.entry(name).or_insert_with(|| vec![0.0; g.len()]);
        for (a, b) in e.iter_mut().zip(g) {
            *a += b;
        }
    };
    for (w, g) in &contributions {
        add(format!("robot:{}", w.robot), &g.robot);
        add(format!("task:{}", w.task), &g.task);
        add(format!("log_std:{}", w.key()), &g.log_std);
    }
    let mut worst: f64 = 0.0;
    let mut blocks = 0;
    for (id, g) in &tied.blocks {
        let key = match id {
            BlockId::Robot(r) => format!("robot:{r}"),
            BlockId::Task(t) => format!("task:{t}"),
            BlockId::LogStd(w) => format!("log_std:{}", w.key()),
        };
        let e = &expected[&key];
        let num: f64 = g.iter().zip(e).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = e.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        worst = worst.max(num / den);
        blocks += 1;
    }
    let block_count_ok = blocks == expected.len() && blocks == 3 + 3 + 9;

    let mut bank = OptimizerBank::new(OptimizerConfig::adam(1e-2));
    store.apply(&tied, &mut bank).unwrap();
    let mut identical = true;
    for w in &worlds {
        let p = store.policy(w).unwrap();
        let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        identical &= same(&p.robot.flatten(), &store.robot(&w.robot).unwrap().flatten());
        identical &= same(&p.task.flatten(), &store.task(&w.task).unwrap().flatten());
    }
    // Worlds sharing a block observe the same bytes after the update.
    for a in &worlds {
        for b in &worlds {
            let (pa, pb) = (store.policy(a).unwrap(), store.policy(b).unwrap());
            if a.robot == b.robot {
                identical &= pa.robot.flatten().iter().map(|v| v.to_bits()).eq(pb.robot.flatten().iter().map(|v| v.to_bits()));
            }
            if a.task == b.task {
                identical &= pa.task.flatten().iter().map(|v| v.to_bits()).eq(pb.task.flatten().iter().map(|v| v.to_bits()));
            }
        }
    }
    outcome(
        worst < 1e-12 && block_count_ok && identical,
        format!("3x3 grid, {blocks} blocks, max relative error {worst:.1e} (< 1e-12), shared bytes identical after update: {identical}"),
    )
}

// ---------------------------------------------------------------- 3

struct DoubleIntegrator {
    horizon: usize,
    dt: f64,
    q: DMatrix<f64>,
    r: f64,
    qf: DMatrix<f64>,
    x0: DVector<f64>,
}

impl DoubleIntegrator {
    fn a(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, self.dt, 0.0, 1.0])
    }

    fn b(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 1, &[0.5 * self.dt * self.dt, self.dt])
    }
}

impl ControlProblem for DoubleIntegrator {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn initial_state(&self) -> DVector<f64> {
        self.x0.clone()
    }
    fn step(&self, _: usize, x: &DVector<f64>, u: &DVector<f64>) -> modnet::Result<DVector<f64>> {
        Ok(self.a() * x + self.b() * u)
    }
    fn running_cost(&self, _: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        0.5 * (x.dot(&(&self.q * x)) + self.r * u[0] * u[0])
    }
    fn final_cost(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.qf * x))
    }
}

/// Finite-horizon Riccati recursion: gains K_t with u = K_t x and the
/// optimal cost ½ x0ᵀ P_0 x0.
fn riccati(p: &DoubleIntegrator) -> (Vec<DMatrix<f64>>, f64) {
    let (a, b) = (p.a(), p.b());
    let mut s = p.qf.clone();
    let mut gains = vec![DMatrix::zeros(1, 2); p.horizon];
    for t in (0..p.horizon).rev() {
        let h = DMatrix::from_element(1, 1, p.r) + b.transpose() * &s * &b;
        let k = -(h.try_inverse().unwrap() * b.transpose() * &s * &a);
        s = &p.q + k.transpose() * p.r * &k + (&a + &b * &k).transpose() * &s * (&a + &b * &k);
        gains[t] = k;
    }
    (gains, 0.5 * p.x0.dot(&(&s * &p.x0)))
}

fn criterion_3() -> Outcome {
    let p = DoubleIntegrator {
        horizon: 100,
        dt: 0.05,
        q: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.2]),
        r: 0.05,
        qf: DMatrix::from_row_slice(2, 2, &[20.0, 0.0, 0.0, 2.0]),
        x0: DVector::from_vec(vec![1.5, -0.3]),
    };
    let start = Instant::now();
    let config = IlqrConfig {
        max_iterations: 1,
        ..Default::default()
    };
    let sol = ilqr_solve(&p, vec![DVector::zeros(1); p.horizon], &config).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let (gains, cost) = riccati(&p);
    let gain_err = (0..p.horizon)
        .map(|t| (&sol.controller.gains[t] - &gains[t]).amax())
        .fold(0.0, f64::max);
    let cost_err = (sol.cost - cost).abs();
    outcome(
        gain_err < 1e-6 && cost_err < 1e-6 && secs < 1.0,
        format!("T=100, max gain error {gain_err:.1e}, cost {:.6} vs {cost:.6} (error {cost_err:.1e}), {secs:.3} s", sol.cost),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4(experts: &[(WorldSpec, Expert)]) -> Outcome {
    let mut worst_reach: f64 = 0.0;
    let mut worst_manip: f64 = 0.0;
    let mut max_iter = 0;
    for (spec, e) in experts {
        let err = e.final_error / spec.robot.workspace_radius();
        if spec.task.kind.has_object() {
            worst_manip = worst_manip.max(err);
        } else {
            worst_reach = worst_reach.max(err);
        }
        max_iter = max_iter.max(e.iterations);
    }
    // A horizon too short to reach any target must abort training with
    // diagnostics.
    let u = Universe::new(
        vec![RobotSpec::new("r1", vec![1.0, 1.0]), RobotSpec::new("r2", vec![0.7, 1.3])],
        vec![
            TaskSpec::new("k1", TaskKind::Reach { target_index: 0, num_targets: 2 }),
            TaskSpec::new("k2", TaskKind::Reach { target_index: 1, num_targets: 2 }),
        ],
    )
    .unwrap();
    let starved = TrainHyper {
        conditions: 1,
        epochs: 1,
        sim: SimConfig {
            horizon: 3,
            ..SimConfig::default()
        },
        ..Default::default()
    };
    let worlds = u.held_out_split(&World::new("r2", "k2")).unwrap();
    let aborted = matches!(
        train_grid(&u, &worlds, &starved, &Architecture::default(), 0),
        Err(Error::ExpertGate(ref msg)) if msg.contains("(r1, k1)") && msg.contains("limit")
    );
    outcome(
        !experts.is_empty() && worst_reach < 0.05 && worst_manip < 0.15 && max_iter <= 30 && aborted,
        format!(
            "{} experts, worst reach {worst_reach:.4} R (< 0.05), worst push/drawer {worst_manip:.4} R (< 0.15), max {max_iter} iterations (<= 30), gate aborts with diagnostics: {aborted}",
            experts.len()
        ),
    )
}

// ---------------------------------------------------------------- 5 and 8

struct ReachRuns {
    reports: Vec<harness::EvalReport>,
    determinism: Result<Vec<String>, String>,
    experts: Vec<(WorldSpec, Expert)>,
    secs: f64,
}

fn cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_modnet"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("modnet {args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)))
    }
}

fn with_specs(config: &ExperimentConfig, grid: &GridRun) -> Vec<(WorldSpec, Expert)> {
    grid.experts
        .iter()
        .map(|e| (config.universe.world_spec(&e.world).unwrap(), e.clone()))
        .collect()
}

/// Seed 0 trains twice through the CLI in deterministic mode (criterion 8);
/// the remaining seeds train in-process.
fn reach_grid() -> ReachRuns {
    let start = Instant::now();
    let path = config_path("reach-grid.json");
    let config = ExperimentConfig::load(&path).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    let path_s = path.to_str().unwrap();
    let mut determinism: Result<Vec<String>, String> = Ok(Vec::new());
    for d in &dirs {
        let d = d.to_str().unwrap();
        let base = ["--config", path_s, "--seed", "0", "--threads", "1", "--out", d];
        let run = cli(&[&base[..], &["train"]].concat()).and_then(|_| cli(&[&base[..], &["eval-zeroshot"]].concat()));
        if let Err(e) = run {
            determinism = Err(e);
        }
    }
    let run_a = harness::RunDir::new(&dirs[0]);
    let run_b = harness::RunDir::new(&dirs[1]);
    let determinism = determinism.and_then(|_| {
        let files = [run_a.weights(0), run_a.curve(0), run_a.experts(0), run_a.zeroshot()];
        let other = [run_b.weights(0), run_b.curve(0), run_b.experts(0), run_b.zeroshot()];
        let mut same = Vec::new();
        for (a, b) in files.iter().zip(&other) {
            let (x, y) = (std::fs::read(a).map_err(|e| e.to_string())?, std::fs::read(b).map_err(|e| e.to_string())?);
            if x != y {
                return Err(format!("{} differs between runs", a.file_name().unwrap().to_string_lossy()));
            }
            same.push(a.file_name().unwrap().to_string_lossy().into_owned());
        }
        Ok(same)
    });

    let mut reports = Vec::new();
    let mut experts = Vec::new();
    for &seed in &config.eval.seeds {
        if seed == 0 {
            let store = harness::load_store(&run_a, 0).unwrap();
            reports.push(harness::run_zeroshot(&config, &store, 0).unwrap());
            continue;
        }
        let grid = harness::train(&config, seed).unwrap();
        experts.extend(with_specs(&config, &grid));
        reports.push(harness::run_zeroshot(&config, &grid.store, seed).unwrap());
    }
    ReachRuns {
        reports,
        determinism,
        experts,
        secs: start.elapsed().as_secs_f64(),
    }
}

fn criterion_5(runs: &Result<ReachRuns, String>) -> Outcome {
    let runs = match runs {
        Ok(r) => r,
        Err(e) => return outcome(false, e.clone()),
    };
    let rows: Vec<_> = runs.reports.iter().flat_map(|r| r.rows.iter()).collect();
    let n = rows.len() as f64;
    let ours = rows.iter().map(|r| r.ours).sum::<f64>() / n;
    let wrong = rows.iter().map(|r| r.wrong_task_module).sum::<f64>() / n;
    let random = rows.iter().map(|r| r.random_network).sum::<f64>() / n;
    let per_seed: Vec<String> = runs
        .reports
        .iter()
        .map(|r| format!("seed {} {:.3}", r.seed, r.mean()[0]))
        .collect();
    outcome(
        ours < 0.15 && ours < 0.33 * wrong && ours < 0.33 * random && runs.secs < 1800.0,
        format!(
            "{} rows: ours {ours:.4} R (< 0.15), wrong task {wrong:.4} R (ratio {:.3} < 0.33), random {random:.4} R (ratio {:.3} < 0.33) [{}], {:.0} s",
            rows.len(),
            ours / wrong,
            ours / random,
            per_seed.join(", "),
            runs.secs
        ),
    )
}

fn criterion_8(runs: &Result<ReachRuns, String>) -> Outcome {
    match runs.as_ref().map(|r| &r.determinism) {
        Ok(Ok(files)) => outcome(true, format!("--threads 1 seed 0 twice: identical {}", files.join(", "))),
        Ok(Err(e)) | Err(e) => outcome(false, e.clone()),
    }
}

// ---------------------------------------------------------------- 6

struct ManipRuns {
    seeds: Vec<(u64, Vec<harness::LearningCurve>)>,
    threshold: f64,
    experts: Vec<(WorldSpec, Expert)>,
    secs: f64,
}

fn manip_grid() -> ManipRuns {
    let start = Instant::now();
    let config = ExperimentConfig::load(config_path("manip-grid.json")).unwrap();
    let mut seeds = Vec::new();
    let mut experts = Vec::new();
    for &seed in &config.eval.seeds {
        let grid = harness::train(&config, seed).unwrap();
        experts.extend(with_specs(&config, &grid));
        seeds.push((seed, harness::finetune_from_composition(&config, &grid.store, seed).unwrap()));
    }
    ManipRuns {
        seeds,
        threshold: config.trainer.finetune.threshold,
        experts,
        secs: start.elapsed().as_secs_f64(),
    }
}

fn criterion_6(runs: &Result<ManipRuns, String>) -> Outcome {
    let runs = match runs {
        Ok(r) => r,
        Err(e) => return outcome(false, e.clone()),
    };
    let mut pass = !runs.seeds.is_empty();
    let mut details = Vec::new();
    for (seed, curves) in &runs.seeds {
        let curve = |v: Variant| &curves.iter().find(|c| c.variant == v).expect("variant present").metric;
        let hit = |v: Variant| iterations_to_threshold(curve(v), runs.threshold);
        let fmt = |h: Option<usize>| h.map_or("never".to_string(), |i| i.to_string());
        let (composed, scratch, no_shaping, wrong) = (
            hit(Variant::ComposedInit),
            hit(Variant::ScratchShaping),
            hit(Variant::ScratchNoShaping),
            hit(Variant::WrongTaskInit),
        );
        let ok = match (composed, scratch) {
            (Some(c), Some(s)) => {
                let budget = 2 * s;
                let within = curve(Variant::ScratchNoShaping).len() > budget;
                let fails = no_shaping.is_none_or(|n| n > budget);
                2 * c <= s && fails && within
            }
            _ => false,
        };
        pass &= ok;
        details.push(format!(
            "seed {seed}: composed {} / scratch+shaping {} / scratch-shaping {} / wrong task {} ({})",
            fmt(composed),
            fmt(scratch),
            fmt(no_shaping),
            fmt(wrong),
            if ok { "ordered" } else { "not ordered" }
        ));
    }
    outcome(pass, format!("iterations to < {} R: {}; {:.0} s", runs.threshold, details.join("; "), runs.secs))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let path = config_path("ablate-small.json");
    if let Err(e) = cli(&["--config", path.to_str().unwrap(), "--out", out, "ablate"]) {
        return outcome(false, e);
    }
    let config = ExperimentConfig::load(&path).unwrap();
    let text = std::fs::read_to_string(tmp.path().join("ablation.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let header_ok = lines.first() == Some(&"config_hash,width,rate,mean,std");
    let mut cells = Vec::new();
    let mut well_formed = header_ok && text.ends_with('\n') && !text.contains('\r');
    for l in lines.iter().skip(1) {
        let f: Vec<&str> = l.split(',').collect();
        let parsed = (f.len() == 5 && f[0] == config.hash())
            .then(|| Some((f[1].parse::<usize>().ok()?, f[2].parse::<f64>().ok()?, f[3].parse::<f64>().ok()?, f[4].parse::<f64>().ok()?)))
            .flatten();
        match parsed {
            Some((w, r, m, s)) if m.is_finite() && s.is_finite() && s >= 0.0 => cells.push((w, r)),
            _ => well_formed = false,
        }
    }
    let expected: Vec<(usize, f64)> = harness::ABLATION_WIDTHS
        .iter()
        .flat_map(|&w| harness::ABLATION_RATES.iter().map(move |&r| (w, r)))
        .collect();
    let complete = cells == expected;
    outcome(
        well_formed && complete && lines.len() == 16,
        format!(
            "{} data rows (15 expected), full width x rate grid: {complete}, seeds {:?} in every cell",
            lines.len().saturating_sub(1),
            config.eval.seeds
        ),
    )
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let cfg = SimConfig::default();
    let runner = || TestRunner::new(PropConfig {
        cases: 10_000,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let links = prop::collection::vec(0.2f64..1.5, 2..=4);
    let mut checks = Vec::new();

    // End effector never beyond the summed link lengths.
    let r = runner().run(&(links.clone(), prop::collection::vec(-10.0f64..10.0, 4)), |(l, q)| {
        let (_, ee) = forward_kinematics(&l, &q[..l.len()]);
        prop_assert!(ee[0].hypot(ee[1]) <= l.iter().sum::<f64>() + 1e-12);
        Ok(())
    });
    checks.push(("FK reach bound", r.map_err(|e| e.to_string())));

    // Unforced joints slow down every step, and more damping never leaves a
    // joint faster.
    let r = runner().run(
        &(prop::collection::vec(-20.0f64..20.0, 3), 0.0f64..10.0, 0.0f64..10.0),
        |(w, d1, d2)| {
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let arm = sim::ArmState {
                angles: vec![0.3, -0.2, 1.0],
                velocities: w.clone(),
            };
            let a = sim::step_arm(&arm, &[0.0; 3], 5.0, lo, cfg.dt).unwrap();
            let b = sim::step_arm(&arm, &[0.0; 3], 5.0, hi, cfg.dt).unwrap();
            for i in 0..3 {
                prop_assert!(a.velocities[i].abs() <= w[i].abs() + 1e-12);
                prop_assert!(b.velocities[i].abs() <= a.velocities[i].abs() + 1e-12);
            }
            Ok(())
        },
    );
    checks.push(("damping monotonicity", r.map_err(|e| e.to_string())));

    // Any contact leaves the block at least one contact radius away.
    let r = runner().run(
        &((-1.5f64..1.5, -1.5f64..1.5), (-0.2f64..0.2, -0.2f64..0.2)),
        |((bx, by), (dx, dy))| {
            let objects = ObjectState::Push {
                block: [bx, by],
                goal: [0.0, 0.0],
            };
            let ee = [bx + dx, by + dy];
            let next = sim::step_objects(&objects, ee, &cfg);
            let p = next.object_position().unwrap();
            prop_assert!((p[0] - ee[0]).hypot(p[1] - ee[1]) >= cfg.contact_radius - 1e-9);
            Ok(())
        },
    );
    checks.push(("non-penetration", r.map_err(|e| e.to_string())));

    // Drawer displacement stays inside [0, travel] under random pushes.
    let r = runner().run(
        &(0.0f64..0.6, (-0.15f64..0.15, -0.15f64..0.15), 0.0f64..std::f64::consts::TAU),
        |(disp, (dx, dy), angle)| {
            let axis = [angle.cos(), angle.sin()];
            let origin = [0.8, 0.2];
            let objects = ObjectState::Drawer {
                origin,
                axis,
                displacement: disp,
                target: 0.4,
                travel: 0.6,
            };
            let handle = objects.object_position().unwrap();
            let next = sim::step_objects(&objects, [handle[0] + dx, handle[1] + dy], &cfg);
            let ObjectState::Drawer { displacement, .. } = next else {
                unreachable!()
            };
            prop_assert!((0.0..=0.6).contains(&displacement));
            Ok(())
        },
    );
    checks.push(("drawer travel clamp", r.map_err(|e| e.to_string())));

    let failed: Vec<String> = checks
        .iter()
        .filter_map(|(name, r)| r.as_ref().err().map(|e| format!("{name}: {e}")))
        .collect();
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} 10^4-case properties hold ({})", checks.len(), checks.iter().map(|c| c.0).collect::<Vec<_>>().join(", "))
        } else {
            failed.join("; ")
        },
    )
}
