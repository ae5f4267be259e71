use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::report::{
    ablation_csv, loss_curve_csv, AblationCell, Csv, EvalReport, EvalRow, LearningCurve, Variant,
};
use crate::composition::{Architecture, ParameterStore};
use crate::error::{Error, Result};
use crate::nn::{Mode, WeightFile};
use crate::rng::stream_rng;
use crate::sim::{reset, rollout, SimState, Split};
use crate::trainer::{
    distill_from_experts, expert_gate, experts_to_weight_file, finetune_world, policy_error, solve_experts,
    train_grid, GridRun, TrainerMode,
};
use crate::universe::{World, WorldSpec};

/// Final timesteps averaged by every reported distance.
pub const METRIC_WINDOW: usize = 5;

/// Bottleneck widths and dropout rates swept by [`ablate_regularization`].
pub const ABLATION_WIDTHS: [usize; 5] = [2, 4, 8, 16, 64];
pub const ABLATION_RATES: [f64; 3] = [0.0, 0.1, 0.3];

/// File layout of a run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.root.join(format!("seed-{seed}"))
    }

    pub fn weights(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("weights.modnet")
    }

    pub fn curve(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("curve.csv")
    }

    pub fn experts(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("experts.modnet")
    }

    pub fn trajectory(&self, seed: u64, world: &World, split: Split, condition: usize) -> PathBuf {
        let split = match split {
            Split::Train => "train",
            Split::Test => "test",
        };
        self.seed_dir(seed)
            .join(format!("traj_{}_{}_{split}_c{condition}.csv", world.robot, world.task))
    }

    pub fn zeroshot(&self) -> PathBuf {
        self.root.join("zeroshot.csv")
    }

    pub fn finetune(&self) -> PathBuf {
        self.root.join("finetune.csv")
    }

    pub fn ablation(&self) -> PathBuf {
        self.root.join("ablation.csv")
    }

    pub fn create_seed_dir(&self, seed: u64) -> Result<PathBuf> {
        let dir = self.seed_dir(seed);
        std::fs::create_dir_all(&dir)?;
        Ok(dir)
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

/// Hold-one-out training for one seed.
pub fn train(config: &ExperimentConfig, seed: u64) -> Result<GridRun> {
    train_grid(
        &config.universe,
        &config.train_worlds()?,
        &config.trainer,
        &config.regularization,
        seed,
    )
}

/// Trains one seed and writes its weights, loss curve and (in distill mode)
/// expert controllers.
pub fn train_to_dir(config: &ExperimentConfig, seed: u64, run: &RunDir) -> Result<GridRun> {
    let grid = train(config, seed)?;
    run.create_seed_dir(seed)?;
    grid.store.save(run.weights(seed))?;
    loss_curve_csv(&grid.curve).write(run.curve(seed))?;
    if !grid.experts.is_empty() {
        experts_to_weight_file(&grid.experts).save(run.experts(seed))?;
    }
    Ok(grid)
}

/// Trained store of `seed`, or a missing-artifact error.
pub fn load_store(run: &RunDir, seed: u64) -> Result<ParameterStore> {
    let path = run.weights(seed);
    require(&path)?;
    ParameterStore::load(path)
}

/// Test-split scenes shared by the zero-shot policy, the baselines and fine-tuning.
pub fn eval_initials(config: &ExperimentConfig, spec: &WorldSpec, seed: u64) -> Vec<SimState> {
    (0..config.eval.conditions)
        .map(|c| reset(spec, Split::Test, c, seed))
        .collect()
}

fn held_out_spec(config: &ExperimentConfig) -> Result<WorldSpec> {
    config.universe.world_spec(&config.held_out())
}

/// Correct robot module with the wrong task module standing in for the
/// held-out task.
fn wrong_task_store(config: &ExperimentConfig, store: &ParameterStore) -> Result<ParameterStore> {
    let wrong = config.wrong_task()?;
    let module = store.task(&wrong)?;
    let mut out = store.clone();
    out.insert_task(&config.holdout.task, module.clone());
    Ok(out)
}

/// Baseline columns of Table-I style reports, on the zero-shot scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct Baselines {
    pub random_network: Vec<f64>,
    pub wrong_task_module: Vec<f64>,
}

/// Random network: a freshly initialized grid with the trained store's
/// architecture and the same seed. Wrong task module: see [`wrong_task_store`].
pub fn run_baselines(config: &ExperimentConfig, store: &ParameterStore, seed: u64) -> Result<Baselines> {
    let spec = held_out_spec(config)?;
    let initials = eval_initials(config, &spec, seed);
    let sim = &config.trainer.sim;
    let fresh = ParameterStore::init(&config.universe, &config.train_worlds()?, &store_architecture(config, store), seed)?;
    Ok(Baselines {
        random_network: policy_error(&fresh, &spec, &initials, sim, METRIC_WINDOW)?,
        wrong_task_module: policy_error(&wrong_task_store(config, store)?, &spec, &initials, sim, METRIC_WINDOW)?,
    })
}

/// Architecture of a loaded store: hidden sizes come from the config, the
/// interface from the weights.
fn store_architecture(config: &ExperimentConfig, store: &ParameterStore) -> Architecture {
    Architecture {
        bottleneck: store.bottleneck(),
        dropout: store.dropout(),
        ..config.regularization.clone()
    }
}

/// Composes the held-out world from `store` and measures it next to the baselines.
pub fn run_zeroshot(config: &ExperimentConfig, store: &ParameterStore, seed: u64) -> Result<EvalReport> {
    let spec = held_out_spec(config)?;
    let initials = eval_initials(config, &spec, seed);
    let ours = policy_error(store, &spec, &initials, &config.trainer.sim, METRIC_WINDOW)?;
    let base = run_baselines(config, store, seed)?;
    Ok(EvalReport {
        config_hash: config.hash(),
        seed,
        rows: ours
            .iter()
            .enumerate()
            .map(|(c, &ours)| EvalRow {
                condition: c,
                ours,
                random_network: base.random_network[c],
                wrong_task_module: base.wrong_task_module[c],
            })
            .collect(),
    })
}

/// The four fine-tuning runs on the held-out world, all on the zero-shot
/// scenes with the same budget.
pub fn finetune_from_composition(config: &ExperimentConfig, store: &ParameterStore, seed: u64) -> Result<Vec<LearningCurve>> {
    let spec = held_out_spec(config)?;
    let initials = eval_initials(config, &spec, seed);
    let held = config.held_out();
    let arch = store_architecture(config, store);
    let scratch = ParameterStore::init(&config.universe, std::slice::from_ref(&held), &arch, seed)?;
    let starts = [
        (Variant::ComposedInit, store.clone(), config.trainer.shaping),
        (Variant::WrongTaskInit, wrong_task_store(config, store)?, config.trainer.shaping),
        (Variant::ScratchShaping, scratch.clone(), true),
        (Variant::ScratchNoShaping, scratch, false),
    ];
    starts
        .into_par_iter()
        .map(|(variant, mut s, shaping)| {
            let metric = finetune_world(
                &mut s,
                &spec,
                &initials,
                &config.trainer.sim,
                &config.trainer.finetune,
                shaping,
                config.trainer.noise_scale,
                seed,
            )?;
            Ok(LearningCurve { variant, metric })
        })
        .collect()
}

/// Sweeps bottleneck width and dropout rate; every cell trains and
/// evaluates the same seeds. Experts do not depend on the architecture and
/// are solved once per seed.
pub fn ablate_regularization(config: &ExperimentConfig) -> Result<Vec<AblationCell>> {
    if config.trainer.mode != TrainerMode::Distill {
        return Err(Error::Config("the regularization ablation needs the distill trainer".into()));
    }
    let worlds = config.train_worlds()?;
    let specs = worlds
        .iter()
        .map(|w| config.universe.world_spec(w))
        .collect::<Result<Vec<_>>>()?;
    let mut experts = Vec::with_capacity(config.eval.seeds.len());
    for &seed in &config.eval.seeds {
        let e = solve_experts(&specs, &config.trainer, seed)?;
        expert_gate(&specs, &e)?;
        experts.push(e);
    }
    let mut cells = Vec::with_capacity(ABLATION_WIDTHS.len() * ABLATION_RATES.len());
    for width in ABLATION_WIDTHS {
        for rate in ABLATION_RATES {
            let arch = Architecture {
                bottleneck: width,
                dropout: rate,
                ..config.regularization.clone()
            };
            let mut means = Vec::with_capacity(config.eval.seeds.len());
            for (&seed, e) in config.eval.seeds.iter().zip(&experts) {
                let store = ParameterStore::init(&config.universe, &worlds, &arch, seed)?;
                let grid = distill_from_experts(store, &specs, e.clone(), &config.trainer, seed)?;
                let spec = held_out_spec(config)?;
                let initials = eval_initials(config, &spec, seed);
                let errors = policy_error(&grid.store, &spec, &initials, &config.trainer.sim, METRIC_WINDOW)?;
                means.push(errors.iter().sum::<f64>() / errors.len() as f64);
            }
            let (mean, std) = mean_std(&means);
            cells.push(AblationCell { width, rate, mean, std });
        }
    }
    Ok(cells)
}

pub fn write_ablation(config: &ExperimentConfig, cells: &[AblationCell], run: &RunDir) -> Result<()> {
    std::fs::create_dir_all(&run.root)?;
    ablation_csv(&config.hash(), cells).write(run.ablation())
}

/// Sample mean and standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Solves the training-world experts of one seed and writes them to the
/// run directory.
pub fn export_experts(config: &ExperimentConfig, seed: u64, run: &RunDir) -> Result<WeightFile> {
    let specs = config
        .train_worlds()?
        .iter()
        .map(|w| config.universe.world_spec(w))
        .collect::<Result<Vec<_>>>()?;
    let experts = solve_experts(&specs, &config.trainer, seed)?;
    expert_gate(&specs, &experts)?;
    let file = experts_to_weight_file(&experts);
    run.create_seed_dir(seed)?;
    file.save(run.experts(seed))?;
    Ok(file)
}

/// Mean-policy rollouts of `world` from the evaluation scenes of `split`,
/// one CSV per condition. Returns the written paths.
pub fn dump_trajectories(
    config: &ExperimentConfig,
    store: &ParameterStore,
    world: &World,
    split: Split,
    seed: u64,
    run: &RunDir,
) -> Result<Vec<PathBuf>> {
    let spec = config.universe.world_spec(world)?;
    let policy = store.policy(world)?;
    run.create_seed_dir(seed)?;
    (0..config.eval.conditions)
        .map(|c| {
            let initial = reset(&spec, split, c, seed);
            let traj = rollout(
                &policy,
                &spec,
                initial,
                &config.trainer.sim,
                config.trainer.shaping,
                Mode::Eval,
                &mut stream_rng(seed, &[]),
            )?;
            let path = run.trajectory(seed, world, split, c);
            traj.write_csv(&path)?;
            Ok(path)
        })
        .collect()
}

/// Renders `csv` to `path`, creating parent directories.
pub fn write_report(csv: &Csv, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    csv.write(path)
}
