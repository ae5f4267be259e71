use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::distill::{collect_dataset, collect_on_policy, distill, DistillConfig, LossCurve};
use super::finetune::FinetuneHyper;
use super::expert::{expert_gate, solve_expert, Expert};
use super::ilqr::IlqrConfig;
use super::reinforce::{reinforce_step, ReinforceConfig};
use crate::composition::{Architecture, OptimizerBank, ParameterStore};
use crate::error::{Error, Result};
use crate::nn::OptimizerConfig;
use crate::sim::{reset, SimConfig, Split};
use crate::universe::{Universe, World, WorldSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainerMode {
    Distill,
    Reinforce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainHyper {
    pub mode: TrainerMode,
    /// Training scenes per world.
    pub conditions: usize,
    pub ilqr_iterations: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Expert executions per condition used to build the regression data;
    /// all but the first carry exploration noise.
    pub samples_per_condition: usize,
    /// Expert exploration noise as a fraction of the torque limit.
    pub noise_scale: f64,
    /// Aggregation rounds after the initial fit: each rolls out the current
    /// policy, labels the visited states with the experts and refits.
    pub dagger_rounds: usize,
    /// Epochs per aggregation round.
    pub dagger_epochs: usize,
    /// Shaping term in the expert cost for manipulation tasks.
    pub shaping: bool,
    pub reinforce_iterations: usize,
    pub reinforce_episodes: usize,
    pub sim: SimConfig,
    pub finetune: FinetuneHyper,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            mode: TrainerMode::Distill,
            conditions: 4,
            ilqr_iterations: 30,
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            samples_per_condition: 3,
            noise_scale: 0.05,
            dagger_rounds: 0,
            dagger_epochs: 50,
            shaping: true,
            reinforce_iterations: 100,
            reinforce_episodes: 8,
            sim: SimConfig::default(),
            finetune: FinetuneHyper::default(),
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.conditions == 0 || self.batch_size == 0 || self.samples_per_condition == 0 {
            return Err(Error::Config("conditions, batch size and samples per condition must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.noise_scale >= 0.0) {
            return Err(Error::Config("learning rate must be > 0 and noise scale >= 0".into()));
        }
        if self.mode == TrainerMode::Reinforce && self.reinforce_episodes == 0 {
            return Err(Error::Config("reinforce needs at least one episode per world".into()));
        }
        Ok(())
    }

    pub fn ilqr(&self) -> IlqrConfig {
        IlqrConfig {
            max_iterations: self.ilqr_iterations,
            ..Default::default()
        }
    }

    pub fn distill_config(&self) -> DistillConfig {
        DistillConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: OptimizerConfig::adam(self.learning_rate),
        }
    }
}

/// Outcome of [`train_grid`].
#[derive(Debug, Clone)]
pub struct GridRun {
    pub store: ParameterStore,
    /// Distillation loss per epoch, or mean episode cost per iteration in
    /// reinforce mode.
    pub curve: LossCurve,
    pub experts: Vec<Expert>,
}

/// iLQR experts for every (world, training condition), solved in parallel
/// and returned in world-major order.
pub fn solve_experts(worlds: &[WorldSpec], hyper: &TrainHyper, seed: u64) -> Result<Vec<Expert>> {
    let jobs: Vec<(usize, usize)> = (0..worlds.len())
        .flat_map(|w| (0..hyper.conditions).map(move |c| (w, c)))
        .collect();
    let ilqr = hyper.ilqr();
    jobs.par_iter()
        .map(|&(w, c)| {
            let spec = &worlds[w];
            let initial = reset(spec, Split::Train, c, seed);
            solve_expert(spec, c, initial, &hyper.sim, &ilqr, hyper.shaping, hyper.noise_scale, None)
        })
        .collect()
}

/// Trains the tied modules on `train_worlds`: experts, quality gate, then
/// distillation (or REINFORCE from a fresh store in reinforce mode).
pub fn train_grid(
    universe: &Universe,
    train_worlds: &[World],
    hyper: &TrainHyper,
    arch: &Architecture,
    seed: u64,
) -> Result<GridRun> {
    hyper.validate()?;
    let specs = train_worlds
        .iter()
        .map(|w| universe.world_spec(w))
        .collect::<Result<Vec<_>>>()?;
    let store = ParameterStore::init(universe, train_worlds, arch, seed)?;
    match hyper.mode {
        TrainerMode::Distill => {
            let experts = solve_experts(&specs, hyper, seed)?;
            expert_gate(&specs, &experts)?;
            distill_from_experts(store, &specs, experts, hyper, seed)
        }
        TrainerMode::Reinforce => {
            let mut store = store;
            let mut bank = OptimizerBank::new(OptimizerConfig::adam(hyper.learning_rate));
            let config = ReinforceConfig {
                episodes: hyper.reinforce_episodes,
                conditions: hyper.conditions,
                shaping: hyper.shaping,
                baseline: true,
            };
            let mut curve = LossCurve {
                worlds: train_worlds.to_vec(),
                losses: Vec::with_capacity(hyper.reinforce_iterations),
            };
            for it in 0..hyper.reinforce_iterations {
                let returns = reinforce_step(&mut store, &specs, &mut bank, &hyper.sim, &config, it, seed)?;
                curve.losses.push(returns.into_iter().map(|(_, c)| c).collect());
            }
            Ok(GridRun {
                store,
                curve,
                experts: Vec::new(),
            })
        }
    }
}

/// Distillation half of [`train_grid`] for experts solved (and gated)
/// beforehand, e.g. shared across architectures.
pub fn distill_from_experts(
    mut store: ParameterStore,
    specs: &[WorldSpec],
    experts: Vec<Expert>,
    hyper: &TrainHyper,
    seed: u64,
) -> Result<GridRun> {
    let expert_refs = |spec: &WorldSpec| -> Vec<&Expert> { experts.iter().filter(|e| e.world == spec.world()).collect() };
    let mut datasets = specs
        .par_iter()
        .map(|spec| collect_dataset(spec, &expert_refs(spec), hyper.samples_per_condition, &hyper.sim, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut curve = distill(&mut store, &datasets, &hyper.distill_config(), seed)?;
    for round in 1..=hyper.dagger_rounds {
        let fresh = specs
            .par_iter()
            .map(|spec| {
                let policy = store.policy(&spec.world())?;
                collect_on_policy(spec, &policy, &expert_refs(spec), &hyper.sim)
            })
            .collect::<Result<Vec<_>>>()?;
        for (d, f) in datasets.iter_mut().zip(fresh) {
            d.samples.extend(f.samples);
        }
        let config = DistillConfig {
            epochs: hyper.dagger_epochs,
            ..hyper.distill_config()
        };
        let more = distill(&mut store, &datasets, &config, seed ^ ((round as u64) << 40))?;
        curve.losses.extend(more.losses);
    }
    Ok(GridRun { store, curve, experts })
}
