use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::distill::{collect_dataset, distill, DistillConfig, WorldDataset};
use super::expert::{solve_expert, unsquash, Expert};
use super::ilqr::IlqrConfig;
use crate::composition::ParameterStore;
use crate::error::{Error, Result};
use crate::nn::{Mode, OptimizerConfig};
use crate::rng::stream_rng;
use crate::sim::{rollout, SimConfig, SimState};
use crate::universe::WorldSpec;

/// Budget of the fine-tuning loop run on a single world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneHyper {
    pub iterations: usize,
    /// iLQR iterations spent improving the policy's own trajectories per iteration.
    pub ilqr_iterations: usize,
    /// Regression epochs on the improved trajectories per iteration.
    pub epochs: usize,
    pub samples_per_condition: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Keep the regression data of earlier iterations instead of refitting
    /// on the newest trajectories alone.
    pub aggregate: bool,
    /// Success threshold on the task error, as a fraction of the workspace radius.
    pub threshold: f64,
}

impl Default for FinetuneHyper {
    fn default() -> Self {
        Self {
            iterations: 30,
            ilqr_iterations: 5,
            epochs: 20,
            samples_per_condition: 2,
            batch_size: 64,
            learning_rate: 1e-3,
            aggregate: false,
            threshold: 0.15,
        }
    }
}

/// Mean final-window task error of the eval-mode policy over `initials`,
/// normalized by the workspace radius.
pub fn policy_error(
    store: &ParameterStore,
    world: &WorldSpec,
    initials: &[SimState],
    sim: &SimConfig,
    window: usize,
) -> Result<Vec<f64>> {
    let policy = store.policy(&world.world())?;
    let radius = world.robot.workspace_radius();
    initials
        .iter()
        .map(|s| {
            let traj = rollout(&policy, world, s.clone(), sim, false, Mode::Eval, &mut stream_rng(0, &[]))?;
            Ok(traj.final_error(world, window) / radius)
        })
        .collect()
}

/// Alternates trajectory improvement and supervised policy updates on one
/// world: each iteration rolls out the current mean policy from every
/// initial state, refines those trajectories with a few iLQR iterations
/// under the chosen cost, and regresses the policy onto the refined
/// controllers. Returns the normalized error before each iteration and after
/// the last (`iterations + 1` points).
pub fn finetune_world(
    store: &mut ParameterStore,
    world: &WorldSpec,
    initials: &[SimState],
    sim: &SimConfig,
    hyper: &FinetuneHyper,
    shaping: bool,
    noise_scale: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if initials.is_empty() {
        return Err(Error::Config("fine-tuning needs at least one condition".into()));
    }
    let ilqr = IlqrConfig {
        max_iterations: hyper.ilqr_iterations,
        ..Default::default()
    };
    let distill_config = DistillConfig {
        epochs: hyper.epochs,
        batch_size: hyper.batch_size,
        optimizer: OptimizerConfig::adam(hyper.learning_rate),
    };
    let limit = world.robot.torque_limit;
    let mut curve = Vec::with_capacity(hyper.iterations + 1);
    let mut data = WorldDataset {
        world: world.world(),
        samples: Vec::new(),
    };
    for it in 0..=hyper.iterations {
        let errors = policy_error(store, world, initials, sim, 5)?;
        curve.push(errors.iter().sum::<f64>() / errors.len() as f64);
        if it == hyper.iterations {
            break;
        }
        let policy = store.policy(&world.world())?;
        let experts = initials
            .par_iter()
            .enumerate()
            .map(|(c, s)| {
                let traj = rollout(&policy, world, s.clone(), sim, shaping, Mode::Eval, &mut stream_rng(0, &[]))?;
                let warm = unsquash(&traj.applied, limit);
                solve_expert(world, c, s.clone(), sim, &ilqr, shaping, noise_scale, Some(warm))
            })
            .collect::<Result<Vec<Expert>>>()?;
        let refs: Vec<&Expert> = experts.iter().collect();
        let fresh = collect_dataset(world, &refs, hyper.samples_per_condition, sim, seed ^ ((it as u64) << 32))?;
        if !hyper.aggregate {
            data.samples.clear();
        }
        data.samples.extend(fresh.samples);
        distill(store, std::slice::from_ref(&data), &distill_config, seed.wrapping_add(it as u64))?;
    }
    Ok(curve)
}

/// First iteration whose error is below `threshold`, if any.
pub fn iterations_to_threshold(curve: &[f64], threshold: f64) -> Option<usize> {
    curve.iter().position(|v| *v < threshold)
}
