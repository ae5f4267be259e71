use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::expert::Expert;
use crate::composition::{tie_and_accumulate, OptimizerBank, ParameterStore, PolicyGradient};
use crate::error::{Error, Result};
use crate::nn::{Mode, OptimizerConfig};
use crate::rng::stream_rng;
use crate::sim::{rollout, Actor, SimConfig};
use crate::universe::{Observation, World, WorldSpec};

/// One supervised pair: observation and the expert's mean action there.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: Observation,
    pub action: Vec<f64>,
}

/// Regression data for one world.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldDataset {
    pub world: World,
    pub samples: Vec<Sample>,
}

/// States visited by `rollouts` noisy executions of each expert, labelled
/// with the noiseless expert action at that state. The first rollout of each
/// expert is noiseless so the nominal path is always covered.
pub fn collect_dataset(
    world: &WorldSpec,
    experts: &[&Expert],
    rollouts: usize,
    sim: &SimConfig,
    seed: u64,
) -> Result<WorldDataset> {
    let mut samples = Vec::new();
    for e in experts {
        for i in 0..rollouts {
            let mut rng = stream_rng(seed, &[0x6461_7461, crate::rng::str_id(&e.world.key()), e.condition as u64, i as u64]);
            let mode = if i == 0 { Mode::Eval } else { Mode::Train };
            let traj = rollout(*e, world, e.initial.clone(), sim, false, mode, &mut rng)?;
            for (t, (s, obs)) in traj.states.iter().zip(&traj.observations).take(traj.horizon()).enumerate() {
                let x = nalgebra::DVector::from_vec(s.to_vector());
                let action = e.controller.action(t, &x)?.iter().copied().collect();
                samples.push(Sample {
                    obs: obs.clone(),
                    action,
                });
            }
        }
    }
    Ok(WorldDataset {
        world: world.world(),
        samples,
    })
}

/// States visited by the noiseless `policy` from each expert's initial
/// state, labelled with that expert's action.
pub fn collect_on_policy(
    world: &WorldSpec,
    policy: &dyn Actor,
    experts: &[&Expert],
    sim: &SimConfig,
) -> Result<WorldDataset> {
    let mut samples = Vec::new();
    for e in experts {
        let traj = rollout(policy, world, e.initial.clone(), sim, false, Mode::Eval, &mut stream_rng(0, &[]))?;
        for (t, (s, obs)) in traj.states.iter().zip(&traj.observations).take(traj.horizon()).enumerate() {
            let x = nalgebra::DVector::from_vec(s.to_vector());
            samples.push(Sample {
                obs: obs.clone(),
                action: e.controller.action(t, &x)?.iter().copied().collect(),
            });
        }
    }
    Ok(WorldDataset {
        world: world.world(),
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

/// Per-epoch regression losses, one row per epoch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossCurve {
    pub worlds: Vec<World>,
    /// `losses[e][w]`: mean squared action error of world `w` at the start of epoch `e`.
    pub losses: Vec<Vec<f64>>,
}

impl LossCurve {
    pub fn totals(&self) -> Vec<f64> {
        self.losses.iter().map(|row| row.iter().sum()).collect()
    }
}

/// Mean over samples of `‖φ_w(o) − u‖²` with the eval-mode policy.
pub fn dataset_loss(store: &ParameterStore, data: &WorldDataset) -> Result<f64> {
    if data.samples.is_empty() {
        return Ok(0.0);
    }
    let policy = store.policy(&data.world)?;
    let mut total = 0.0;
    for s in &data.samples {
        let mean = policy.mean(&s.obs)?;
        total += mean.iter().zip(&s.action).map(|(m, u)| (m - u).powi(2)).sum::<f64>();
    }
    Ok(total / data.samples.len() as f64)
}

/// Minibatch gradient of one world's mean squared error, dropout active.
fn batch_gradient(
    store: &ParameterStore,
    data: &WorldDataset,
    batch: &[usize],
    rng: &mut crate::rng::Rng,
) -> Result<PolicyGradient> {
    let policy = store.policy(&data.world)?;
    let mut grad = PolicyGradient::zeros(&policy);
    let zeros = vec![0.0; policy.action_dim()];
    let scale = 2.0 / batch.len() as f64;
    for &i in batch {
        let s = &data.samples[i];
        let cache = policy.forward(&s.obs, Mode::Train, rng)?;
        let d: Vec<f64> = cache.mean().iter().zip(&s.action).map(|(m, u)| scale * (m - u)).collect();
        grad.add_assign(&policy.backward(&cache, &d, &zeros)?);
    }
    Ok(grad)
}

/// Synchronous distillation of every world's expert data into the tied
/// store: each step takes one minibatch per world, sums the per-world
/// gradients through the shared blocks and applies one optimizer step.
///
/// The curve has one row per epoch, measured before that epoch's updates.
/// Zero epochs leave the store untouched.
pub fn distill(
    store: &mut ParameterStore,
    datasets: &[WorldDataset],
    config: &DistillConfig,
    seed: u64,
) -> Result<LossCurve> {
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    for d in datasets {
        store.policy(&d.world)?;
        if d.samples.is_empty() {
            return Err(Error::Config(format!("no distillation data for world {}", d.world)));
        }
    }
    let mut curve = LossCurve {
        worlds: datasets.iter().map(|d| d.world.clone()).collect(),
        losses: Vec::with_capacity(config.epochs),
    };
    let mut bank = OptimizerBank::new(config.optimizer);
    let largest = datasets.iter().map(|d| d.samples.len()).max().unwrap_or(0);
    let steps = largest.div_ceil(config.batch_size);
    for epoch in 0..config.epochs {
        let row = datasets
            .par_iter()
            .map(|d| dataset_loss(store, d))
            .collect::<Result<Vec<_>>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("distillation loss at epoch {epoch}")));
        }
        curve.losses.push(row);
        let orders: Vec<Vec<usize>> = datasets
            .iter()
            .enumerate()
            .map(|(w, d)| {
                let mut rng = stream_rng(seed, &[0x7368_7566, epoch as u64, w as u64]);
                let mut order: Vec<usize> = (0..d.samples.len()).collect();
                order.shuffle(&mut rng);
                order
            })
            .collect();
        for step in 0..steps {
            let contributions = datasets
                .par_iter()
                .zip(&orders)
                .enumerate()
                .map(|(w, (d, order))| {
                    let n = order.len();
                    let start = (step * config.batch_size) % n;
                    let batch: Vec<usize> = (0..config.batch_size.min(n)).map(|i| order[(start + i) % n]).collect();
                    let mut rng = stream_rng(seed, &[0x6472_6f70, epoch as u64, step as u64, w as u64]);
                    Ok((d.world.clone(), batch_gradient(store, d, &batch, &mut rng)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let grad = tie_and_accumulate(store, &contributions)?;
            store.apply(&grad, &mut bank)?;
        }
    }
    Ok(curve)
}
