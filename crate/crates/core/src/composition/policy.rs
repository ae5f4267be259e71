use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::{dropout_apply, DropoutMask, Mlp, MlpCache, Mode};
use crate::rng::Rng;
use crate::sim::{Actor, SimState};
use crate::universe::{Observation, World};

/// Gaussian policy `N(f_r([g_k(o_T) ; o_R]), diag(exp(2 log σ)))` over one
/// world's torques. The modules are borrowed from a [`super::ParameterStore`].
#[derive(Debug, Clone)]
pub struct ComposedPolicy<'a> {
    pub world: World,
    pub robot: &'a Mlp,
    pub task: &'a Mlp,
    pub log_std: Vec<f64>,
    pub dropout: f64,
}

/// Forward activations needed by [`ComposedPolicy::backward`].
#[derive(Debug, Clone)]
pub struct PolicyCache {
    task: MlpCache,
    mask: DropoutMask,
    robot: MlpCache,
    mean: Vec<f64>,
}

impl PolicyCache {
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn mask(&self) -> &DropoutMask {
        &self.mask
    }
}

/// Gradients of one world's loss on the blocks its policy uses.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGradient {
    pub robot: Vec<f64>,
    pub task: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl PolicyGradient {
    pub fn zeros(policy: &ComposedPolicy<'_>) -> Self {
        Self {
            robot: vec![0.0; policy.robot.num_params()],
            task: vec![0.0; policy.task.num_params()],
            log_std: vec![0.0; policy.log_std.len()],
        }
    }

    pub fn add_assign(&mut self, other: &PolicyGradient) {
        for (a, b) in [
            (&mut self.robot, &other.robot),
            (&mut self.task, &other.task),
            (&mut self.log_std, &other.log_std),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Checks interface widths and builds the policy. Fails naming both modules
/// when the task output and robot input disagree.
pub fn compose<'a>(
    world: World,
    robot: &'a Mlp,
    task: &'a Mlp,
    log_std: Vec<f64>,
    dropout: f64,
) -> Result<ComposedPolicy<'a>> {
    let fail = |reason: String| Error::Compose {
        robot: world.robot.clone(),
        task: world.task.clone(),
        reason,
    };
    if robot.in_dim() <= task.out_dim() {
        return Err(fail(format!(
            "robot module input width {} leaves no room for robot observations after task bottleneck {}",
            robot.in_dim(),
            task.out_dim()
        )));
    }
    if log_std.len() != robot.out_dim() {
        return Err(fail(format!(
            "log-std has {} entries, robot module outputs {}",
            log_std.len(),
            robot.out_dim()
        )));
    }
    if !(0.0..1.0).contains(&dropout) {
        return Err(fail(format!("dropout rate {dropout} not in [0, 1)")));
    }
    Ok(ComposedPolicy {
        world,
        robot,
        task,
        log_std,
        dropout,
    })
}

impl ComposedPolicy<'_> {
    pub fn action_dim(&self) -> usize {
        self.robot.out_dim()
    }

    pub fn bottleneck(&self) -> usize {
        self.task.out_dim()
    }

    fn check_obs(&self, obs: &Observation) -> Result<()> {
        if obs.extrinsic.len() != self.task.in_dim() {
            return Err(Error::shape(
                format!("task observation for {}", self.world),
                self.task.in_dim(),
                obs.extrinsic.len(),
            ));
        }
        if obs.intrinsic.len() + self.bottleneck() != self.robot.in_dim() {
            return Err(Error::shape(
                format!("robot observation for {}", self.world),
                self.robot.in_dim() - self.bottleneck(),
                obs.intrinsic.len(),
            ));
        }
        Ok(())
    }

    /// Forward pass with an explicit bottleneck mask.
    pub fn forward_with_mask(&self, obs: &Observation, mask: DropoutMask) -> Result<PolicyCache> {
        self.check_obs(obs)?;
        let (z, task) = self.task.forward_cached(&obs.extrinsic)?;
        let mut input = mask.apply(&z)?;
        input.extend_from_slice(&obs.intrinsic);
        let (mean, robot) = self.robot.forward_cached(&input)?;
        Ok(PolicyCache {
            task,
            mask,
            robot,
            mean,
        })
    }

    /// Forward pass; in `Mode::Train` a fresh dropout mask is drawn at the bottleneck.
    pub fn forward(&self, obs: &Observation, mode: Mode, rng: &mut Rng) -> Result<PolicyCache> {
        let mask = match mode {
            Mode::Eval => DropoutMask::all_keep(self.bottleneck()),
            Mode::Train => {
                dropout_apply(&vec![0.0; self.bottleneck()], self.dropout, Mode::Train, rng)?.1
            }
        };
        self.forward_with_mask(obs, mask)
    }

    /// Deterministic mean action `f_r([g_k(o_T) ; o_R])`.
    pub fn mean(&self, obs: &Observation) -> Result<Vec<f64>> {
        Ok(self
            .forward_with_mask(obs, DropoutMask::all_keep(self.bottleneck()))?
            .mean)
    }

    /// `mean + exp(log σ) ⊙ ξ`. Torque clamping happens in the simulator.
    pub fn sample(&self, obs: &Observation, rng: &mut Rng) -> Result<Vec<f64>> {
        let mean = self.mean(obs)?;
        Ok(mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, s)| {
                let xi: f64 = StandardNormal.sample(rng);
                m + s.exp() * xi
            })
            .collect())
    }

    pub fn log_prob(&self, obs: &Observation, u: &[f64]) -> Result<f64> {
        let mean = self.mean(obs)?;
        log_prob_gaussian(&mean, &self.log_std, u)
    }

    /// Backpropagates `d_mean` (gradient on the mean) through the robot
    /// module, the bottleneck mask and the task module. `d_log_std` is passed
    /// through unchanged since the log-std does not depend on the observation.
    pub fn backward(
        &self,
        cache: &PolicyCache,
        d_mean: &[f64],
        d_log_std: &[f64],
    ) -> Result<PolicyGradient> {
        if d_mean.len() != self.action_dim() || d_log_std.len() != self.log_std.len() {
            return Err(Error::shape(
                "policy upstream gradient",
                self.action_dim(),
                d_mean.len().max(d_log_std.len()),
            ));
        }
        if cache.mask.len() != self.bottleneck() {
            return Err(Error::StaleCache(format!(
                "cache bottleneck width {} != {}",
                cache.mask.len(),
                self.bottleneck()
            )));
        }
        let (d_input, robot) = self.robot.backward(d_mean, &cache.robot)?;
        let dz = cache.mask.backward(&d_input[..self.bottleneck()])?;
        let (_, task) = self.task.backward(&dz, &cache.task)?;
        Ok(PolicyGradient {
            robot,
            task,
            log_std: d_log_std.to_vec(),
        })
    }
}

impl Actor for ComposedPolicy<'_> {
    fn act(&self, _t: usize, _: &SimState, obs: &Observation, mode: Mode, rng: &mut Rng) -> Result<Vec<f64>> {
        match mode {
            Mode::Eval => self.mean(obs),
            Mode::Train => self.sample(obs, rng),
        }
    }
}

/// Diagonal-Gaussian log density.
pub fn log_prob_gaussian(mean: &[f64], log_std: &[f64], u: &[f64]) -> Result<f64> {
    if mean.len() != u.len() || log_std.len() != u.len() {
        return Err(Error::shape("log_prob action", mean.len(), u.len()));
    }
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    Ok(mean
        .iter()
        .zip(log_std)
        .zip(u)
        .map(|((m, s), x)| {
            let z = (x - m) / s.exp();
            -0.5 * z * z - s - 0.5 * ln_2pi
        })
        .sum())
}

/// `(d log π / d mean, d log π / d log σ)` at action `u`.
pub fn log_prob_grads(mean: &[f64], log_std: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut dm = Vec::with_capacity(u.len());
    let mut ds = Vec::with_capacity(u.len());
    for ((m, s), x) in mean.iter().zip(log_std).zip(u) {
        let var = (2.0 * s).exp();
        dm.push((x - m) / var);
        ds.push((x - m) * (x - m) / var - 1.0);
    }
    (dm, ds)
}
