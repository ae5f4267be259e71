use rayon::prelude::*;

use crate::composition::{log_prob_grads, tie_and_accumulate, OptimizerBank, ParameterStore, PolicyGradient};
use crate::error::Result;
use crate::nn::{DropoutMask, Mode};
use crate::rng::{str_id, stream_rng};
use crate::sim::{reset, rollout, SimConfig, Split};
use crate::universe::{World, WorldSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReinforceConfig {
    /// Sampled episodes per world per update.
    pub episodes: usize,
    pub conditions: usize,
    pub shaping: bool,
    pub baseline: bool,
}

/// Weights `(C_i − b) / N` multiplying each episode's score function, with
/// `b` the mean episode cost when `baseline` is set.
pub fn advantages(costs: &[f64], baseline: bool) -> Vec<f64> {
    let n = costs.len() as f64;
    let b = if baseline { costs.iter().sum::<f64>() / n } else { 0.0 };
    costs.iter().map(|c| (c - b) / n).collect()
}

/// One REINFORCE update on the expected episode cost of every world:
/// `∇ E[C] ≈ 1/N Σ_i (C_i − b) Σ_t ∇ log π(u_t | o_t)`, summed over worlds
/// through the tied blocks. Returns each world's mean episode cost.
pub fn reinforce_step(
    store: &mut ParameterStore,
    worlds: &[WorldSpec],
    bank: &mut OptimizerBank,
    sim: &SimConfig,
    config: &ReinforceConfig,
    iteration: usize,
    seed: u64,
) -> Result<Vec<(World, f64)>> {
    let results = worlds
        .par_iter()
        .map(|spec| {
            let w = spec.world();
            let policy = store.policy(&w)?;
            let mut trajectories = Vec::with_capacity(config.episodes);
            for i in 0..config.episodes {
                let condition = i % config.conditions.max(1);
                let initial = reset(spec, Split::Train, condition, seed);
                let mut rng = stream_rng(seed, &[0x7066, str_id(&w.key()), iteration as u64, i as u64]);
                trajectories.push(rollout(&policy, spec, initial, sim, config.shaping, Mode::Train, &mut rng)?);
            }
            let costs: Vec<f64> = trajectories.iter().map(|t| t.total_cost()).collect();
            let weights = advantages(&costs, config.baseline);
            let mut grad = PolicyGradient::zeros(&policy);
            for (traj, a) in trajectories.iter().zip(&weights) {
                for (obs, u) in traj.observations.iter().zip(&traj.actions) {
                    let cache = policy.forward_with_mask(obs, DropoutMask::all_keep(policy.bottleneck()))?;
                    let (dm, ds) = log_prob_grads(cache.mean(), &policy.log_std, u);
                    let dm: Vec<f64> = dm.iter().map(|v| v * a).collect();
                    let ds: Vec<f64> = ds.iter().map(|v| v * a).collect();
                    grad.add_assign(&policy.backward(&cache, &dm, &ds)?);
                }
            }
            let mean_cost = costs.iter().sum::<f64>() / costs.len().max(1) as f64;
            Ok(((w.clone(), grad), (w, mean_cost)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (contributions, returns): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let grad = tie_and_accumulate(store, &contributions)?;
    store.apply(&grad, bank)?;
    Ok(returns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composition::log_prob_gaussian;
    use crate::composition::Architecture;
    use crate::nn::OptimizerConfig;
    use crate::rng::Rng;
    use crate::universe::{RobotSpec, TaskKind, TaskSpec, Universe};
    use rand_distr::{Distribution, Normal};

    /// Score-function estimate of d E[u²] / dμ for u ~ N(μ, σ²), one value
    /// per independent batch of `n` samples.
    fn bandit_estimates(mu: f64, sigma: f64, n: usize, batches: usize, baseline: bool, rng: &mut Rng) -> Vec<f64> {
        let normal = Normal::new(mu, sigma).unwrap();
        (0..batches)
            .map(|_| {
                let us: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
                let costs: Vec<f64> = us.iter().map(|u| u * u).collect();
                let w = advantages(&costs, baseline);
                us.iter()
                    .zip(&w)
                    .map(|(u, a)| log_prob_grads(&[mu], &[sigma.ln()], &[*u]).0[0] * a)
                    .sum()
            })
            .collect()
    }

    fn mean_and_se(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (var / n).sqrt())
    }

    // E[u²] = μ² + σ², so the true gradient is 2μ.
    #[test]
    fn bandit_gradient_is_unbiased() {
        let mut rng = stream_rng(3, &[]);
        let (mu, sigma) = (0.7, 0.5);
        for baseline in [false, true] {
            let est = bandit_estimates(mu, sigma, 1000, 100, baseline, &mut rng);
            let (m, se) = mean_and_se(&est);
            assert!((m - 2.0 * mu).abs() < 3.0 * se, "baseline {baseline}: {m} ± {se}");
        }
    }

    #[test]
    fn baseline_keeps_expectation() {
        let mut rng = stream_rng(4, &[]);
        let a = bandit_estimates(-0.4, 0.8, 500, 200, false, &mut rng);
        let b = bandit_estimates(-0.4, 0.8, 500, 200, true, &mut rng);
        let (ma, sa) = mean_and_se(&a);
        let (mb, sb) = mean_and_se(&b);
        assert!((ma - mb).abs() < 3.0 * (sa * sa + sb * sb).sqrt());
        assert!(sb < sa);
    }

    // As σ → 0 the baseline-subtracted estimate tends to the pathwise value 2μ.
    #[test]
    fn small_variance_estimate_is_bounded() {
        let mut rng = stream_rng(5, &[]);
        let est = bandit_estimates(0.3, 1e-4, 1000, 1, true, &mut rng)[0];
        assert!(est.is_finite());
        assert!((est - 0.6).abs() < 0.1, "{est}");
    }

    #[test]
    fn log_prob_grads_match_finite_differences() {
        let (m, s, u) = (0.2, -0.3, 1.1);
        let (dm, ds) = log_prob_grads(&[m], &[s], &[u]);
        let h = 1e-6;
        let fm = (log_prob_gaussian(&[m + h], &[s], &[u]).unwrap() - log_prob_gaussian(&[m - h], &[s], &[u]).unwrap()) / (2.0 * h);
        let fs = (log_prob_gaussian(&[m], &[s + h], &[u]).unwrap() - log_prob_gaussian(&[m], &[s - h], &[u]).unwrap()) / (2.0 * h);
        assert!((dm[0] - fm).abs() < 1e-8 && (ds[0] - fs).abs() < 1e-8);
    }

    #[test]
    fn reinforce_step_updates_and_reports() {
        let u = Universe::new(
            vec![RobotSpec::new("r1", vec![1.0, 1.0])],
            vec![
                TaskSpec::new("k1", TaskKind::Reach { target_index: 0, num_targets: 2 }),
                TaskSpec::new("k2", TaskKind::Reach { target_index: 1, num_targets: 2 }),
            ],
        )
        .unwrap();
        let worlds: Vec<_> = u.enumerate_worlds().iter().map(|w| u.world_spec(w).unwrap()).collect();
        let mut store = ParameterStore::init(&u, &u.enumerate_worlds(), &Architecture::default(), 0).unwrap();
        let before = store.clone();
        let mut bank = OptimizerBank::new(OptimizerConfig::adam(1e-3));
        let sim = SimConfig {
            horizon: 10,
            ..Default::default()
        };
        let config = ReinforceConfig {
            episodes: 4,
            conditions: 2,
            shaping: false,
            baseline: true,
        };
        let returns = reinforce_step(&mut store, &worlds, &mut bank, &sim, &config, 0, 1).unwrap();
        assert_eq!(returns.len(), 2);
        assert!(returns.iter().all(|(_, c)| c.is_finite() && *c > 0.0));
        assert!(!store.bits_eq(&before));
    }
}
