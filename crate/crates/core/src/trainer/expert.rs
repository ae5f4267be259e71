use nalgebra::DVector;
use rand_distr::{Distribution, Normal};

use super::ilqr::{ilqr_solve, squash, ControlProblem, IlqrConfig, IlqrSolution, TVLGController};
use crate::error::{Error, Result};
use crate::nn::{Mode, NamedBlock, WeightFile};
use crate::rng::Rng;
use crate::sim::{self, forward_kinematics, Actor, ObjectState, SimConfig, SimState};
use crate::universe::{Observation, TaskKind, World, WorldSpec};

/// Trajectory optimization problem for one world and initial scene. Controls
/// `v` are unconstrained and mapped to torques by `limit · tanh(v / limit)`,
/// so the optimizer never sees the simulator's hard clamp.
///
/// The running cost at step `t` is `λ‖v_t‖²` plus, for `t ≥ 1`, the state
/// cost of `x_t`; the final cost is the state cost of `x_T`. Charging the
/// pre-squash control keeps the control Hessian positive definite and the
/// controls out of deep saturation; since `|tanh-squash(v)| ≤ |v|` the total
/// bounds the rollout's `Σ_t evaluate_cost(x_{t+1}, u_t)` from above, with
/// equality to second order for small torques.
pub struct WorldProblem<'a> {
    pub world: &'a WorldSpec,
    pub initial: SimState,
    pub sim: SimConfig,
    pub shaping: bool,
}

impl WorldProblem<'_> {
    fn torque(&self, u: &DVector<f64>) -> Vec<f64> {
        let limit = self.world.robot.torque_limit;
        u.iter().map(|v| squash(*v, limit)).collect()
    }

    fn state(&self, x: &DVector<f64>) -> SimState {
        self.initial
            .with_vector(x.as_slice())
            .expect("state dimension fixed by the problem")
    }

    fn state_cost(&self, x: &DVector<f64>) -> f64 {
        let c = self.world.evaluate_cost(&self.state(x), &[], self.shaping);
        c.extrinsic + c.shaping
    }
}

impl ControlProblem for WorldProblem<'_> {
    fn state_dim(&self) -> usize {
        self.initial.dim()
    }

    fn control_dim(&self) -> usize {
        self.world.action_dim()
    }

    fn horizon(&self) -> usize {
        self.sim.horizon
    }

    fn initial_state(&self) -> DVector<f64> {
        DVector::from_vec(self.initial.to_vector())
    }

    fn step(&self, _t: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let next = sim::step(self.world, &self.state(x), &self.torque(u), &self.sim)?;
        Ok(DVector::from_vec(next.to_vector()))
    }

    fn running_cost(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let action = self.world.task.weights.action * u.norm_squared();
        if t == 0 {
            action
        } else {
            action + self.state_cost(x)
        }
    }

    fn final_cost(&self, x: &DVector<f64>) -> f64 {
        self.state_cost(x)
    }
}

/// iLQR expert for one (world, initial scene).
#[derive(Debug, Clone)]
pub struct Expert {
    pub world: World,
    pub condition: usize,
    pub initial: SimState,
    pub controller: TVLGController,
    pub cost: f64,
    pub initial_cost: f64,
    /// Task error over the final 5 states of the noiseless expert rollout.
    pub final_error: f64,
    pub iterations: usize,
}

const FINAL_WINDOW: usize = 5;

/// Optimizes from zero torques and from a PD reaching trajectory toward the
/// end-effector goal of the scene, keeping the cheaper solution. An explicit
/// `warm_start` (pre-squash controls) replaces both starts.
#[allow(clippy::too_many_arguments)]
pub fn solve_expert(
    world: &WorldSpec,
    condition: usize,
    initial: SimState,
    sim: &SimConfig,
    ilqr: &IlqrConfig,
    shaping: bool,
    noise_scale: f64,
    warm_start: Option<Vec<DVector<f64>>>,
) -> Result<Expert> {
    let problem = WorldProblem {
        world,
        initial: initial.clone(),
        sim: *sim,
        shaping,
    };
    let m = world.action_dim();
    let starts = match warm_start {
        Some(controls) => vec![controls],
        None => {
            let mut starts = vec![vec![DVector::zeros(m); sim.horizon]];
            for plan in approach_plans(world, &initial, sim.contact_radius) {
                starts.push(reaching_start(world, &initial, sim, &plan)?);
            }
            starts
        }
    };
    let mut best: Option<IlqrSolution> = None;
    for controls in starts {
        let sol = ilqr_solve(&problem, controls, ilqr)?;
        if best.as_ref().is_none_or(|b| sol.cost < b.cost) {
            best = Some(sol);
        }
    }
    let IlqrSolution {
        mut controller,
        cost,
        initial_cost,
        trace,
        ..
    } = best.expect("at least one start");
    let limit = world.robot.torque_limit;
    controller.squash = Some(limit);
    controller.noise_std = noise_scale * limit;
    let mut expert = Expert {
        world: world.world(),
        condition,
        initial,
        controller,
        cost,
        initial_cost,
        final_error: 0.0,
        iterations: trace.len() - 1,
    };
    let traj = sim::rollout(
        &expert,
        world,
        expert.initial.clone(),
        sim,
        shaping,
        Mode::Eval,
        &mut crate::rng::stream_rng(0, &[]),
    )?;
    expert.final_error = traj.final_error(world, FINAL_WINDOW);
    Ok(expert)
}

/// Point the end effector should head for first: the selected target for
/// reach, the object otherwise.
/// Cartesian waypoint sequences for the PD starts. Manipulation scenes get a
/// direct move onto the object and a second plan through a pre-contact point
/// behind the object to the point that leaves the object at its goal.
fn approach_plans(world: &WorldSpec, state: &SimState, contact_radius: f64) -> Vec<Vec<[f64; 2]>> {
    match (&world.task.kind, &state.objects) {
        (TaskKind::Reach { target_index, .. }, ObjectState::Reach { targets }) => vec![vec![targets[*target_index]]],
        (_, objects) => {
            let (Some(obj), Some(goal)) = (objects.object_position(), objects.object_goal()) else {
                return vec![vec![[0.0, 0.0]]];
            };
            let d = [goal[0] - obj[0], goal[1] - obj[1]];
            let len = d[0].hypot(d[1]);
            if len < 1e-9 {
                return vec![vec![obj]];
            }
            let dir = [d[0] / len, d[1] / len];
            let behind = |p: [f64; 2], k: f64| [p[0] - k * contact_radius * dir[0], p[1] - k * contact_radius * dir[1]];
            vec![vec![obj], vec![behind(obj, 2.0), behind(goal, 0.8)]]
        }
    }
}

/// Joint angles placing the end effector at `goal`, by damped least squares
/// from `start`.
pub fn inverse_kinematics(link_lengths: &[f64], start: &[f64], goal: [f64; 2]) -> Vec<f64> {
    const DAMPING: f64 = 0.05;
    let n = link_lengths.len();
    let mut q = start.to_vec();
    for _ in 0..200 {
        let (joints, ee) = forward_kinematics(link_lengths, &q);
        let e = [goal[0] - ee[0], goal[1] - ee[1]];
        if e[0].hypot(e[1]) < 1e-9 {
            break;
        }
        // Column i: z × (ee − joint_i).
        let jac: Vec<[f64; 2]> = (0..n).map(|i| [-(ee[1] - joints[i][1]), ee[0] - joints[i][0]]).collect();
        let mut jjt = nalgebra::Matrix2::<f64>::identity() * (DAMPING * DAMPING);
        for c in &jac {
            jjt += nalgebra::Matrix2::new(c[0] * c[0], c[0] * c[1], c[1] * c[0], c[1] * c[1]);
        }
        let y = jjt
            .try_inverse()
            .map(|inv| inv * nalgebra::Vector2::new(e[0], e[1]))
            .unwrap_or_else(nalgebra::Vector2::zeros);
        for (qi, c) in q.iter_mut().zip(&jac) {
            *qi += c[0] * y[0] + c[1] * y[1];
        }
    }
    q.iter().zip(start).map(|(qi, si)| wrap_near(*qi, *si)).collect()
}

/// IK solution closest to `start` in joint space among solves seeded from
/// `start` and from progressively unfolded versions of it. Seeding only from
/// a nearly folded pose tends to flip the elbow through the fold.
fn nearest_ik(link_lengths: &[f64], start: &[f64], goal: [f64; 2]) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for unfold in [1.0, 0.75, 0.5, 0.25] {
        let seed: Vec<f64> = start
            .iter()
            .enumerate()
            .map(|(i, q)| if i == 0 { *q } else { q * unfold })
            .collect();
        let q = inverse_kinematics(link_lengths, &seed, goal);
        let q: Vec<f64> = q.iter().zip(start).map(|(qi, si)| wrap_near(*qi, *si)).collect();
        let ee = forward_kinematics(link_lengths, &q).1;
        if (ee[0] - goal[0]).hypot(ee[1] - goal[1]) > 1e-3 {
            continue;
        }
        let d: f64 = q.iter().zip(start).map(|(a, b)| (a - b).powi(2)).sum();
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, q));
        }
    }
    best.map_or_else(|| inverse_kinematics(link_lengths, start, goal), |(_, q)| q)
}

/// The angle equivalent to `q` nearest to `reference`.
fn wrap_near(q: f64, reference: f64) -> f64 {
    let tau = 2.0 * std::f64::consts::PI;
    reference + (q - reference + std::f64::consts::PI).rem_euclid(tau) - std::f64::consts::PI
}

/// Pre-squash controls of a saturated joint-space PD controller driving the
/// arm toward an IK solution for the approach point.
fn reaching_start(world: &WorldSpec, initial: &SimState, sim: &SimConfig, plan: &[[f64; 2]]) -> Result<Vec<DVector<f64>>> {
    const KP: f64 = 25.0;
    const KD: f64 = 8.0;
    const SWITCH_DISTANCE: f64 = 0.03;
    let links = &world.robot.link_lengths;
    let mut goals = Vec::new();
    let mut seed = initial.arm.angles.clone();
    for &p in plan {
        seed = nearest_ik(links, &seed, p);
        goals.push((p, seed.clone()));
    }
    let limit = world.robot.torque_limit;
    let mut state = initial.clone();
    let mut stage = 0;
    let mut torques = Vec::with_capacity(sim.horizon);
    for t in 0..sim.horizon {
        if stage + 1 < goals.len() {
            let ee = forward_kinematics(links, &state.arm.angles).1;
            let p = goals[stage].0;
            if (ee[0] - p[0]).hypot(ee[1] - p[1]) < SWITCH_DISTANCE || t >= sim.horizon / 2 {
                stage += 1;
            }
        }
        let goal = &goals[stage].1;
        let u: Vec<f64> = state
            .arm
            .angles
            .iter()
            .zip(&state.arm.velocities)
            .zip(goal)
            .map(|((q, w), g)| (KP * (g - q) - KD * w).clamp(-0.95 * limit, 0.95 * limit))
            .collect();
        state = sim::step(world, &state, &u, sim)?;
        torques.push(u);
    }
    Ok(unsquash(&torques, limit))
}

/// Pre-squash controls that reproduce `torques` (clamped just inside the limit).
pub fn unsquash(torques: &[Vec<f64>], limit: f64) -> Vec<DVector<f64>> {
    torques
        .iter()
        .map(|u| {
            DVector::from_iterator(
                u.len(),
                u.iter().map(|v| limit * (v / limit).clamp(-0.999, 0.999).atanh()),
            )
        })
        .collect()
}

impl Actor for Expert {
    fn act(&self, t: usize, state: &SimState, _: &Observation, mode: Mode, rng: &mut Rng) -> Result<Vec<f64>> {
        self.controller.act(t, state, &Observation::default(), mode, rng)
    }
}

impl Actor for TVLGController {
    /// Mean action in `Mode::Eval`; adds `N(0, noise_std²)` per coordinate in `Mode::Train`.
    fn act(&self, t: usize, state: &SimState, _: &Observation, mode: Mode, rng: &mut Rng) -> Result<Vec<f64>> {
        let x = DVector::from_vec(state.to_vector());
        let mut u: Vec<f64> = self.action(t, &x)?.iter().copied().collect();
        if mode == Mode::Train && self.noise_std > 0.0 {
            let normal = Normal::new(0.0, self.noise_std).expect("positive std");
            for v in &mut u {
                *v += normal.sample(rng);
            }
        }
        Ok(u)
    }
}

/// Task-error threshold, as a fraction of the workspace radius, an expert
/// must beat: tighter for reach than for the contact tasks.
pub fn gate_threshold(world: &WorldSpec) -> f64 {
    match world.task.kind {
        TaskKind::Reach { .. } => 0.05,
        _ => 0.15,
    }
}

/// Fails listing every expert whose final error exceeds its threshold.
pub fn expert_gate(worlds: &[WorldSpec], experts: &[Expert]) -> Result<()> {
    let mut failures = Vec::new();
    for e in experts {
        let spec = worlds
            .iter()
            .find(|w| w.world() == e.world)
            .ok_or_else(|| Error::Config(format!("expert for unknown world {}", e.world)))?;
        let radius = spec.robot.workspace_radius();
        let limit = gate_threshold(spec);
        let rel = e.final_error / radius;
        if !(rel < limit) {
            failures.push(format!(
                "  world {} condition {}: final error {:.4} ({:.3} of workspace radius, limit {limit}); cost {:.4} -> {:.4} in {} iterations",
                e.world, e.condition, e.final_error, rel, e.initial_cost, e.cost, e.iterations
            ));
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::ExpertGate(failures.join("\n")))
    }
}

/// Expert controllers as weight-file blocks named `expert:<world>:<condition>`.
pub fn experts_to_weight_file(experts: &[Expert]) -> WeightFile {
    let mut file = WeightFile::default();
    for e in experts {
        let module = format!("expert:{}:{}", e.world.key(), e.condition);
        let c = &e.controller;
        let (m, n) = c.gains.first().map_or((0, 0), |g| g.shape());
        let horizon = c.horizon();
        // Gains are stored row-major per time step.
        let mut gains = Vec::with_capacity(horizon * m * n);
        for g in &c.gains {
            gains.extend(g.transpose().iter());
        }
        let flat = |v: &[DVector<f64>]| v.iter().flat_map(|x| x.iter().copied()).collect::<Vec<_>>();
        file.push(NamedBlock::new(&module, "gains", vec![horizon, m, n], gains).expect("shape"));
        file.push(NamedBlock::new(&module, "offsets", vec![horizon, m], flat(&c.offsets)).expect("shape"));
        file.push(
            NamedBlock::new(&module, "nominal_states", vec![horizon, n], flat(&c.nominal_states)).expect("shape"),
        );
        file.push(
            NamedBlock::new(&module, "nominal_controls", vec![horizon, m], flat(&c.nominal_controls))
                .expect("shape"),
        );
        file.push(
            NamedBlock::new(
                &module,
                "meta",
                vec![4],
                vec![c.squash.unwrap_or(0.0), c.noise_std, e.final_error, e.cost],
            )
            .expect("shape"),
        );
    }
    file
}

/// Reads back one controller written by [`experts_to_weight_file`].
pub fn controller_from_weight_file(file: &WeightFile, world: &World, condition: usize) -> Result<TVLGController> {
    let module = format!("expert:{}:{condition}", world.key());
    let gains = file.find(&module, "gains")?;
    let [horizon, m, n] = gains.shape[..] else {
        return Err(Error::Corrupt(format!("{module}/gains must be 3-d")));
    };
    let split = |role: &str, width: usize| -> Result<Vec<DVector<f64>>> {
        let b = file.find(&module, role)?;
        if b.data.len() != horizon * width {
            return Err(Error::Corrupt(format!("{module}/{role} has the wrong length")));
        }
        Ok(b.data.chunks(width.max(1)).take(horizon).map(|c| DVector::from_row_slice(&c[..width])).collect())
    };
    let meta = file.find(&module, "meta")?;
    if meta.data.len() != 4 {
        return Err(Error::Corrupt(format!("{module}/meta must hold 4 values")));
    }
    Ok(TVLGController {
        gains: gains
            .data
            .chunks(m * n)
            .map(|c| nalgebra::DMatrix::from_row_slice(m, n, c))
            .collect(),
        offsets: split("offsets", m)?,
        nominal_states: split("nominal_states", n)?,
        nominal_controls: split("nominal_controls", m)?,
        squash: (meta.data[0] > 0.0).then_some(meta.data[0]),
        noise_std: meta.data[1],
    })
}
