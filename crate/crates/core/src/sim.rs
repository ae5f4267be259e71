//! Planar N-link torque-controlled arm with reach, block-push and drawer tasks.
//!
//! Joints have unit inertia and viscous damping and are integrated with
//! semi-implicit Euler. Contact is kinematic: an end effector that ends a step
//! inside the contact radius of the block projects the block out to exactly
//! the radius; for the drawer only the push component along the drawer axis
//! moves the handle, and only above a static threshold.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::rng::{str_id, stream_rng, Rng};
use crate::universe::{CostBreakdown, Observation, TaskKind, WorldSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt: f64,
    pub contact_radius: f64,
    /// Minimum along-axis push (meters per step) that moves the drawer.
    pub drawer_threshold: f64,
    pub horizon: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            contact_radius: 0.1,
            drawer_threshold: 0.005,
            horizon: 50,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || self.horizon == 0 || !(self.contact_radius > 0.0) {
            return Err(Error::Config("sim needs dt > 0, horizon >= 1, contact radius > 0".into()));
        }
        if !(self.drawer_threshold >= 0.0) {
            return Err(Error::Config("drawer threshold must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmState {
    pub angles: Vec<f64>,
    pub velocities: Vec<f64>,
}

impl ArmState {
    pub fn at_rest(angles: Vec<f64>) -> Self {
        let n = angles.len();
        Self {
            angles,
            velocities: vec![0.0; n],
        }
    }
}

/// Task objects. Goals and candidate targets travel with the state so a
/// state alone determines observation and cost.
#[derive(Debug, Clone, PartialEq)]
pub enum ObjectState {
    Reach {
        targets: Vec<[f64; 2]>,
    },
    Push {
        block: [f64; 2],
        goal: [f64; 2],
    },
    Drawer {
        /// Handle position at zero displacement.
        origin: [f64; 2],
        axis: [f64; 2],
        displacement: f64,
        target: f64,
        travel: f64,
    },
}

impl ObjectState {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ObjectState::Reach { .. } => "reach",
            ObjectState::Push { .. } => "push_block",
            ObjectState::Drawer { .. } => "drawer",
        }
    }

    /// Block or drawer-handle position.
    pub fn object_position(&self) -> Option<[f64; 2]> {
        match *self {
            ObjectState::Reach { .. } => None,
            ObjectState::Push { block, .. } => Some(block),
            ObjectState::Drawer {
                origin,
                axis,
                displacement,
                ..
            } => Some(add(origin, scale(axis, displacement))),
        }
    }

    pub fn object_goal(&self) -> Option<[f64; 2]> {
        match *self {
            ObjectState::Reach { .. } => None,
            ObjectState::Push { goal, .. } => Some(goal),
            ObjectState::Drawer {
                origin,
                axis,
                target,
                ..
            } => Some(add(origin, scale(axis, target))),
        }
    }

    fn dynamic_dim(&self) -> usize {
        match self {
            ObjectState::Reach { .. } => 0,
            ObjectState::Push { .. } => 2,
            ObjectState::Drawer { .. } => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub arm: ArmState,
    pub objects: ObjectState,
}

impl SimState {
    /// Dimension of [`SimState::to_vector`].
    pub fn dim(&self) -> usize {
        2 * self.arm.angles.len() + self.objects.dynamic_dim()
    }

    /// Flat dynamic state `[angles, velocities, block xy | drawer displacement]`.
    /// Goals and targets are constants of the scene and are not included.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut x = self.arm.angles.clone();
        x.extend_from_slice(&self.arm.velocities);
        match self.objects {
            ObjectState::Reach { .. } => {}
            ObjectState::Push { block, .. } => x.extend_from_slice(&block),
            ObjectState::Drawer { displacement, .. } => x.push(displacement),
        }
        x
    }

    /// Same scene with the dynamic part replaced by `x`.
    pub fn with_vector(&self, x: &[f64]) -> Result<SimState> {
        if x.len() != self.dim() {
            return Err(Error::shape("SimState::with_vector", self.dim(), x.len()));
        }
        let n = self.arm.angles.len();
        let mut s = self.clone();
        s.arm.angles.copy_from_slice(&x[..n]);
        s.arm.velocities.copy_from_slice(&x[n..2 * n]);
        match &mut s.objects {
            ObjectState::Reach { .. } => {}
            ObjectState::Push { block, .. } => *block = [x[2 * n], x[2 * n + 1]],
            ObjectState::Drawer { displacement, .. } => *displacement = x[2 * n],
        }
        Ok(s)
    }
}

#[inline]
fn add(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
fn scale(a: [f64; 2], s: f64) -> [f64; 2] {
    [a[0] * s, a[1] * s]
}

#[inline]
fn norm(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

/// Joint positions (base first) and the end-effector position.
pub fn forward_kinematics(link_lengths: &[f64], angles: &[f64]) -> (Vec<[f64; 2]>, [f64; 2]) {
    let mut joints = Vec::with_capacity(link_lengths.len());
    let mut p = [0.0, 0.0];
    let mut heading = 0.0;
    for (l, a) in link_lengths.iter().zip(angles) {
        joints.push(p);
        heading += a;
        p = [p[0] + l * heading.cos(), p[1] + l * heading.sin()];
    }
    (joints, p)
}

/// One integrator step of the arm; torques are clamped to the robot's limit.
pub fn step_arm(
    state: &ArmState,
    torque: &[f64],
    torque_limit: f64,
    damping: f64,
    dt: f64,
) -> Result<ArmState> {
    let n = state.angles.len();
    if torque.len() != n || state.velocities.len() != n {
        return Err(Error::shape("step_arm torque", n, torque.len()));
    }
    if torque.iter().chain(&state.angles).chain(&state.velocities).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("step_arm input".into()));
    }
    let mut next = state.clone();
    for i in 0..n {
        let tau = torque[i].clamp(-torque_limit, torque_limit);
        let w = state.velocities[i] + (tau - damping * state.velocities[i]) * dt;
        next.velocities[i] = w;
        next.angles[i] = state.angles[i] + w * dt;
    }
    Ok(next)
}

/// Advances task objects given the end-effector position after the arm step.
pub fn step_objects(objects: &ObjectState, ee: [f64; 2], config: &SimConfig) -> ObjectState {
    let r = config.contact_radius;
    match *objects {
        ObjectState::Reach { .. } => objects.clone(),
        ObjectState::Push { block, goal } => {
            let d = sub(block, ee);
            let dist = norm(d);
            if dist >= r {
                return objects.clone();
            }
            let normal = if dist > 1e-12 { scale(d, 1.0 / dist) } else { unit_from_base(ee) };
            ObjectState::Push {
                block: add(ee, scale(normal, r)),
                goal,
            }
        }
        ObjectState::Drawer {
            origin,
            axis,
            displacement,
            target,
            travel,
        } => {
            let handle = add(origin, scale(axis, displacement));
            let d = sub(handle, ee);
            let dist = norm(d);
            if dist >= r {
                return objects.clone();
            }
            let normal = if dist > 1e-12 { scale(d, 1.0 / dist) } else { unit_from_base(ee) };
            let push = scale(normal, r - dist);
            let along = push[0] * axis[0] + push[1] * axis[1];
            let displacement = if along.abs() > config.drawer_threshold {
                (displacement + along).clamp(0.0, travel)
            } else {
                displacement
            };
            ObjectState::Drawer {
                origin,
                axis,
                displacement,
                target,
                travel,
            }
        }
    }
}

fn unit_from_base(ee: [f64; 2]) -> [f64; 2] {
    let n = norm(ee);
    if n > 1e-12 {
        scale(ee, 1.0 / n)
    } else {
        [1.0, 0.0]
    }
}

/// Full simulator step: arm, then objects.
pub fn step(world: &WorldSpec, state: &SimState, torque: &[f64], config: &SimConfig) -> Result<SimState> {
    let arm = step_arm(
        &state.arm,
        torque,
        world.robot.torque_limit,
        world.robot.damping,
        config.dt,
    )?;
    let ee = forward_kinematics(&world.robot.link_lengths, &arm.angles).1;
    let objects = step_objects(&state.objects, ee, config);
    Ok(SimState { arm, objects })
}

/// Which pool of placements a condition index refers to. Test placements come
/// from a separate random stream, so they never coincide with training ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn id(self) -> u64 {
        match self {
            Split::Train => 0x74_7261_696e,
            Split::Test => 0x7465_7374,
        }
    }
}

/// End-effector distance from the base in the rest pose, as a fraction of
/// the workspace radius.
pub const REST_RADIUS_FRACTION: f64 = 0.35;

/// Folded rest pose: the joints after the first share a total bend `B`,
/// chosen so the end effector sits at [`REST_RADIUS_FRACTION`] of the
/// workspace radius (or as close as the arm can fold), and the first joint
/// turns the arm so the end effector lies on the positive x axis.
pub fn canonical_pose(link_lengths: &[f64]) -> Vec<f64> {
    let n = link_lengths.len();
    if n == 1 {
        return vec![0.0];
    }
    let pose = |bend: f64| -> Vec<f64> {
        let mut q: Vec<f64> = std::iter::once(0.0)
            .chain(std::iter::repeat_n(bend / (n - 1) as f64, n - 1))
            .collect();
        let ee = forward_kinematics(link_lengths, &q).1;
        q[0] = -ee[1].atan2(ee[0]);
        q
    };
    let radius = |bend: f64| norm(forward_kinematics(link_lengths, &pose(bend)).1);
    let target = REST_RADIUS_FRACTION * link_lengths.iter().sum::<f64>();
    let max_bend = (n - 1) as f64 * (PI - 0.1);
    // Scan for the first bend that folds far enough, then bisect inside it.
    let steps = 200;
    let mut lo = 0.0;
    let mut best = (f64::INFINITY, 0.0);
    for i in 1..=steps {
        let b = max_bend * i as f64 / steps as f64;
        let r = radius(b);
        if r < best.0 {
            best = (r, b);
        }
        if r <= target {
            let mut hi = b;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if radius(mid) > target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return pose(hi);
        }
        lo = b;
    }
    pose(best.1)
}

fn polar(r: f64, a: f64) -> [f64; 2] {
    [r * a.cos(), r * a.sin()]
}

/// Initial state for `condition` of `split`. The placement depends on the
/// seed, the task id, the split and the condition index, not on the robot, so
/// every robot of equal reach faces the same scenes.
pub fn reset(world: &WorldSpec, split: Split, condition: usize, seed: u64) -> SimState {
    let mut rng = stream_rng(seed, &[split.id(), str_id(&world.task.id), condition as u64]);
    let reach = world.robot.workspace_radius();
    let r_min = (0.4 * reach).max(world.robot.inner_radius() + 0.1);
    let r_max = 0.9 * reach;
    let arm = ArmState::at_rest(canonical_pose(&world.robot.link_lengths));
    let objects = match world.task.kind {
        TaskKind::Reach { num_targets, .. } => {
            let mut targets: Vec<[f64; 2]> = Vec::with_capacity(num_targets);
            let min_sep = 0.25 * reach;
            while targets.len() < num_targets {
                let r = rng.random_range(r_min..r_max);
                let a = rng.random_range(-0.5 * PI..0.5 * PI);
                let p = polar(r, a);
                // Rejection keeps candidates apart; give up on spacing after many tries.
                let spaced = targets.iter().all(|q| norm(sub(p, *q)) >= min_sep);
                if spaced || rng.random::<f64>() < 1e-3 {
                    targets.push(p);
                }
            }
            ObjectState::Reach { targets }
        }
        TaskKind::PushBlock { push_distance } => {
            let r = rng.random_range(0.5 * reach..0.6 * reach);
            let a = rng.random_range(-PI / 4.0..PI / 4.0);
            let block = polar(r, a);
            let goal = polar(r + push_distance, a);
            ObjectState::Push { block, goal }
        }
        TaskKind::Drawer {
            axis,
            target_displacement,
            travel,
        } => {
            // The handle sits off to the side of the axis line through the
            // base, so a path out from the base meets its back face.
            let r = rng.random_range(0.5 * reach..0.6 * reach);
            let a = axis[1].atan2(axis[0]) + rng.random_range(-PI / 3.0..-PI / 12.0);
            ObjectState::Drawer {
                origin: polar(r, a),
                axis,
                displacement: 0.0,
                target: target_displacement,
                travel,
            }
        }
    };
    SimState { arm, objects }
}

/// Anything that produces torques from the current state.
pub trait Actor {
    /// `Mode::Eval` must be deterministic (the mean action); `Mode::Train` may sample.
    fn act(
        &self,
        t: usize,
        state: &SimState,
        obs: &Observation,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Vec<f64>>;
}

impl<F> Actor for F
where
    F: Fn(usize, &SimState, &Observation) -> Vec<f64>,
{
    fn act(&self, t: usize, state: &SimState, obs: &Observation, _: Mode, _: &mut Rng) -> Result<Vec<f64>> {
        Ok(self(t, state, obs))
    }
}

/// Record of one episode: T+1 states and observations, T actions and costs.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<SimState>,
    pub observations: Vec<Observation>,
    /// Actions as produced by the actor.
    pub actions: Vec<Vec<f64>>,
    /// Actions after torque clamping, as applied by the simulator.
    pub applied: Vec<Vec<f64>>,
    /// `costs[t]` is the cost of applying `applied[t]` and arriving in `states[t + 1]`.
    pub costs: Vec<CostBreakdown>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn total_cost(&self) -> f64 {
        self.costs.iter().map(|c| c.total).sum()
    }

    /// Mean task error over the last `window` states.
    pub fn final_error(&self, world: &WorldSpec, window: usize) -> f64 {
        let n = window.clamp(1, self.states.len());
        self.states[self.states.len() - n..]
            .iter()
            .map(|s| world.task_error(s))
            .sum::<f64>()
            / n as f64
    }

    /// CSV with columns `t, state…, action…, c_R, c_T, total`; row `t` holds
    /// the state before action `t`, the final row the terminal state only.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let dim = self.states[0].dim();
        let m = self.actions.first().map_or(0, Vec::len);
        let mut out = String::from("t");
        for i in 0..dim {
            out.push_str(&format!(",x{i}"));
        }
        for j in 0..m {
            out.push_str(&format!(",u{j}"));
        }
        out.push_str(",c_R,c_T,total\n");
        for (t, s) in self.states.iter().enumerate() {
            out.push_str(&t.to_string());
            for v in s.to_vector() {
                out.push(',');
                out.push_str(&crate::harness::fmt_float(v));
            }
            if let (Some(a), Some(c)) = (self.applied.get(t), self.costs.get(t)) {
                for v in a {
                    out.push(',');
                    out.push_str(&crate::harness::fmt_float(*v));
                }
                for v in [c.intrinsic, c.extrinsic, c.total] {
                    out.push(',');
                    out.push_str(&crate::harness::fmt_float(v));
                }
            } else {
                out.push_str(&",".repeat(m + 3));
            }
            out.push('\n');
        }
        std::fs::File::create(path)?.write_all(out.as_bytes())?;
        Ok(())
    }
}

/// Runs `config.horizon` steps of act → step → cost from `initial`.
pub fn rollout(
    actor: &dyn Actor,
    world: &WorldSpec,
    initial: SimState,
    config: &SimConfig,
    shaping: bool,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Trajectory> {
    let t_max = config.horizon;
    let mut traj = Trajectory {
        states: Vec::with_capacity(t_max + 1),
        observations: Vec::with_capacity(t_max + 1),
        actions: Vec::with_capacity(t_max),
        applied: Vec::with_capacity(t_max),
        costs: Vec::with_capacity(t_max),
    };
    let mut state = initial;
    let limit = world.robot.torque_limit;
    for t in 0..t_max {
        let obs = world.split_observation(&state)?;
        let u = actor.act(t, &state, &obs, mode, rng)?;
        if u.len() != world.action_dim() {
            return Err(Error::shape("actor output", world.action_dim(), u.len()));
        }
        let applied: Vec<f64> = u.iter().map(|v| v.clamp(-limit, limit)).collect();
        let next = step(world, &state, &applied, config)?;
        traj.costs.push(world.evaluate_cost(&next, &applied, shaping));
        traj.states.push(state);
        traj.observations.push(obs);
        traj.actions.push(u);
        traj.applied.push(applied);
        state = next;
    }
    traj.observations.push(world.split_observation(&state)?);
    traj.states.push(state);
    Ok(traj)
}
