//! Degrees of variation: robots, tasks, the worlds they span, the
//! intrinsic/extrinsic observation split, and the decomposed cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{forward_kinematics, ObjectState, SimState};

pub const DEFAULT_ACTION_WEIGHT: f64 = 1e-3;
pub const DEFAULT_SHAPING_WEIGHT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub id: String,
    pub link_lengths: Vec<f64>,
    #[serde(default = "default_torque_limit")]
    pub torque_limit: f64,
    #[serde(default = "default_damping")]
    pub damping: f64,
}

fn default_torque_limit() -> f64 {
    5.0
}

fn default_damping() -> f64 {
    1.0
}

impl RobotSpec {
    pub fn new(id: impl Into<String>, link_lengths: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            link_lengths,
            torque_limit: default_torque_limit(),
            damping: default_damping(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.link_lengths.len() < 2 {
            return Err(Error::Config(format!("robot {}: needs at least 2 links", self.id)));
        }
        if self.link_lengths.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::Config(format!("robot {}: link lengths must be > 0", self.id)));
        }
        if !(self.torque_limit > 0.0) {
            return Err(Error::Config(format!("robot {}: torque limit must be > 0", self.id)));
        }
        if !(self.damping >= 0.0) {
            return Err(Error::Config(format!("robot {}: damping must be >= 0", self.id)));
        }
        Ok(())
    }

    pub fn num_links(&self) -> usize {
        self.link_lengths.len()
    }

    /// Dimension of the intrinsic observation: joint angles and velocities.
    pub fn intrinsic_dim(&self) -> usize {
        2 * self.num_links()
    }

    /// Maximum end-effector distance from the base.
    pub fn workspace_radius(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    /// Radius of the disc around the base the end effector cannot enter.
    pub fn inner_radius(&self) -> f64 {
        let longest = self.link_lengths.iter().cloned().fold(0.0, f64::max);
        (2.0 * longest - self.workspace_radius()).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "goal", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskKind {
    /// Reach candidate target `target_index` among `num_targets` placed in the scene.
    Reach {
        target_index: usize,
        num_targets: usize,
    },
    /// Push a block `push_distance` meters radially outward from where it starts.
    PushBlock { push_distance: f64 },
    /// Slide a drawer handle along `axis` to `target_displacement` within `[0, travel]`.
    Drawer {
        axis: [f64; 2],
        target_displacement: f64,
        travel: f64,
    },
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Reach { .. } => "reach",
            TaskKind::PushBlock { .. } => "push_block",
            TaskKind::Drawer { .. } => "drawer",
        }
    }

    /// Manipulation tasks support the shaping term.
    pub fn has_object(&self) -> bool {
        !matches!(self, TaskKind::Reach { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostWeights {
    /// λ in `c_R = λ‖u‖²`.
    pub action: f64,
    /// Weight of the end-effector-to-object shaping term.
    pub shaping: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            action: DEFAULT_ACTION_WEIGHT,
            shaping: DEFAULT_SHAPING_WEIGHT,
        }
    }
}

/// Serialized as `{id, kind, goal, weights}`. Goes through [`RawTaskSpec`]
/// because `flatten` would silently accept unknown keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTaskSpec", into = "RawTaskSpec")]
pub struct TaskSpec {
    pub id: String,
    pub kind: TaskKind,
    pub weights: CostWeights,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTaskSpec {
    id: String,
    kind: String,
    goal: serde_json::Value,
    #[serde(default)]
    weights: CostWeights,
}

impl TryFrom<RawTaskSpec> for TaskSpec {
    type Error = serde_json::Error;

    fn try_from(raw: RawTaskSpec) -> std::result::Result<Self, Self::Error> {
        let kind = serde_json::from_value(serde_json::json!({ "kind": raw.kind, "goal": raw.goal }))?;
        Ok(TaskSpec {
            id: raw.id,
            kind,
            weights: raw.weights,
        })
    }
}

impl From<TaskSpec> for RawTaskSpec {
    fn from(t: TaskSpec) -> Self {
        let mut v = serde_json::to_value(&t.kind).expect("task kind serializes");
        RawTaskSpec {
            id: t.id,
            kind: v["kind"].as_str().unwrap_or_default().to_string(),
            goal: v["goal"].take(),
            weights: t.weights,
        }
    }
}

impl TaskSpec {
    pub fn new(id: impl Into<String>, kind: TaskKind) -> Self {
        Self {
            id: id.into(),
            kind,
            weights: CostWeights::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("task {}: {msg}", self.id)));
        match &self.kind {
            TaskKind::Reach {
                target_index,
                num_targets,
            } => {
                if *num_targets == 0 || target_index >= num_targets {
                    return bad("target index must be < num_targets");
                }
            }
            TaskKind::PushBlock { push_distance } => {
                if !(*push_distance > 0.0 && *push_distance <= 0.6) {
                    return bad("push distance must be in (0, 0.6]");
                }
            }
            TaskKind::Drawer {
                axis,
                target_displacement,
                travel,
            } => {
                let n = (axis[0] * axis[0] + axis[1] * axis[1]).sqrt();
                if (n - 1.0).abs() > 1e-9 {
                    return bad("drawer axis must be a unit vector");
                }
                if !(*travel > 0.0 && *travel <= 0.6) {
                    return bad("drawer travel must be in (0, 0.6]");
                }
                if !(0.0..=*travel).contains(target_displacement) {
                    return bad("drawer target must lie within its travel");
                }
            }
        }
        if !(self.weights.action >= 0.0 && self.weights.shaping >= 0.0) {
            return bad("cost weights must be >= 0");
        }
        Ok(())
    }

    /// Dimension of the extrinsic observation; identical for every robot.
    pub fn extrinsic_dim(&self) -> usize {
        match self.kind {
            // ee + candidate positions + one-hot selector
            TaskKind::Reach { num_targets, .. } => 2 + 3 * num_targets,
            // ee + object + object goal + ee-to-object
            TaskKind::PushBlock { .. } | TaskKind::Drawer { .. } => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Universe {
    pub robots: Vec<RobotSpec>,
    pub tasks: Vec<TaskSpec>,
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(':') || id.contains(',') || id.chars().any(char::is_whitespace) {
        return Err(Error::Config(format!(
            "id {id:?} must be non-empty without ':', ',' or whitespace"
        )));
    }
    Ok(())
}

/// One (robot, task) instantiation, by id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct World {
    pub robot: String,
    pub task: String,
}

impl World {
    pub fn new(robot: impl Into<String>, task: impl Into<String>) -> Self {
        Self {
            robot: robot.into(),
            task: task.into(),
        }
    }

    /// `<robot>:<task>`, used in block names and file names.
    pub fn key(&self) -> String {
        format!("{}:{}", self.robot, self.task)
    }
}

impl std::fmt::Display for World {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.robot, self.task)
    }
}

impl Universe {
    pub fn new(robots: Vec<RobotSpec>, tasks: Vec<TaskSpec>) -> Result<Self> {
        let u = Self { robots, tasks };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<()> {
        if self.robots.is_empty() || self.tasks.is_empty() {
            return Err(Error::Config("universe needs at least one robot and one task".into()));
        }
        for (i, r) in self.robots.iter().enumerate() {
            r.validate()?;
            check_id(&r.id)?;
            if self.robots[..i].iter().any(|o| o.id == r.id) {
                return Err(Error::Config(format!("duplicate robot id {}", r.id)));
            }
        }
        for (i, t) in self.tasks.iter().enumerate() {
            t.validate()?;
            check_id(&t.id)?;
            if self.tasks[..i].iter().any(|o| o.id == t.id) {
                return Err(Error::Config(format!("duplicate task id {}", t.id)));
            }
        }
        Ok(())
    }

    pub fn robot(&self, id: &str) -> Result<&RobotSpec> {
        self.robots
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| Error::Config(format!("unknown robot {id}")))
    }

    pub fn task(&self, id: &str) -> Result<&TaskSpec> {
        self.tasks
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| Error::Config(format!("unknown task {id}")))
    }

    pub fn world_spec(&self, world: &World) -> Result<WorldSpec> {
        Ok(WorldSpec {
            robot: self.robot(&world.robot)?.clone(),
            task: self.task(&world.task)?.clone(),
        })
    }

    /// All R×K worlds, robot-major.
    pub fn enumerate_worlds(&self) -> Vec<World> {
        self.robots
            .iter()
            .flat_map(|r| self.tasks.iter().map(move |t| World::new(&r.id, &t.id)))
            .collect()
    }

    /// Every world except `held_out`. Fails when the held-out robot or task
    /// would never be trained, since its module could not be composed.
    pub fn held_out_split(&self, held_out: &World) -> Result<Vec<World>> {
        self.robot(&held_out.robot)?;
        self.task(&held_out.task)?;
        let train: Vec<World> = self
            .enumerate_worlds()
            .into_iter()
            .filter(|w| w != held_out)
            .collect();
        if !train.iter().any(|w| w.robot == held_out.robot) {
            return Err(Error::Config(format!(
                "holding out {held_out} leaves robot {} untrained",
                held_out.robot
            )));
        }
        if !train.iter().any(|w| w.task == held_out.task) {
            return Err(Error::Config(format!(
                "holding out {held_out} leaves task {} untrained",
                held_out.task
            )));
        }
        Ok(train)
    }
}

/// Observation split into the robot-specific and task-specific parts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Observation {
    /// `o_R`: joint angles then joint velocities.
    pub intrinsic: Vec<f64>,
    /// `o_T`: end-effector position then task features.
    pub extrinsic: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    /// `c_R`, depends only on the action.
    pub intrinsic: f64,
    /// `c_T`, depends only on the extrinsic state.
    pub extrinsic: f64,
    /// Shaping term; zero when disabled or for reach tasks.
    pub shaping: f64,
    pub total: f64,
}

/// A world with its robot and task resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub robot: RobotSpec,
    pub task: TaskSpec,
}

impl WorldSpec {
    pub fn world(&self) -> World {
        World::new(&self.robot.id, &self.task.id)
    }

    pub fn action_dim(&self) -> usize {
        self.robot.num_links()
    }

    fn check_state(&self, state: &SimState) -> Result<()> {
        let n = self.robot.num_links();
        if state.arm.angles.len() != n || state.arm.velocities.len() != n {
            return Err(Error::shape(
                format!("state for robot {}", self.robot.id),
                format!("{n} joints"),
                format!(
                    "{} angles, {} velocities",
                    state.arm.angles.len(),
                    state.arm.velocities.len()
                ),
            ));
        }
        let ok = matches!(
            (&self.task.kind, &state.objects),
            (TaskKind::Reach { num_targets, .. }, ObjectState::Reach { targets }) if targets.len() == *num_targets
        ) || matches!(
            (&self.task.kind, &state.objects),
            (TaskKind::PushBlock { .. }, ObjectState::Push { .. })
                | (TaskKind::Drawer { .. }, ObjectState::Drawer { .. })
        );
        if !ok {
            return Err(Error::shape(
                format!("object state for task {}", self.task.id),
                self.task.kind.name(),
                state.objects.kind_name(),
            ));
        }
        Ok(())
    }

    pub fn end_effector(&self, state: &SimState) -> [f64; 2] {
        forward_kinematics(&self.robot.link_lengths, &state.arm.angles).1
    }

    pub fn split_observation(&self, state: &SimState) -> Result<Observation> {
        self.check_state(state)?;
        let mut intrinsic = state.arm.angles.clone();
        intrinsic.extend_from_slice(&state.arm.velocities);
        let ee = self.end_effector(state);
        let mut extrinsic = ee.to_vec();
        match (&self.task.kind, &state.objects) {
            (TaskKind::Reach { target_index, .. }, ObjectState::Reach { targets }) => {
                for t in targets {
                    extrinsic.extend_from_slice(t);
                }
                extrinsic.extend((0..targets.len()).map(|i| f64::from(u8::from(i == *target_index))));
            }
            _ => {
                let obj = state.objects.object_position().expect("manipulation task");
                let goal = state.objects.object_goal().expect("manipulation task");
                extrinsic.extend_from_slice(&obj);
                extrinsic.extend_from_slice(&goal);
                extrinsic.extend_from_slice(&[obj[0] - ee[0], obj[1] - ee[1]]);
            }
        }
        debug_assert_eq!(extrinsic.len(), self.task.extrinsic_dim());
        Ok(Observation {
            intrinsic,
            extrinsic,
        })
    }

    /// Distance of the task quantity from its goal: end effector to the
    /// selected target for reach, object to goal otherwise.
    pub fn task_error(&self, state: &SimState) -> f64 {
        let (a, b) = self.task_points(state);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    fn task_points(&self, state: &SimState) -> ([f64; 2], [f64; 2]) {
        match (&self.task.kind, &state.objects) {
            (TaskKind::Reach { target_index, .. }, ObjectState::Reach { targets }) => {
                (self.end_effector(state), targets[*target_index])
            }
            (_, objects) => (
                objects.object_position().expect("manipulation task"),
                objects.object_goal().expect("manipulation task"),
            ),
        }
    }

    /// Cost of arriving in `state` after applying torque `u`.
    pub fn evaluate_cost(&self, state: &SimState, u: &[f64], shaping: bool) -> CostBreakdown {
        let intrinsic = self.task.weights.action * u.iter().map(|v| v * v).sum::<f64>();
        let e = self.task_error(state);
        let extrinsic = e * e;
        let shaping = if shaping && self.task.kind.has_object() {
            let ee = self.end_effector(state);
            let obj = state.objects.object_position().expect("manipulation task");
            self.task.weights.shaping * ((ee[0] - obj[0]).powi(2) + (ee[1] - obj[1]).powi(2))
        } else {
            0.0
        };
        CostBreakdown {
            intrinsic,
            extrinsic,
            shaping,
            total: intrinsic + extrinsic + shaping,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ArmState;

    #[test]
    fn task_json_round_trip_and_strictness() {
        let json = r#"{"id": "drawer", "kind": "drawer",
            "goal": {"axis": [0, 1], "target_displacement": 0.5, "travel": 0.6},
            "weights": {"action": 0.001}}"#;
        let t: TaskSpec = serde_json::from_str(json).unwrap();
        assert_eq!(
            t.kind,
            TaskKind::Drawer {
                axis: [0.0, 1.0],
                target_displacement: 0.5,
                travel: 0.6
            }
        );
        assert_eq!(t.weights.shaping, DEFAULT_SHAPING_WEIGHT);
        let back: TaskSpec = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
        let typo = json.replace("\"weights\"", "\"weight\"");
        assert!(serde_json::from_str::<TaskSpec>(&typo).is_err());
        let bad_goal = r#"{"id": "p", "kind": "push_block", "goal": {"push_distance": 0.5, "extra": 1}}"#;
        assert!(serde_json::from_str::<TaskSpec>(bad_goal).is_err());
    }

    pub(crate) fn reach_universe(robots: usize, tasks: usize) -> Universe {
        Universe::new(
            (0..robots)
                .map(|i| RobotSpec::new(format!("r{}", i + 1), vec![1.0; 2 + i % 2]))
                .collect(),
            (0..tasks)
                .map(|k| {
                    TaskSpec::new(
                        format!("k{}", k + 1),
                        TaskKind::Reach {
                            target_index: k,
                            num_targets: tasks.max(1),
                        },
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    fn reach_state(angles: Vec<f64>, targets: Vec<[f64; 2]>) -> SimState {
        let n = angles.len();
        SimState {
            arm: ArmState {
                angles,
                velocities: vec![0.0; n],
            },
            objects: ObjectState::Reach { targets },
        }
    }

    #[test]
    fn world_counts() {
        assert_eq!(reach_universe(2, 2).enumerate_worlds().len(), 4);
        assert_eq!(reach_universe(1, 1).enumerate_worlds().len(), 1);
        let w = reach_universe(3, 3).enumerate_worlds();
        assert_eq!(w.len(), 9);
        assert_eq!(w[0], World::new("r1", "k1"));
        assert_eq!(w[1], World::new("r1", "k2"));
        assert_eq!(w[3], World::new("r2", "k1"));
    }

    #[test]
    fn held_out_splits() {
        let u = reach_universe(3, 3);
        let held = World::new("r3", "k1");
        let train = u.held_out_split(&held).unwrap();
        assert_eq!(train.len(), 8);
        assert!(!train.contains(&held));
        let mut all = train.clone();
        all.push(held);
        all.sort();
        let mut grid = u.enumerate_worlds();
        grid.sort();
        assert_eq!(all, grid);

        assert_eq!(reach_universe(3, 4).held_out_split(&World::new("r3", "k4")).unwrap().len(), 11);
        assert!(matches!(
            reach_universe(1, 2).held_out_split(&World::new("r1", "k2")),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn observation_dims() {
        let u = reach_universe(2, 4);
        let targets = vec![[1.0, 0.0]; 4];
        let two = u.world_spec(&World::new("r1", "k1")).unwrap();
        let three = u.world_spec(&World::new("r2", "k1")).unwrap();
        let o2 = two.split_observation(&reach_state(vec![0.0; 2], targets.clone())).unwrap();
        let o3 = three.split_observation(&reach_state(vec![0.0; 3], targets)).unwrap();
        assert_eq!(o2.intrinsic.len(), 4);
        assert_eq!(o3.intrinsic.len(), 6);
        assert_eq!(o2.extrinsic.len(), 14);
        assert_eq!(o3.extrinsic.len(), 14);
        assert_eq!(&o2.extrinsic[10..], &[1.0, 0.0, 0.0, 0.0]);
        assert!(two.split_observation(&reach_state(vec![0.0; 3], vec![[0.0; 2]; 4])).is_err());
    }

    #[test]
    fn cost_examples() {
        let u = Universe::new(
            vec![RobotSpec::new("r", vec![0.5, 0.5])],
            vec![TaskSpec::new("k", TaskKind::Reach { target_index: 0, num_targets: 1 })],
        )
        .unwrap();
        let ws = u.world_spec(&World::new("r", "k")).unwrap();
        // ee at (1, 0)
        let at_goal = reach_state(vec![0.0, 0.0], vec![[1.0, 0.0]]);
        assert_eq!(ws.evaluate_cost(&at_goal, &[0.0, 0.0], false).total, 0.0);

        let off = reach_state(vec![0.0, 0.0], vec![[0.0, 0.0]]);
        let c = ws.evaluate_cost(&off, &[0.1, 0.0], false);
        assert!((c.extrinsic - 1.0).abs() < 1e-15);
        assert!((c.intrinsic - 1e-5).abs() < 1e-18);
        assert!((c.total - 1.00001).abs() < 1e-12);

        let c2 = ws.evaluate_cost(&off, &[3.0, -7.0], false);
        assert_eq!(c.extrinsic.to_bits(), c2.extrinsic.to_bits());
    }
}
