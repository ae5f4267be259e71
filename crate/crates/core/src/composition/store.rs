use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::policy::{compose, ComposedPolicy, PolicyGradient};
use crate::error::{Error, Result};
use crate::nn::{Activation, Layer, Matrix, Mlp, NamedBlock, OptimizerConfig, OptimizerState, WeightFile};
use crate::rng::{str_id, stream_rng};
use crate::universe::{RobotSpec, TaskSpec, Universe, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Robot,
    Task,
}

/// Layer widths and interface regularization shared by every module of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub task_hidden: Vec<usize>,
    pub robot_hidden: Vec<usize>,
    pub bottleneck: usize,
    /// Dropout applied to the task-module output during supervised updates.
    pub dropout: f64,
    pub initial_log_std: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            task_hidden: vec![32, 32],
            robot_hidden: vec![32, 32],
            bottleneck: 8,
            dropout: 0.1,
            initial_log_std: 0.1f64.ln(),
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.bottleneck == 0 {
            return Err(Error::Config("bottleneck width must be >= 1".into()));
        }
        if self.task_hidden.iter().chain(&self.robot_hidden).any(|&h| h == 0) {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout rate {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModuleSpec {
    pub role: Role,
    pub owner: String,
    /// `[in, hidden..., out]`.
    pub sizes: Vec<usize>,
    pub bottleneck: usize,
    pub dropout: f64,
}

impl ModuleSpec {
    pub fn task(arch: &Architecture, task: &TaskSpec) -> Self {
        let mut sizes = vec![task.extrinsic_dim()];
        sizes.extend(&arch.task_hidden);
        sizes.push(arch.bottleneck);
        Self {
            role: Role::Task,
            owner: task.id.clone(),
            sizes,
            bottleneck: arch.bottleneck,
            dropout: arch.dropout,
        }
    }

    pub fn robot(arch: &Architecture, robot: &RobotSpec) -> Self {
        let mut sizes = vec![arch.bottleneck + robot.intrinsic_dim()];
        sizes.extend(&arch.robot_hidden);
        sizes.push(robot.num_links());
        Self {
            role: Role::Robot,
            owner: robot.id.clone(),
            sizes,
            bottleneck: arch.bottleneck,
            dropout: arch.dropout,
        }
    }

    fn build(&self, seed: u64) -> Result<Mlp> {
        if self.bottleneck == 0 {
            return Err(Error::Config("bottleneck width must be >= 1".into()));
        }
        let role_id = match self.role {
            Role::Robot => 1,
            Role::Task => 2,
        };
        let mut rng = stream_rng(seed, &[0x6d_6f64, role_id, str_id(&self.owner)]);
        Mlp::init(&self.sizes, Activation::Tanh, Activation::Linear, &mut rng)
    }
}

/// MLP `o_T → bottleneck`.
pub fn build_task_module(spec: &ModuleSpec, task: &TaskSpec, seed: u64) -> Result<Mlp> {
    if spec.role != Role::Task || spec.owner != task.id {
        return Err(Error::Config(format!("module spec for {:?}:{} is not a task module for {}", spec.role, spec.owner, task.id)));
    }
    if spec.sizes.first() != Some(&task.extrinsic_dim()) || spec.sizes.last() != Some(&spec.bottleneck) {
        return Err(Error::shape(
            format!("task module {}", task.id),
            format!("{} -> {}", task.extrinsic_dim(), spec.bottleneck),
            format!("{:?}", spec.sizes),
        ));
    }
    spec.build(seed)
}

/// MLP `[bottleneck ; o_R] → torques`.
pub fn build_robot_module(spec: &ModuleSpec, robot: &RobotSpec, seed: u64) -> Result<Mlp> {
    if spec.role != Role::Robot || spec.owner != robot.id {
        return Err(Error::Config(format!("module spec for {:?}:{} is not a robot module for {}", spec.role, spec.owner, robot.id)));
    }
    let input = spec.bottleneck + robot.intrinsic_dim();
    if spec.sizes.first() != Some(&input) || spec.sizes.last() != Some(&robot.num_links()) {
        return Err(Error::shape(
            format!("robot module {}", robot.id),
            format!("{input} -> {}", robot.num_links()),
            format!("{:?}", spec.sizes),
        ));
    }
    spec.build(seed)
}

/// Identity of a shared parameter block.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockId {
    Robot(String),
    Task(String),
    LogStd(World),
}

impl BlockId {
    /// `robot:<id>`, `task:<id>` or `logstd:<robot>:<task>`.
    pub fn name(&self) -> String {
        match self {
            BlockId::Robot(id) => format!("robot:{id}"),
            BlockId::Task(id) => format!("task:{id}"),
            BlockId::LogStd(w) => format!("logstd:{}", w.key()),
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        let (kind, rest) = name.split_once(':')?;
        match kind {
            "robot" => Some(BlockId::Robot(rest.to_string())),
            "task" => Some(BlockId::Task(rest.to_string())),
            "logstd" => {
                let (r, k) = rest.split_once(':')?;
                Some(BlockId::LogStd(World::new(r, k)))
            }
            _ => None,
        }
    }
}

/// Every trainable block of a grid. Robot and task modules are stored once
/// and borrowed by every policy that uses them.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    robots: BTreeMap<String, Mlp>,
    tasks: BTreeMap<String, Mlp>,
    log_stds: BTreeMap<World, Vec<f64>>,
    bottleneck: usize,
    dropout: f64,
}

const META_MODULE: &str = "meta";

impl ParameterStore {
    /// Fresh blocks for every robot and task appearing in `worlds`, plus one
    /// log-std vector per world.
    pub fn init(universe: &Universe, worlds: &[World], arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut store = Self {
            robots: BTreeMap::new(),
            tasks: BTreeMap::new(),
            log_stds: BTreeMap::new(),
            bottleneck: arch.bottleneck,
            dropout: arch.dropout,
        };
        for w in worlds {
            let robot = universe.robot(&w.robot)?;
            let task = universe.task(&w.task)?;
            if !store.robots.contains_key(&robot.id) {
                let m = build_robot_module(&ModuleSpec::robot(arch, robot), robot, seed)?;
                store.robots.insert(robot.id.clone(), m);
            }
            if !store.tasks.contains_key(&task.id) {
                let m = build_task_module(&ModuleSpec::task(arch, task), task, seed)?;
                store.tasks.insert(task.id.clone(), m);
            }
            store
                .log_stds
                .insert(w.clone(), vec![arch.initial_log_std; robot.num_links()]);
        }
        Ok(store)
    }

    pub fn bottleneck(&self) -> usize {
        self.bottleneck
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn set_dropout(&mut self, rate: f64) -> Result<()> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} not in [0, 1)")));
        }
        self.dropout = rate;
        Ok(())
    }

    pub fn robot(&self, id: &str) -> Result<&Mlp> {
        self.robots
            .get(id)
            .ok_or_else(|| Error::UnknownBlock(BlockId::Robot(id.to_string()).name()))
    }

    pub fn task(&self, id: &str) -> Result<&Mlp> {
        self.tasks
            .get(id)
            .ok_or_else(|| Error::UnknownBlock(BlockId::Task(id.to_string()).name()))
    }

    pub fn robot_ids(&self) -> impl Iterator<Item = &String> {
        self.robots.keys()
    }

    pub fn task_ids(&self) -> impl Iterator<Item = &String> {
        self.tasks.keys()
    }

    pub fn worlds(&self) -> impl Iterator<Item = &World> {
        self.log_stds.keys()
    }

    pub fn insert_robot(&mut self, id: impl Into<String>, module: Mlp) {
        self.robots.insert(id.into(), module);
    }

    pub fn insert_task(&mut self, id: impl Into<String>, module: Mlp) {
        self.tasks.insert(id.into(), module);
    }

    pub fn insert_log_std(&mut self, world: World, log_std: Vec<f64>) {
        self.log_stds.insert(world, log_std);
    }

    /// Log-std of `world`; worlds never trained borrow the mean over the
    /// trained worlds of the same robot, so composing needs no new parameters.
    pub fn log_std(&self, world: &World) -> Result<Vec<f64>> {
        if let Some(v) = self.log_stds.get(world) {
            return Ok(v.clone());
        }
        let same_robot: Vec<&Vec<f64>> = self
            .log_stds
            .iter()
            .filter(|(w, _)| w.robot == world.robot)
            .map(|(_, v)| v)
            .collect();
        let Some(first) = same_robot.first() else {
            return Err(Error::UnknownBlock(BlockId::LogStd(world.clone()).name()));
        };
        let mut mean = vec![0.0; first.len()];
        for v in &same_robot {
            for (m, x) in mean.iter_mut().zip(v.iter()) {
                *m += x / same_robot.len() as f64;
            }
        }
        Ok(mean)
    }

    /// Composed policy for `world`, borrowing this store's blocks.
    pub fn policy(&self, world: &World) -> Result<ComposedPolicy<'_>> {
        let robot = self.robots.get(&world.robot);
        let task = self.tasks.get(&world.task);
        match (robot, task) {
            (Some(r), Some(t)) => compose(world.clone(), r, t, self.log_std(world)?, self.dropout),
            _ => Err(Error::Compose {
                robot: world.robot.clone(),
                task: world.task.clone(),
                reason: format!(
                    "missing {}",
                    [
                        robot.is_none().then(|| BlockId::Robot(world.robot.clone()).name()),
                        task.is_none().then(|| BlockId::Task(world.task.clone()).name()),
                    ]
                    .into_iter()
                    .flatten()
                    .collect::<Vec<_>>()
                    .join(" and ")
                ),
            }),
        }
    }

    pub fn block_ids(&self) -> Vec<BlockId> {
        self.robots
            .keys()
            .map(|k| BlockId::Robot(k.clone()))
            .chain(self.tasks.keys().map(|k| BlockId::Task(k.clone())))
            .chain(self.log_stds.keys().map(|w| BlockId::LogStd(w.clone())))
            .collect()
    }

    pub fn block_params(&self, id: &BlockId) -> Result<Vec<f64>> {
        match id {
            BlockId::Robot(r) => Ok(self.robot(r)?.flatten()),
            BlockId::Task(t) => Ok(self.task(t)?.flatten()),
            BlockId::LogStd(w) => self
                .log_stds
                .get(w)
                .cloned()
                .ok_or_else(|| Error::UnknownBlock(id.name())),
        }
    }

    pub fn set_block_params(&mut self, id: &BlockId, params: &[f64]) -> Result<()> {
        match id {
            BlockId::Robot(r) => self
                .robots
                .get_mut(r)
                .ok_or_else(|| Error::UnknownBlock(id.name()))?
                .assign(params),
            BlockId::Task(t) => self
                .tasks
                .get_mut(t)
                .ok_or_else(|| Error::UnknownBlock(id.name()))?
                .assign(params),
            BlockId::LogStd(w) => {
                let v = self.log_stds.get_mut(w).ok_or_else(|| Error::UnknownBlock(id.name()))?;
                if v.len() != params.len() {
                    return Err(Error::shape(id.name(), v.len(), params.len()));
                }
                v.copy_from_slice(params);
                Ok(())
            }
        }
    }

    /// Σ_r |f_r| + Σ_k |g_k| + Σ_w |log σ_w|.
    pub fn num_params(&self) -> usize {
        self.robots.values().map(Mlp::num_params).sum::<usize>()
            + self.tasks.values().map(Mlp::num_params).sum::<usize>()
            + self.log_stds.values().map(Vec::len).sum::<usize>()
    }

    /// Applies one optimizer step per block present in `grad`.
    pub fn apply(&mut self, grad: &GridGradient, optimizers: &mut OptimizerBank) -> Result<()> {
        for (id, g) in &grad.blocks {
            let mut p = self.block_params(id)?;
            optimizers.state_for(id, p.len()).step(&mut p, g)?;
            self.set_block_params(id, &p)?;
        }
        Ok(())
    }

    pub fn to_weight_file(&self) -> WeightFile {
        let mut f = WeightFile::default();
        let mlp_blocks = |f: &mut WeightFile, module: String, net: &Mlp| {
            for (i, l) in net.layers().iter().enumerate() {
                let (r, c) = l.weights.shape();
                f.push(NamedBlock {
                    module: module.clone(),
                    role: format!("dense{i}.weight.{}", l.activation.name()),
                    shape: vec![r, c],
                    data: l.weights.data().to_vec(),
                });
                f.push(NamedBlock {
                    module: module.clone(),
                    role: format!("dense{i}.bias"),
                    shape: vec![r],
                    data: l.bias.clone(),
                });
            }
        };
        for (id, net) in &self.robots {
            mlp_blocks(&mut f, BlockId::Robot(id.clone()).name(), net);
        }
        for (id, net) in &self.tasks {
            mlp_blocks(&mut f, BlockId::Task(id.clone()).name(), net);
        }
        for (w, v) in &self.log_stds {
            f.push(NamedBlock {
                module: BlockId::LogStd(w.clone()).name(),
                role: "log_std".into(),
                shape: vec![v.len()],
                data: v.clone(),
            });
        }
        f.push(NamedBlock {
            module: META_MODULE.into(),
            role: "interface".into(),
            shape: vec![2],
            data: vec![self.bottleneck as f64, self.dropout],
        });
        f
    }

    pub fn from_weight_file(file: &WeightFile) -> Result<Self> {
        let meta = file.find(META_MODULE, "interface")?;
        if meta.data.len() != 2 {
            return Err(Error::Corrupt("meta/interface must hold 2 values".into()));
        }
        let mut store = Self {
            robots: BTreeMap::new(),
            tasks: BTreeMap::new(),
            log_stds: BTreeMap::new(),
            bottleneck: meta.data[0] as usize,
            dropout: meta.data[1],
        };
        let mut modules: Vec<&str> = Vec::new();
        for b in &file.blocks {
            if b.module != META_MODULE && !modules.contains(&b.module.as_str()) {
                modules.push(&b.module);
            }
        }
        for name in modules {
            match BlockId::parse(name) {
                Some(BlockId::Robot(id)) => {
                    store.robots.insert(id, read_mlp(file, name)?);
                }
                Some(BlockId::Task(id)) => {
                    store.tasks.insert(id, read_mlp(file, name)?);
                }
                Some(BlockId::LogStd(w)) => {
                    store.log_stds.insert(w, file.find(name, "log_std")?.data.clone());
                }
                None => return Err(Error::Corrupt(format!("unknown module name {name:?}"))),
            }
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_weight_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_weight_file(&WeightFile::load(path)?)
    }

    /// Bitwise equality of every parameter (the derived `PartialEq` treats
    /// `0.0 == -0.0`).
    pub fn bits_eq(&self, other: &Self) -> bool {
        let a = self.to_weight_file();
        let b = other.to_weight_file();
        a.blocks.len() == b.blocks.len() && a.blocks.iter().zip(&b.blocks).all(|(x, y)| x.bits_eq(y))
    }
}

fn read_mlp(file: &WeightFile, module: &str) -> Result<Mlp> {
    let mut layers = Vec::new();
    for i in 0.. {
        let prefix = format!("dense{i}.weight.");
        let Some(w) = file.module_blocks(module).find(|b| b.role.starts_with(&prefix)) else {
            break;
        };
        let act_name = &w.role[prefix.len()..];
        let activation = Activation::from_name(act_name)
            .ok_or_else(|| Error::Corrupt(format!("{module}: unknown activation {act_name:?}")))?;
        if w.shape.len() != 2 {
            return Err(Error::Corrupt(format!("{module}/{}: weights must be 2-d", w.role)));
        }
        let bias = file.find(module, &format!("dense{i}.bias"))?;
        let weights = Matrix::from_vec(w.shape[0], w.shape[1], w.data.clone())
            .map_err(|e| Error::Corrupt(format!("{module}/{}: {e}", w.role)))?;
        layers.push(
            Layer::new(weights, bias.data.clone(), activation)
                .map_err(|e| Error::Corrupt(format!("{module}: {e}")))?,
        );
    }
    if layers.is_empty() {
        return Err(Error::MissingBlock {
            module: module.to_string(),
            role: "dense0.weight".into(),
        });
    }
    Mlp::new(layers).map_err(|e| Error::Corrupt(format!("{module}: {e}")))
}

/// Gradients summed per shared block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridGradient {
    pub blocks: BTreeMap<BlockId, Vec<f64>>,
}

impl GridGradient {
    fn add(&mut self, id: BlockId, g: &[f64]) {
        let acc = self.blocks.entry(id).or_insert_with(|| vec![0.0; g.len()]);
        for (a, v) in acc.iter_mut().zip(g) {
            *a += v;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.blocks.values_mut() {
            for x in v {
                *x *= s;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.blocks.values().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Sums each world's gradient into the blocks that world's policy uses. The
/// sum runs in the order given, so equal inputs give bitwise-equal output.
pub fn tie_and_accumulate(
    store: &ParameterStore,
    contributions: &[(World, PolicyGradient)],
) -> Result<GridGradient> {
    let mut out = GridGradient::default();
    for (w, g) in contributions {
        let r = store.robot(&w.robot)?;
        let t = store.task(&w.task)?;
        if r.num_params() != g.robot.len() || t.num_params() != g.task.len() {
            return Err(Error::shape(
                format!("gradient for world {w}"),
                format!("{} robot + {} task params", r.num_params(), t.num_params()),
                format!("{} + {}", g.robot.len(), g.task.len()),
            ));
        }
        out.add(BlockId::Robot(w.robot.clone()), &g.robot);
        out.add(BlockId::Task(w.task.clone()), &g.task);
        if store.log_stds.contains_key(w) {
            out.add(BlockId::LogStd(w.clone()), &g.log_std);
        } else if g.log_std.iter().any(|v| *v != 0.0) {
            return Err(Error::UnknownBlock(BlockId::LogStd(w.clone()).name()));
        }
    }
    Ok(out)
}

/// One optimizer state per block, created on first use.
#[derive(Debug, Clone)]
pub struct OptimizerBank {
    config: OptimizerConfig,
    states: BTreeMap<BlockId, OptimizerState>,
}

impl OptimizerBank {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            states: BTreeMap::new(),
        }
    }

    fn state_for(&mut self, id: &BlockId, n: usize) -> &mut OptimizerState {
        self.states
            .entry(id.clone())
            .or_insert_with(|| OptimizerState::new(self.config, n))
    }
}
