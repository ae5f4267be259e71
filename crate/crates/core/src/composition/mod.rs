//! Robot modules `f_r`, task modules `g_k`, and their composition
//! `φ(o) = f_r(g_k(o_T), o_R)` into per-world Gaussian policies whose module
//! weights are shared by identity across the grid.

mod graph;
mod policy;
mod store;

pub use graph::{GraphNode, ObsSlice, PolicyGraph};
pub use policy::{
    compose, log_prob_gaussian, log_prob_grads, ComposedPolicy, PolicyCache, PolicyGradient,
};
pub use store::{
    build_robot_module, build_task_module, tie_and_accumulate, Architecture, BlockId,
    GridGradient, ModuleSpec, OptimizerBank, ParameterStore, Role,
};
