//! Expert supervision by iLQR on finite-difference linearizations of the
//! simulator, distillation of experts into the tied module grid, and a
//! REINFORCE alternative.

mod distill;
mod expert;
mod finetune;
mod grid;
mod ilqr;
mod reinforce;

pub use distill::{collect_dataset, collect_on_policy, dataset_loss, distill, DistillConfig, LossCurve, Sample, WorldDataset};
pub use expert::{
    controller_from_weight_file, expert_gate, inverse_kinematics, experts_to_weight_file, gate_threshold, solve_expert, unsquash,
    Expert, WorldProblem,
};
pub use finetune::{finetune_world, iterations_to_threshold, policy_error, FinetuneHyper};
pub use grid::{distill_from_experts, solve_experts, train_grid, GridRun, TrainHyper, TrainerMode};
pub use ilqr::{
    ilqr_backward, ilqr_solve, linearize_dynamics, quadratize_cost, simulate, squash, ControlProblem,
    IlqrConfig, IlqrSolution, IterationRecord, LinearDynamics, QuadCost, TVLGController,
};
pub use reinforce::{advantages, reinforce_step, ReinforceConfig};
