//! Experiment orchestration, reports and persistence.

mod config;
mod experiment;
mod format;
mod report;

pub use config::{EvalSettings, ExperimentConfig, Holdout};
pub use experiment::{
    ablate_regularization, dump_trajectories, eval_initials, export_experts, finetune_from_composition, load_store,
    mean_std, run_baselines, run_zeroshot, train, train_to_dir, write_ablation, write_report, Baselines, RunDir,
    ABLATION_RATES, ABLATION_WIDTHS, METRIC_WINDOW,
};
pub use format::fmt_float;
pub use report::{
    ablation_csv, append_finetune_rows, finetune_csv, loss_curve_csv, zeroshot_csv, AblationCell, Csv, EvalReport,
    EvalRow, LearningCurve, Variant, ABLATION_HEADER, FINETUNE_HEADER, ZEROSHOT_HEADER,
};
