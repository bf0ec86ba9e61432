//! Gradual-sparsity pruning: schedules, the staged loop, seeded tasks and
//! LR-vs-EWR comparisons.

mod compare;
mod schedule;
mod swap;
mod task;

pub use compare::{
    compare_lr_ewr, diff_percent, mean_ci, run_seed, sign_test_p_value, sweep_epsilon, AggregateRow, CompareReport,
    EpsilonSetting, SeedFailure, SeedRow, StageOutcome, SweepReport, SweepRow, SweepSeedRow, DEFAULT_CONFIDENCE,
    DIFF_FORMULA,
};
pub use schedule::{ScheduleKind, ScheduleSpec, SparsitySchedule};
pub use swap::{
    solve_plan, step_scale, swap_prune, swap_prune_traced, GradientSource, PlanStats, PruneResult, StageEval,
    StageRecord, TrajectoryHook,
};
pub use task::{stage_seed, DataSpec, MlpGradientSource, PreparedTask, SeedPlan, TaskSpec};
