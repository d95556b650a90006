//! Iterative hybrid training across graphs and tasks, and the isolated,
//! mixed and transfer run modes built on it.

mod modes;
mod schedule;
mod task;

pub use modes::{
    fine_tune, hybrid_pretrain, pretrain_sources, run_isolated, run_mixed, run_transfer, transfer_init,
    GraphSettings, PretrainReport, RunOutcome, RunSettings,
};
pub use schedule::{GraphPlan, Task, TaskSchedule, TaskSegment};
pub use task::{accuracy, evaluate_accuracy, with_negatives, GraphInput, Trainer};
