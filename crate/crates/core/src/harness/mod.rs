//! Experiment grid: tasks, cross-validation, metrics and rankings.

mod cv;
mod grid;
mod metrics;
mod rank;

pub use crate::train::{early_stop, StopDecision};
pub use cv::{check_leakage, stratified_kfold, Fold};
pub use metrics::{compute_metrics, Metrics};
pub use rank::{rank_methods, Better, RankTable};
pub use grid::{run_grid, task_folds, train_single, FoldRun, write_outputs, write_rank_csv, CellReport, CellSummary, CellTiming, ExperimentReport, FoldReport, GridConfig, GridOutcome, MeanSd, Scheme, TaskCategory, TimingReport};
