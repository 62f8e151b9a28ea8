//! Metrics, data splits, experiment grids and gradient checking.

pub mod experiment;
pub mod gradcheck;
pub mod metrics;

pub use experiment::{
    median, run_experiment, run_single, run_sweep, stratified_split, summarize, write_best,
    write_results, write_summary, write_sweep, ExperimentSpec, RunResult, SummaryRow, SweepRow,
};
pub use gradcheck::{gradcheck, random_graph, GradcheckOptions, GradcheckReport};
pub use metrics::{evaluate, MetricsReport, THRESHOLD};
