//! Classification metrics, leave-one-group-out experiment driver, seed
//! aggregation with Student-t intervals, ablations and report files.

mod aggregate;
mod metrics;
mod protocol;
mod report;

pub use aggregate::{aggregate_seeds, t_quantile, SeedAggregate};
pub use metrics::{accuracy, f1, precision, recall, roc_auc, threshold, Confusion, FoldMetrics, METRIC_NAMES, THRESHOLD};
pub use protocol::{run_ablation, run_protocol, AblationConfig, ModelOptions, Protocol, RunConfig};
pub(crate) use protocol::{prepare_all, run_grid};
pub use report::{
    emit_report, read_aggregate, read_perfold, render_svg, write_aggregate, write_perfold, AggregateRow, FoldResult,
    MetricsReport, SMALL_COHORT,
};
