//! Training loops, evaluation, run directories and sweeps.

mod eval;
mod optim;
mod run;
mod sweep;
mod train;

pub use eval::{evaluate, perplexity, summarize, EvalRecord, EvalSummary, Evaluation};
pub use optim::{optimizer_step, OptimizerConfig, OptimizerKind, OptimizerState};
pub use run::{
    execute_run, load_splits, write_json_lines, read_eval_records, read_metrics, read_summary, reference_policy, run_po, write_run,
    CurvePoint, DataSource, RunArtifacts, RunConfig, RunSummary, Splits,
};
pub use sweep::{average_ranks, spearman, sweep, SweepEntry, SweepReport, SweepRow};
pub use train::{po_schedule, train_po, train_po_observed, train_sft, MetricsRow, PoSettings, StageConfig};
