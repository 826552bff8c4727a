//! Synthetic workloads, the end-to-end pipeline, parameter sweeps and reports.

mod pipeline;
mod report;
mod sweep;
mod workload;

pub use pipeline::{
    encode_query, evaluate, pretrain_autoencoder, run_pipeline, train_store, Method, PipelineSettings, RunPoint,
    RunReport, TaskSpec, TrainedStore, TunedPrompts, Tuning, tune_stream,
};
pub use report::{format_table, spearman, summarize, SummaryRow};
pub use sweep::{read_csv, sweep, write_csv, CsvRow, RunConfig};
pub use workload::{gen_workload, Workload, WorkloadSpec};
