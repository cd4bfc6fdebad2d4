//! Experiment orchestration: configs, runs, sweeps and reports.

mod config;
mod report;
mod run;
mod sweep;

pub use config::{merge_json, ExperimentConfig};
pub use run::{
    iter_dir, metrics_csv, regenerate_metrics, run_experiment, Data, IterationRecord, RunRecord,
};
pub use sweep::{data_root, load_data, run_sweep, CellResult, Grid};
pub use report::{
    inspect_mask, report, select_runs, test_labels, LoadedRun, ReportKind, ReportOptions,
};
