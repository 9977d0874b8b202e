//! Experiment orchestration: identification datasets, instrumented training
//! runs, baseline metrics, correlation summaries, sweeps, and persistence.

mod config;
mod dataset;
mod demo;
mod experiment;
mod stats;
pub mod store;

pub use config::{derive_seed, ExperimentConfig, SeedStream};
pub use dataset::{build_dataset, generate_ident_suite, make_test_inputs, DatasetMeta, IdentDataset, TestInput};
pub use demo::{demo_fig2, fig2_signals, Fig2Report};
pub use experiment::{
    collect_runs, correlate, epoch_rows, epoch_sweep, k_rows, k_sweep, run_dataset, run_experiment, CorrelationEntry,
    CorrelationRow, DatasetRecord, EpochRecord, ExperimentResult, Metric, RepetitionSummary,
    StatRow, SweepRow,
};
pub use stats::{leave_one_out_range, mean_std, pearson, pearson_or_na};
