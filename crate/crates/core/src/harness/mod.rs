//! Config-driven experiments: build data, train or load the original model,
//! run each unlearning method, evaluate, persist and plot.

mod compare;
mod config;
mod plot;
mod run;

pub use compare::{
    compare_methods, table_from_reports, Cell, ComparisonRow, ComparisonTable, TABLE_HEADERS,
};
pub use config::{DatasetSpec, ExperimentConfig};
pub use plot::{emit_plots, pca_2d, PlotOptions};
pub use run::{
    aggregate_csv, mean_std, prepare_repeat, run_experiment, MethodRecord, PreparedRepeat,
    RepeatRecord, RunManifest, StageError, AGGREGATE_FILE, AGGREGATE_METRICS, CONFIG_FILE,
    MANIFEST_FILE,
};
