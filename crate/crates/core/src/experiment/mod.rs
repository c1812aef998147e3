//! Experiment configuration, grid orchestration and report aggregation.

mod config;
mod gen;
mod report;
mod run;

pub use config::{
    DataSplit, DatasetConfig, ExperimentConfig, ExperimentKind, FlatnessConfig, GridConfig, NetworkConfig, SplitConfig,
    CONFIG_SCHEMA_VERSION,
};
pub use gen::{generate_to, DataSpec, DataSpecKind, DATA_SPEC_SCHEMA_VERSION};
pub use report::{
    aggregate, check_compatible, collect_report_paths, format_mean_std, headline_metrics, plot_data, summarize,
    summary_csv, Aggregate, ModelOutcome, ModelResult, RunReport, SeedResult, SummaryOutput, BASELINE, MODELS, PC_ANN,
    REPORT_SCHEMA_VERSION,
};
pub use run::{grid_cells, report_file_name, run_experiment, run_grid, GridCell, RunOutcome};
