//! Configuration, reference presets, experiment orchestration and result
//! files.

mod config;
mod experiment;
mod output;

pub use config::{load_config, parse_config, preset, random_weights, ExperimentConfig, PenaltyConfig, WeightSpec, PRESETS};
pub use experiment::{
    build_problem, resolve_alpha, run_experiment, run_single, run_variants, FinalMetrics, RunReport, VariantReport,
};
pub use output::{
    gap_plot, summarize, trace_file_name, write_outputs, write_trace_csv, Summary, VariantSummary, PLOT_FILE,
    SUMMARY_FILE,
};
