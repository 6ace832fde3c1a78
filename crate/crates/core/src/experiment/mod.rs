//! Config-driven pipelines: build, simulate, add noise, resample, merge,
//! filter, compare and report.

mod config;
mod metrics;
mod run;

pub use config::{
    preset, BaselineSpec, ChannelSpec, ExcitationSpec, ExperimentConfig, FilterSpec, InputSpec, ModelSpec, NoiseSpec,
    ReportSpec, SimulationSpec, VarianceSource, PRESETS,
};
pub use metrics::{estimate_strains_from_states, median, parameter_ratio_table, rms_error_percent, StrainTrace};
pub use run::{
    build_model, resolve_channel, run_experiment, validate_config, ExperimentReport, RunOptions, SeedReport,
};
