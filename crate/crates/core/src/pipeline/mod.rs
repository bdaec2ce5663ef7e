//! Config-driven orchestration behind the command-line subcommands, plus
//! the in-memory synthetic benchmark.

mod benchmark;
mod config;
mod manifest;
mod stages;

pub use benchmark::{benchmark_config, run_benchmark, BenchmarkResult};
pub use config::{
    parse_hours, DataPaths, GraphConfig, OutputConfig, Overrides, RouteConfig, RouteSource, RunConfig, TrainingConfig,
};
pub use manifest::Manifest;
pub use stages::{
    adjacency_for, bank_seed, build_graph_artifacts, build_graphs, calibrate_stage, delta_stage, evaluate_stage,
    load_inputs, metric_report, model_inputs, predict_stage, risk_field, route_stage, test_forecasts, train_stage,
    training_flows, GraphArtifacts, Inputs, ModelInputs, RouteReport, RunPaths, TestForecasts, TrainSummary,
};
