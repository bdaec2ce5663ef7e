use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::stages::{build_graph_artifacts, load_inputs, metric_report, test_forecasts};
use crate::adjacency::ROW_NORM_EPS;
use crate::data_io::SyntheticConfig;
use crate::error::Result;
use crate::evaluation::MetricReport;
use crate::model::{Ablation, HourlyAdjacency, Model, ModelConfig};
use crate::seed;
use crate::training::{make_windows, train};

/// The synthetic benchmark: 10 stations, 60 days hourly, 24-step input,
/// 4-step horizon, alpha 0.1, with a model small enough to train in
/// seconds on one core.
pub fn benchmark_config(seed: u64, ablation: Ablation) -> RunConfig {
    let mut cfg = RunConfig {
        seed,
        synthetic: Some(SyntheticConfig::default()),
        ..Default::default()
    };
    cfg.model = ModelConfig {
        input_len: 24,
        horizon: 4,
        patch_len: 6,
        d_model: 16,
        heads: 2,
        temporal_depth: 1,
        spatial_depth: 1,
        ffn_mult: 2,
        dropout: 0.0,
        ablation,
        ..ModelConfig::default()
    };
    let o = &mut cfg.training.options;
    o.lr = 3e-3;
    o.batch_size = 32;
    o.max_epochs = 20;
    o.patience = 10;
    o.alpha = 0.1;
    cfg
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub report: MetricReport,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub n_cal: usize,
}

impl BenchmarkResult {
    pub fn mae_1h(&self) -> f64 {
        self.report.accuracy.mae[0]
    }

    pub fn ha_mae_1h(&self) -> f64 {
        self.report.baseline.mae[0]
    }

    pub fn picp(&self) -> f64 {
        self.report.intervals.picp_all
    }

    /// MAE never decreases from one horizon to the next.
    pub fn mae_nondecreasing(&self) -> bool {
        self.report.accuracy.mae.windows(2).all(|w| w[1] >= w[0])
    }
}

/// Runs the whole pipeline in memory: data, graphs, training with
/// calibration, and test-split evaluation.
pub fn run_benchmark(cfg: &RunConfig) -> Result<BenchmarkResult> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    let art = build_graph_artifacts(cfg, &inputs)?;
    let adj = HourlyAdjacency::from_adaptive(&art.adjacency.a_adaptive, ROW_NORM_EPS)?;
    let data = make_windows(
        &inputs.flows,
        cfg.model.input_len,
        cfg.model.horizon,
        cfg.training.splits,
        cfg.graph.eps,
    )?;
    let model = Model::init(cfg.model.clone(), inputs.net.len(), seed::derive(cfg.seed, "model-init"))?;
    let out = train(model, &data, &adj, &cfg.training.options, seed::derive(cfg.seed, "train"))?;
    let f = test_forecasts(&out.model, &data, &adj, &out.radii.q, cfg.training.options.batch_size)?;
    let report = metric_report(cfg, &inputs.flows, &data, &f)?;
    Ok(BenchmarkResult {
        report,
        best_epoch: out.best_epoch,
        epochs_run: out.history.len(),
        n_cal: out.radii.n_cal,
    })
}
