//! Patch-token spatio-temporal encoder-decoder forecaster.
//!
//! Each node's window is cut into patch tokens and encoded over time; the
//! pooled node summaries are mixed through the hour's adjacency and encoded
//! over nodes; a decoder with one learned query per horizon step attends to
//! the concatenated temporal and spatial memory.

mod config;
mod network;

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use config::{Ablation, Activation, ModelConfig};
pub use network::{init_params, positional_encoding, spatial_mix, Net};

use crate::adjacency::row_normalize;
use crate::autodiff::{load_checkpoint, save_checkpoint, Graph, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::graph_prior::HOURS;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const SIDECAR_FILE: &str = "model.json";

/// Row-normalized adjacency for every hour of the day.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlyAdjacency {
    hours: Vec<Array2<f64>>,
}

impl HourlyAdjacency {
    /// `RowNorm(A + I)` of each adaptive matrix.
    pub fn from_adaptive(adaptive: &[Array2<f64>], eps: f64) -> Result<Self> {
        Self::from_normalized(adaptive.iter().map(|a| row_normalize(a, eps)).collect())
    }

    pub fn from_normalized(hours: Vec<Array2<f64>>) -> Result<Self> {
        if hours.len() != HOURS {
            return Err(Error::Domain(format!(
                "adjacency bank covers {} hours; all {HOURS} are required",
                hours.len()
            )));
        }
        let n = hours[0].nrows();
        if hours.iter().any(|a| a.dim() != (n, n)) {
            return Err(Error::Validation("adjacency matrices differ in size".into()));
        }
        Ok(Self { hours })
    }

    /// Identity mixing at every hour.
    pub fn identity(n: usize) -> Self {
        Self {
            hours: vec![Array2::eye(n); HOURS],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.hours[0].nrows()
    }

    pub fn hour(&self, h: usize) -> Result<&Array2<f64>> {
        self.hours
            .get(h)
            .ok_or_else(|| Error::Domain(format!("hour tag {h} outside 0..23")))
    }

    /// Stacks the matrices for a batch of hour tags into `[B, N, N]`.
    pub fn batch(&self, hours: &[usize]) -> Result<Tensor> {
        let n = self.n_nodes();
        let mut data = Vec::with_capacity(hours.len() * n * n);
        for &h in hours {
            data.extend(self.hour(h)?.iter().copied());
        }
        Tensor::new(vec![hours.len(), n, n], data)
    }
}

/// A configured model with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub n_nodes: usize,
    pub params: ParamStore,
}

/// JSON sidecar stored next to the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSidecar {
    pub config: ModelConfig,
    pub n_nodes: usize,
    pub param_count: usize,
    /// SHA-256 of the adjacency bank the model was trained against.
    pub bank_fingerprint: String,
}

impl Model {
    pub fn init(config: ModelConfig, n_nodes: usize, seed: u64) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::Config("model needs at least one node".into()));
        }
        let params = init_params(&config, n_nodes, seed)?;
        Ok(Self {
            config,
            n_nodes,
            params,
        })
    }

    fn check_input(&self, x: &Tensor, adj: &Tensor) -> Result<usize> {
        let (l, n) = (self.config.input_len, self.n_nodes);
        let xs = x.shape();
        if xs.len() != 3 || xs[1] != l || xs[2] != n {
            return Err(Error::shape("forward", format!("window {xs:?}, expected [B, {l}, {n}]")));
        }
        if adj.shape() != [xs[0], n, n] {
            return Err(Error::shape(
                "forward",
                format!("adjacency {:?}, expected [{}, {n}, {n}]", adj.shape(), xs[0]),
            ));
        }
        Ok(xs[0])
    }

    /// Eval-mode forecast for a batch: `[B, L, N]` → `[B, H, N]`.
    pub fn predict_batch(&self, x: &Tensor, adj: &Tensor) -> Result<Tensor> {
        self.check_input(x, adj)?;
        let mut g = Graph::new();
        let p = self.params.attach(&mut g);
        let xv = g.constant(x.clone());
        let av = g.constant(adj.clone());
        let net = Net {
            cfg: &self.config,
            p: &p,
        };
        let y = net.forward(&mut g, xv, av)?;
        Ok(g.value(y).clone())
    }

    /// Forecast `H × N` from one `L × N` window ending at hour `hour`.
    pub fn forward(&self, window: &Array2<f64>, hour: usize, bank: &HourlyAdjacency) -> Result<Array2<f64>> {
        let a = bank.batch(&[hour])?;
        let (l, n) = window.dim();
        let x = Tensor::new(vec![1, l, n], window.iter().copied().collect())?;
        let y = self.predict_batch(&x, &a)?;
        Ok(Array2::from_shape_vec((self.config.horizon, n), y.into_data()).expect("forecast shape"))
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    pub fn save(&self, dir: &Path, bank_fingerprint: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_checkpoint(&dir.join(CHECKPOINT_FILE), &self.params)?;
        let sidecar = ModelSidecar {
            config: self.config.clone(),
            n_nodes: self.n_nodes,
            param_count: self.param_count(),
            bank_fingerprint: bank_fingerprint.to_string(),
        };
        let path = dir.join(SIDECAR_FILE);
        let text = serde_json::to_string_pretty(&sidecar)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Loads a saved model, checking the parameter layout against a fresh
    /// initialization of the stored config.
    pub fn load(dir: &Path) -> Result<(Self, ModelSidecar)> {
        let need = |p: PathBuf| -> Result<PathBuf> {
            if p.exists() {
                Ok(p)
            } else {
                Err(Error::MissingArtifact { path: p, producer: "train" })
            }
        };
        let sc_path = need(dir.join(SIDECAR_FILE))?;
        let ck_path = need(dir.join(CHECKPOINT_FILE))?;
        let text = fs::read_to_string(&sc_path).map_err(|e| Error::io(&sc_path, e))?;
        let sidecar: ModelSidecar = serde_json::from_str(&text)?;
        let params = load_checkpoint(&ck_path)?;
        let layout = init_params(&sidecar.config, sidecar.n_nodes, 0)?;
        if layout.names() != params.names()
            || layout.tensors().iter().zip(params.tensors()).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Checkpoint(format!(
                "{} does not match the parameter layout of its config",
                ck_path.display()
            )));
        }
        if !params.all_finite() {
            return Err(Error::Checkpoint("non-finite parameter values".into()));
        }
        Ok((
            Self {
                config: sidecar.config.clone(),
                n_nodes: sidecar.n_nodes,
                params,
            },
            sidecar,
        ))
    }
}

#[cfg(test)]
mod tests;
