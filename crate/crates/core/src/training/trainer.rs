use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conformal::ConformalRadii;
use super::windows::WindowDataset;
use crate::autodiff::{Adam, Graph, Tensor};
use crate::error::{Error, Result};
use crate::model::{HourlyAdjacency, Model, Net};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CpMode {
    /// Radii recomputed on the calibration split after every epoch.
    #[default]
    Acp,
    /// Radii computed once, on the returned checkpoint.
    Split,
}

impl std::str::FromStr for CpMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "acp" => Ok(CpMode::Acp),
            "split" => Ok(CpMode::Split),
            _ => Err(Error::Config(format!("unknown cp mode `{s}`; expected acp or split"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub alpha: f64,
    pub cp_mode: CpMode,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 20,
            patience: 10,
            alpha: 0.1,
            cp_mode: CpMode::Acp,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be a nonnegative number, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("batch_size, max_epochs and patience must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean conformal radius after this epoch (ACP only).
    pub mean_radius: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub radii: ConformalRadii,
}

/// Normalized `H × N` forecasts for the windows ending at `ends`.
pub fn predict_windows(model: &Model, data: &WindowDataset, bank: &HourlyAdjacency, ends: &[usize], batch: usize) -> Result<Vec<Array2<f64>>> {
    let (h, n) = (model.config.horizon, model.n_nodes);
    let mut out = Vec::with_capacity(ends.len());
    for chunk in ends.chunks(batch.max(1)) {
        let (x, _, hours) = data.batch(chunk)?;
        let a = bank.batch(&hours)?;
        let y = model.predict_batch(&x, &a)?;
        for s in y.data().chunks(h * n) {
            out.push(Array2::from_shape_vec((h, n), s.to_vec()).expect("forecast shape"));
        }
    }
    Ok(out)
}

/// Forecasts and truths for `ends`, both in flow units.
pub fn forecasts_in_flow_units(
    model: &Model,
    data: &WindowDataset,
    bank: &HourlyAdjacency,
    ends: &[usize],
    batch: usize,
) -> Result<(Vec<Array2<f64>>, Vec<Array2<f64>>)> {
    let pred = predict_windows(model, data, bank, ends, batch)?;
    let pred = pred.iter().map(|p| data.norm.invert(p)).collect();
    let truth = ends.iter().map(|&e| data.norm.invert(&data.target(e))).collect();
    Ok((pred, truth))
}

/// Split-conformal radii of `model` on the calibration windows.
pub fn calibrate(model: &Model, data: &WindowDataset, bank: &HourlyAdjacency, alpha: f64, batch: usize) -> Result<ConformalRadii> {
    if data.cal.is_empty() {
        return Err(Error::Validation("calibration split has no windows".into()));
    }
    let (pred, truth) = forecasts_in_flow_units(model, data, bank, &data.cal, batch)?;
    ConformalRadii::from_forecasts(&pred, &truth, alpha)
}

/// Mean squared error in normalized units together with flow-unit radii.
fn evaluate_cal(model: &Model, data: &WindowDataset, bank: &HourlyAdjacency, opts: &TrainOptions, want_radii: bool) -> Result<(f64, Option<ConformalRadii>)> {
    let pred = predict_windows(model, data, bank, &data.cal, opts.batch_size)?;
    let mut sse = 0.0;
    let mut count = 0usize;
    let mut truth = Vec::with_capacity(pred.len());
    for (p, &e) in pred.iter().zip(&data.cal) {
        let y = data.target(e);
        sse += (p - &y).mapv(|v| v * v).sum();
        count += y.len();
        truth.push(y);
    }
    let mse = sse / count as f64;
    let radii = if want_radii {
        let pf: Vec<_> = pred.iter().map(|p| data.norm.invert(p)).collect();
        let tf: Vec<_> = truth.iter().map(|y| data.norm.invert(y)).collect();
        Some(ConformalRadii::from_forecasts(&pf, &tf, opts.alpha)?)
    } else {
        None
    };
    Ok((mse, radii))
}

fn step_seed(seed: u64, step: u64) -> u64 {
    seed ^ step.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Adam on MSE with early stopping on the calibration split. Returns the
/// best-validation checkpoint.
pub fn train(mut model: Model, data: &WindowDataset, bank: &HourlyAdjacency, opts: &TrainOptions, seed: u64) -> Result<TrainOutcome> {
    opts.validate()?;
    if data.train.is_empty() {
        return Err(Error::Validation("training split has no windows".into()));
    }
    if data.cal.is_empty() {
        return Err(Error::Validation("calibration split has no windows".into()));
    }
    if bank.n_nodes() != model.n_nodes || data.n_nodes() != model.n_nodes {
        return Err(Error::Validation(format!(
            "model has {} nodes, data {}, adjacency {}",
            model.n_nodes,
            data.n_nodes(),
            bank.n_nodes()
        )));
    }
    let acp = opts.cp_mode == CpMode::Acp;
    let mut opt = Adam::new(opts.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = data.train.clone();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, crate::autodiff::ParamStore, Option<ConformalRadii>)> = None;
    let mut stale = 0usize;
    let mut step = 0u64;

    for epoch in 1..=opts.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            let (x, y, hours) = data.batch(chunk)?;
            let a = bank.batch(&hours)?;
            let mut g = Graph::with_dropout_seed(step_seed(seed, step));
            let p = model.params.attach(&mut g);
            let net = Net {
                cfg: &model.config,
                p: &p,
            };
            let xv = g.constant(x);
            let av = g.constant(a);
            let pred = net.forward(&mut g, xv, av)?;
            let loss = g.mse_loss(pred, &y)?;
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step: step as usize,
                    loss: lv,
                });
            }
            g.backward(loss)?;
            let grads: Vec<Tensor> = model.params.grads(&g, &p);
            opt.step(&mut model.params, &grads)?;
            loss_sum += lv * chunk.len() as f64;
            step += 1;
        }
        if !model.params.all_finite() {
            return Err(Error::Divergence {
                epoch,
                step: step as usize,
                loss: f64::NAN,
            });
        }
        let (val, radii) = evaluate_cal(&model, data, bank, opts, acp)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            val_loss: val,
            mean_radius: radii.as_ref().map(ConformalRadii::mean_radius),
        };
        log::info!(
            "epoch {epoch}: train {:.5} val {:.5}",
            record.train_loss,
            record.val_loss
        );
        history.push(record);
        if best.as_ref().is_none_or(|b| val < b.0) {
            best = Some((val, epoch, model.params.clone(), radii));
            stale = 0;
        } else {
            stale += 1;
            if stale >= opts.patience {
                break;
            }
        }
    }

    let (_, best_epoch, params, radii) = best.expect("at least one epoch ran");
    model.params = params;
    let radii = match radii {
        Some(r) => r,
        None => calibrate(&model, data, bank, opts.alpha, opts.batch_size)?,
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        radii,
    })
}
