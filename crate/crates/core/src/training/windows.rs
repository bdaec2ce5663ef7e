use std::ops::Range;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data_io::FlowSeries;
use crate::error::{Error, Result};

/// Chronological train / calibration / test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub cal: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            cal: 0.15,
            test: 0.15,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.cal, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) || self.train <= 0.0 {
            return Err(Error::Config(format!("invalid split fractions {parts:?}")));
        }
        if ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions {parts:?} do not sum to 1")));
        }
        Ok(())
    }

    /// Step ranges for a series of `t` steps. Calibration and test sizes are
    /// floored; the remainder goes to training.
    pub fn ranges(&self, t: usize) -> SplitRanges {
        let n_cal = (t as f64 * self.cal).floor() as usize;
        let n_test = (t as f64 * self.test).floor() as usize;
        let n_train = t - n_cal - n_test;
        SplitRanges {
            train: 0..n_train,
            cal: n_train..n_train + n_cal,
            test: n_train + n_cal..t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub cal: Range<usize>,
    pub test: Range<usize>,
}

/// Per-node z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    /// Mean and population std of each column, std floored at `eps`.
    pub fn fit(values: &Array2<f64>, eps: f64) -> Result<Self> {
        let t = values.nrows();
        if t == 0 {
            return Err(Error::Validation("cannot normalize an empty training split".into()));
        }
        let mut mean = Vec::with_capacity(values.ncols());
        let mut std = Vec::with_capacity(values.ncols());
        for col in values.columns() {
            let m = col.sum() / t as f64;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / t as f64;
            mean.push(m);
            std.push(var.sqrt().max(eps));
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, values: &Array2<f64>) -> Array2<f64> {
        Array2::from_shape_fn(values.dim(), |(t, i)| (values[[t, i]] - self.mean[i]) / self.std[i])
    }

    /// Maps normalized `rows × N` values back to flow units.
    pub fn invert(&self, values: &Array2<f64>) -> Array2<f64> {
        Array2::from_shape_fn(values.dim(), |(t, i)| values[[t, i]] * self.std[i] + self.mean[i])
    }
}

/// Number of stride-1 windows in a span of `len` steps.
pub fn count_windows(len: usize, input_len: usize, horizon: usize) -> usize {
    (len + 1).saturating_sub(input_len + horizon)
}

/// Sliding windows over normalized flows. A sample is identified by the
/// index of its last input step `e`: inputs `e+1-L ..= e`, targets
/// `e+1 ..= e+H`.
#[derive(Debug, Clone)]
pub struct WindowDataset {
    pub values: Array2<f64>,
    pub hours: Vec<usize>,
    pub input_len: usize,
    pub horizon: usize,
    pub norm: Normalization,
    pub splits: SplitRanges,
    pub train: Vec<usize>,
    pub cal: Vec<usize>,
    pub test: Vec<usize>,
}

fn ends_within(r: &Range<usize>, l: usize, h: usize) -> Vec<usize> {
    if r.len() + 1 < l + h {
        return Vec::new();
    }
    (r.start + l - 1..r.end - h).collect()
}

pub fn make_windows(flows: &FlowSeries, input_len: usize, horizon: usize, splits: SplitFractions, eps: f64) -> Result<WindowDataset> {
    splits.validate()?;
    if input_len == 0 || horizon == 0 {
        return Err(Error::Validation("window and horizon lengths must be positive".into()));
    }
    let t = flows.n_steps();
    if t < input_len + horizon {
        return Err(Error::Validation(format!(
            "series has {t} steps; a window needs {} (L={input_len} + H={horizon})",
            input_len + horizon
        )));
    }
    let ranges = splits.ranges(t);
    let train_vals = flows.values.slice(s![ranges.train.clone(), ..]).to_owned();
    let norm = Normalization::fit(&train_vals, eps)?;
    let values = norm.apply(&flows.values);
    let hours = (0..t).map(|k| flows.hour_of(k)).collect();
    let train = ends_within(&ranges.train, input_len, horizon);
    let cal = ends_within(&ranges.cal, input_len, horizon);
    let test = ends_within(&ranges.test, input_len, horizon);
    Ok(WindowDataset {
        values,
        hours,
        input_len,
        horizon,
        norm,
        splits: ranges,
        train,
        cal,
        test,
    })
}

impl WindowDataset {
    pub fn n_nodes(&self) -> usize {
        self.values.ncols()
    }

    /// Hour tag of the sample ending at `end`.
    pub fn hour_tag(&self, end: usize) -> usize {
        self.hours[end]
    }

    pub fn input(&self, end: usize) -> Array2<f64> {
        self.values.slice(s![end + 1 - self.input_len..=end, ..]).to_owned()
    }

    pub fn target(&self, end: usize) -> Array2<f64> {
        self.values.slice(s![end + 1..=end + self.horizon, ..]).to_owned()
    }

    /// Stacked inputs `[B, L, N]`, targets `[B, H, N]` and hour tags.
    pub fn batch(&self, ends: &[usize]) -> Result<(Tensor, Tensor, Vec<usize>)> {
        let n = self.n_nodes();
        let (l, h) = (self.input_len, self.horizon);
        let mut x = Vec::with_capacity(ends.len() * l * n);
        let mut y = Vec::with_capacity(ends.len() * h * n);
        for &e in ends {
            x.extend(self.values.slice(s![e + 1 - l..=e, ..]).iter().copied());
            y.extend(self.values.slice(s![e + 1..=e + h, ..]).iter().copied());
        }
        Ok((
            Tensor::new(vec![ends.len(), l, n], x)?,
            Tensor::new(vec![ends.len(), h, n], y)?,
            ends.iter().map(|&e| self.hours[e]).collect(),
        ))
    }
}
