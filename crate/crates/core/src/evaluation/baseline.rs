use ndarray::Array2;

use crate::data_io::FlowSeries;
use crate::error::{Error, Result};
use crate::graph_prior::HOURS;

/// Hour-of-day mean flow per node from the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoricalAverage {
    /// `24 × N`.
    pub by_hour: Array2<f64>,
    pub node_mean: Vec<f64>,
}

impl HistoricalAverage {
    /// Hours with no training observation fall back to the node mean.
    pub fn fit(train: &FlowSeries) -> Result<Self> {
        let (t, n) = train.values.dim();
        if t == 0 {
            return Err(Error::Validation("historical average needs training data".into()));
        }
        let mut sum = Array2::<f64>::zeros((HOURS, n));
        let mut count = [0usize; HOURS];
        for k in 0..t {
            let h = train.hour_of(k);
            count[h] += 1;
            for i in 0..n {
                sum[[h, i]] += train.values[[k, i]];
            }
        }
        let node_mean: Vec<f64> = train.values.columns().into_iter().map(|c| c.sum() / t as f64).collect();
        let by_hour = Array2::from_shape_fn((HOURS, n), |(h, i)| {
            if count[h] == 0 {
                node_mean[i]
            } else {
                sum[[h, i]] / count[h] as f64
            }
        });
        Ok(Self { by_hour, node_mean })
    }

    /// Forecast rows for the given target hours.
    pub fn forecast(&self, target_hours: &[usize]) -> Array2<f64> {
        let n = self.by_hour.ncols();
        Array2::from_shape_fn((target_hours.len(), n), |(k, i)| self.by_hour[[target_hours[k] % HOURS, i]])
    }
}
