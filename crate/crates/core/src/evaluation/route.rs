use std::path::Path;

use ndarray::Array2;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_prior::{cell_rng, lognormal_params, CvProfile, HOURS};

pub const DEFAULT_RUNS: usize = 200;

/// Mean edge times the sampler draws around.
#[derive(Debug, Clone, Copy)]
pub enum EdgeTimes<'a> {
    /// One hour-independent mean matrix.
    Prior(&'a Array2<f64>),
    /// Hour-indexed effective travel times (24 matrices).
    Hourly(&'a [Array2<f64>]),
}

impl EdgeTimes<'_> {
    fn mean(&self, h: usize, i: usize, j: usize) -> f64 {
        match self {
            EdgeTimes::Prior(m) => m[[i, j]],
            EdgeTimes::Hourly(ms) => ms[h][[i, j]],
        }
    }

    fn n_nodes(&self) -> usize {
        match self {
            EdgeTimes::Prior(m) => m.nrows(),
            EdgeTimes::Hourly(ms) => ms.first().map_or(0, |m| m.nrows()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripSummary {
    pub runs: usize,
    pub mean: f64,
    pub std: f64,
    pub p05: f64,
    pub p50: f64,
    pub p95: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripSamples {
    pub samples: Vec<f64>,
    pub summary: TripSummary,
}

fn quantile_sorted(x: &[f64], q: f64) -> f64 {
    let pos = q * (x.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    x[lo] + (x[hi] - x[lo]) * (pos - lo as f64)
}

pub fn summarize(samples: &[f64]) -> TripSummary {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let std = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    TripSummary {
        runs: samples.len(),
        mean,
        std,
        p05: quantile_sorted(&s, 0.05),
        p50: quantile_sorted(&s, 0.5),
        p95: quantile_sorted(&s, 0.95),
    }
}

/// Each run walks the route drawing one log-normal time per edge with the
/// mean of the current hour and that hour's CV; the hour advances with the
/// cumulative trip time. Run `r` uses its own seeded stream.
pub fn monte_carlo_route(
    times: EdgeTimes<'_>,
    profile: &CvProfile,
    route: &[usize],
    start_hour: usize,
    runs: usize,
    seed: u64,
) -> Result<TripSamples> {
    if route.len() < 2 {
        return Err(Error::Validation("a route needs at least two stations".into()));
    }
    if runs == 0 {
        return Err(Error::Validation("runs must be at least 1".into()));
    }
    if start_hour >= HOURS {
        return Err(Error::Domain(format!("start hour {start_hour} outside 0..23")));
    }
    if let EdgeTimes::Hourly(ms) = times {
        if ms.len() != HOURS {
            return Err(Error::Domain(format!("hourly travel times cover {} hours", ms.len())));
        }
    }
    let n = times.n_nodes();
    if let Some(bad) = route.iter().find(|&&s| s >= n) {
        return Err(Error::Validation(format!("route station index {bad} out of range for {n} stations")));
    }
    if let Some(w) = route.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Validation(format!("route repeats station {} consecutively", w[0])));
    }
    let mut samples = Vec::with_capacity(runs);
    for r in 0..runs {
        let mut rng = cell_rng(seed, r);
        let mut total: f64 = 0.0;
        for w in route.windows(2) {
            let h = (start_hour + (total / 60.0).floor() as usize) % HOURS;
            let p = lognormal_params(times.mean(h, w[0], w[1]), profile.cv[h])?;
            total += p.distribution().sample(&mut rng);
        }
        samples.push(total);
    }
    let summary = summarize(&samples);
    Ok(TripSamples { samples, summary })
}

pub fn write_trip_samples(path: &Path, samples: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["run", "minutes"])?;
    for (r, v) in samples.iter().enumerate() {
        w.write_record([r.to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
