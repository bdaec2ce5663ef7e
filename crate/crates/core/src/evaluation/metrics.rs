use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// MAE and RMSE of one group of errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorPair {
    pub mae: f64,
    pub rmse: f64,
}

pub fn mae_rmse_flat(pred: &[f64], truth: &[f64]) -> Result<ErrorPair> {
    if pred.len() != truth.len() {
        return Err(Error::Validation(format!("{} predictions for {} targets", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::Validation("evaluation set is empty".into()));
    }
    let n = pred.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (p, y) in pred.iter().zip(truth) {
        abs += (p - y).abs();
        sq += (p - y).powi(2);
    }
    Ok(ErrorPair {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
    })
}

/// Per-horizon and pooled accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub mae: Vec<f64>,
    pub rmse: Vec<f64>,
    pub mae_all: f64,
    pub rmse_all: f64,
}

fn check_pairs(pred: &[Array2<f64>], truth: &[Array2<f64>]) -> Result<(usize, usize)> {
    if pred.is_empty() {
        return Err(Error::Validation("evaluation set is empty".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::Validation(format!("{} forecasts for {} targets", pred.len(), truth.len())));
    }
    let dim = pred[0].dim();
    if pred.iter().chain(truth).any(|m| m.dim() != dim) {
        return Err(Error::Validation("forecast and target shapes differ".into()));
    }
    Ok(dim)
}

/// Errors over windows of `H × N` forecasts; row `k` is horizon `k + 1`.
pub fn mae_rmse(pred: &[Array2<f64>], truth: &[Array2<f64>]) -> Result<Accuracy> {
    let (h, _) = check_pairs(pred, truth)?;
    let mut mae = Vec::with_capacity(h);
    let mut rmse = Vec::with_capacity(h);
    for k in 0..h {
        let p: Vec<f64> = pred.iter().flat_map(|m| m.row(k).to_vec()).collect();
        let y: Vec<f64> = truth.iter().flat_map(|m| m.row(k).to_vec()).collect();
        let e = mae_rmse_flat(&p, &y)?;
        mae.push(e.mae);
        rmse.push(e.rmse);
    }
    let p: Vec<f64> = pred.iter().flat_map(|m| m.iter().copied()).collect();
    let y: Vec<f64> = truth.iter().flat_map(|m| m.iter().copied()).collect();
    let all = mae_rmse_flat(&p, &y)?;
    Ok(Accuracy {
        mae,
        rmse,
        mae_all: all.mae,
        rmse_all: all.rmse,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    /// Percent of targets inside the closed interval.
    pub picp: f64,
    pub mpiw: f64,
}

pub fn picp_mpiw_flat(lower: &[f64], upper: &[f64], truth: &[f64]) -> Result<Coverage> {
    if lower.len() != upper.len() || lower.len() != truth.len() {
        return Err(Error::Validation("interval and target lengths differ".into()));
    }
    if truth.is_empty() {
        return Err(Error::Validation("evaluation set is empty".into()));
    }
    if let Some(k) = lower.iter().zip(upper).position(|(l, u)| l > u) {
        return Err(Error::Contract(format!(
            "interval {k} has lower {} > upper {}",
            lower[k], upper[k]
        )));
    }
    let n = truth.len() as f64;
    let inside = truth
        .iter()
        .zip(lower.iter().zip(upper))
        .filter(|(y, (l, u))| *l <= *y && *y <= *u)
        .count();
    let width: f64 = lower.iter().zip(upper).map(|(l, u)| u - l).sum();
    Ok(Coverage {
        picp: 100.0 * inside as f64 / n,
        mpiw: width / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalQuality {
    pub picp: Vec<f64>,
    pub mpiw: Vec<f64>,
    pub picp_all: f64,
    pub mpiw_all: f64,
}

pub fn picp_mpiw(lower: &[Array2<f64>], upper: &[Array2<f64>], truth: &[Array2<f64>]) -> Result<IntervalQuality> {
    let (h, _) = check_pairs(lower, truth)?;
    check_pairs(upper, truth)?;
    let rows = |ms: &[Array2<f64>], k: usize| -> Vec<f64> { ms.iter().flat_map(|m| m.row(k).to_vec()).collect() };
    let mut picp = Vec::with_capacity(h);
    let mut mpiw = Vec::with_capacity(h);
    for k in 0..h {
        let c = picp_mpiw_flat(&rows(lower, k), &rows(upper, k), &rows(truth, k))?;
        picp.push(c.picp);
        mpiw.push(c.mpiw);
    }
    let flat = |ms: &[Array2<f64>]| -> Vec<f64> { ms.iter().flat_map(|m| m.iter().copied()).collect() };
    let all = picp_mpiw_flat(&flat(lower), &flat(upper), &flat(truth))?;
    Ok(IntervalQuality {
        picp,
        mpiw,
        picp_all: all.picp,
        mpiw_all: all.mpiw,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub alpha: f64,
    pub horizons: usize,
    pub n_eval: usize,
    pub ablation: String,
}

/// Accuracy and interval metrics of one model, with the historical-average
/// baseline on the same windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub meta: ReportMeta,
    pub accuracy: Accuracy,
    pub intervals: IntervalQuality,
    pub baseline: Accuracy,
}

impl MetricReport {
    pub fn check(&self) -> Result<()> {
        let a = &self.accuracy;
        let ok_acc = a.mae.iter().zip(&a.rmse).all(|(m, r)| *m >= 0.0 && *r + 1e-12 >= *m);
        let ok_iv = self.intervals.picp.iter().all(|p| (0.0..=100.0).contains(p))
            && self.intervals.mpiw.iter().all(|w| *w >= 0.0);
        if ok_acc && ok_iv {
            Ok(())
        } else {
            Err(Error::Contract("metric report violates rmse >= mae >= 0 or picp/mpiw bounds".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn hand_arithmetic() {
        let e = mae_rmse_flat(&[1.0, 2.0], &[2.0, 4.0]).unwrap();
        assert_eq!(e.mae, 1.5);
        assert!((e.rmse - 2.5f64.sqrt()).abs() < 1e-15);
        let z = mae_rmse_flat(&[3.0, 4.0], &[3.0, 4.0]).unwrap();
        assert_eq!((z.mae, z.rmse), (0.0, 0.0));
        assert!(mae_rmse_flat(&[], &[]).is_err());
    }

    #[test]
    fn coverage_counts() {
        let truth = [1.0, 2.0, 3.0, 4.0, 5.0];
        let lower = [0.0, 2.0, 2.5, 3.0, 5.5];
        let upper = [1.0, 3.0, 3.5, 4.5, 6.0];
        let c = picp_mpiw_flat(&lower, &upper, &truth).unwrap();
        assert_eq!(c.picp, 80.0);
        let exact = picp_mpiw_flat(&truth, &truth, &truth).unwrap();
        assert_eq!((exact.picp, exact.mpiw), (100.0, 0.0));
        assert!(matches!(picp_mpiw_flat(&[2.0], &[1.0], &[1.5]), Err(Error::Contract(_))));
    }

    #[test]
    fn per_horizon_rows() {
        let pred = vec![array![[1.0, 1.0], [2.0, 2.0]]];
        let truth = vec![array![[1.0, 1.0], [0.0, 0.0]]];
        let a = mae_rmse(&pred, &truth).unwrap();
        assert_eq!(a.mae, vec![0.0, 2.0]);
        assert_eq!(a.mae_all, 1.0);
    }

    #[test]
    fn width_is_twice_radius_on_average() {
        let f = vec![array![[3.0, -1.0]], array![[0.0, 7.0]]];
        let q = array![[0.5, 2.0]];
        let lower: Vec<_> = f.iter().map(|m| m - &q).collect();
        let upper: Vec<_> = f.iter().map(|m| m + &q).collect();
        let iv = picp_mpiw(&lower, &upper, &f).unwrap();
        assert!((iv.mpiw_all - 2.0 * q.mean().unwrap()).abs() < 1e-12);
        assert_eq!(iv.picp_all, 100.0);
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae(p in proptest::collection::vec(-50.0f64..50.0, 1..40), shift in -3.0f64..3.0) {
            let y: Vec<f64> = p.iter().enumerate().map(|(i, v)| v + shift * (i as f64).sin()).collect();
            let e = mae_rmse_flat(&p, &y).unwrap();
            prop_assert!(e.mae >= 0.0);
            prop_assert!(e.rmse + 1e-12 >= e.mae);
        }
    }
}
