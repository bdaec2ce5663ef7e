use std::path::Path;

use ndarray::{Array2, Array3, Axis};

use crate::error::{Error, Result};
use crate::matrix_io::{read_matrix, write_matrix_with_comment};

/// Order-statistic index `ceil((n + 1)(1 - alpha))` (1-based). May exceed `n`.
pub fn conformal_rank(n: usize, alpha: f64) -> usize {
    let x = (n as f64 + 1.0) * (1.0 - alpha);
    // Guard against 9.000000000000002-style products rounding up.
    (x - 1e-9).ceil().max(1.0) as usize
}

/// Split-conformal quantile of nonnegative residuals. Returns the value and
/// whether the nominal rank was attainable (`rank <= n`); when it is not,
/// the maximum residual is used.
pub fn conformal_quantile(residuals: &[f64], alpha: f64) -> Result<(f64, bool)> {
    if residuals.is_empty() {
        return Err(Error::Validation("no calibration residuals".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let mut r = residuals.to_vec();
    r.sort_by(f64::total_cmp);
    let k = conformal_rank(r.len(), alpha);
    if k > r.len() {
        Ok((r[r.len() - 1], false))
    } else {
        Ok((r[k - 1], true))
    }
}

/// Per-horizon, per-node interval radii in flow units.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformalRadii {
    /// `H × N`.
    pub q: Array2<f64>,
    pub alpha: f64,
    pub n_cal: usize,
    /// Absolute residuals `n_cal × H × N` the radii were computed from.
    pub residuals: Array3<f64>,
}

impl ConformalRadii {
    pub fn from_residuals(residuals: Array3<f64>, alpha: f64) -> Result<Self> {
        let (n, h, m) = residuals.dim();
        if n == 0 {
            return Err(Error::Validation("calibration set is empty".into()));
        }
        if (n as f64) < 1.0 / alpha - 1.0 {
            log::warn!(
                "only {n} calibration windows for alpha={alpha}: nominal coverage is unattainable, using the maximum residual"
            );
        }
        let mut q = Array2::zeros((h, m));
        for k in 0..h {
            for i in 0..m {
                let col: Vec<f64> = residuals.index_axis(Axis(1), k).column(i).to_vec();
                q[[k, i]] = conformal_quantile(&col, alpha)?.0;
            }
        }
        Ok(Self {
            q,
            alpha,
            n_cal: n,
            residuals,
        })
    }

    /// Absolute residuals between matched `H × N` forecasts and truths.
    pub fn from_forecasts(pred: &[Array2<f64>], truth: &[Array2<f64>], alpha: f64) -> Result<Self> {
        if pred.len() != truth.len() || pred.is_empty() {
            return Err(Error::Validation(format!(
                "{} forecasts for {} calibration targets",
                pred.len(),
                truth.len()
            )));
        }
        let (h, m) = pred[0].dim();
        let mut res = Array3::zeros((pred.len(), h, m));
        for (t, (p, y)) in pred.iter().zip(truth).enumerate() {
            if p.dim() != (h, m) || y.dim() != (h, m) {
                return Err(Error::Validation("forecast and target shapes differ".into()));
            }
            for k in 0..h {
                for i in 0..m {
                    res[[t, k, i]] = (p[[k, i]] - y[[k, i]]).abs();
                }
            }
        }
        Self::from_residuals(res, alpha)
    }

    pub fn mean_radius(&self) -> f64 {
        self.q.mean().unwrap_or(0.0)
    }

    /// Writes `radii.csv`: a comment line with alpha and n_cal, then the
    /// `H × N` matrix with horizon rows and station columns.
    pub fn write_csv(&self, path: &Path, ids: &[String]) -> Result<()> {
        let rows: Vec<String> = (1..=self.q.nrows()).map(|k| k.to_string()).collect();
        write_matrix_with_comment(
            path,
            Some(&format!("alpha={} n_cal={}", self.alpha, self.n_cal)),
            "horizon",
            &rows,
            ids,
            &self.q,
        )
    }
}

/// Reads the radii matrix and its `alpha` / `n_cal` header.
pub fn read_radii_csv(path: &Path) -> Result<(Array2<f64>, f64, usize)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first = text.lines().next().unwrap_or_default();
    let bad = || Error::Schema {
        file: path.display().to_string(),
        message: "missing `# alpha=.. n_cal=..` header".into(),
    };
    let meta = first.strip_prefix("# ").ok_or_else(bad)?;
    let mut alpha = None;
    let mut n_cal = None;
    for part in meta.split_whitespace() {
        if let Some(v) = part.strip_prefix("alpha=") {
            alpha = v.parse::<f64>().ok();
        } else if let Some(v) = part.strip_prefix("n_cal=") {
            n_cal = v.parse::<usize>().ok();
        }
    }
    let (_, _, q) = read_matrix(path)?;
    Ok((q, alpha.ok_or_else(bad)?, n_cal.ok_or_else(bad)?))
}

/// Symmetric prediction interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Intervals {
    pub lower: Array2<f64>,
    pub upper: Array2<f64>,
}

pub fn intervals(forecast: &Array2<f64>, radii: &Array2<f64>) -> Result<Intervals> {
    if forecast.dim() != radii.dim() {
        return Err(Error::Validation(format!(
            "forecast {:?} and radii {:?} differ in shape",
            forecast.dim(),
            radii.dim()
        )));
    }
    Ok(Intervals {
        lower: forecast - radii,
        upper: forecast + radii,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn one_to_ten() -> Vec<f64> {
        (1..=10).map(f64::from).collect()
    }

    #[test]
    fn order_statistic_by_hand() {
        assert_eq!(conformal_rank(10, 0.1), 10);
        assert_eq!(conformal_quantile(&one_to_ten(), 0.1).unwrap(), (10.0, true));
        assert_eq!(conformal_rank(10, 0.5), 6);
        assert_eq!(conformal_quantile(&one_to_ten(), 0.5).unwrap(), (6.0, true));
        assert_eq!(conformal_quantile(&[0.0; 7], 0.2).unwrap().0, 0.0);
    }

    #[test]
    fn unattainable_rank_uses_maximum() {
        // n=5, alpha=0.1: rank ceil(5.4)=6 > 5.
        let (q, ok) = conformal_quantile(&[3.0, 1.0, 4.0, 1.0, 5.0], 0.1).unwrap();
        assert_eq!(q, 5.0);
        assert!(!ok);
    }

    #[test]
    fn interval_arithmetic() {
        let iv = intervals(&array![[5.0]], &array![[2.0]]).unwrap();
        assert_eq!((iv.lower[[0, 0]], iv.upper[[0, 0]]), (3.0, 7.0));
        let f = array![[1.0, 2.0], [3.0, 4.0]];
        let zero = intervals(&f, &Array2::zeros((2, 2))).unwrap();
        assert_eq!(zero.lower, f);
        assert_eq!(zero.upper, f);
        let r = array![[0.5, 1.0], [0.0, 2.5]];
        let iv = intervals(&f, &r).unwrap();
        assert_eq!(&iv.upper - &iv.lower, &r * 2.0);
    }

    #[test]
    fn radii_reproducible_from_residuals() {
        let res = Array3::from_shape_fn((30, 2, 3), |(t, k, i)| ((t * 7 + k * 3 + i) % 13) as f64 * 0.5);
        let r = ConformalRadii::from_residuals(res.clone(), 0.1).unwrap();
        let again = ConformalRadii::from_residuals(r.residuals.clone(), r.alpha).unwrap();
        assert_eq!(again.q, r.q);
        assert!(r.q.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn radii_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let res = Array3::from_shape_fn((20, 2, 2), |(t, k, i)| (t + k + i) as f64 / 3.0);
        let r = ConformalRadii::from_residuals(res, 0.1).unwrap();
        let p = dir.path().join("radii.csv");
        let ids = vec!["a".to_string(), "b".to_string()];
        r.write_csv(&p, &ids).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# alpha=0.1 n_cal=20\nhorizon,a,b\n1,"));
        let (q, alpha, n) = read_radii_csv(&p).unwrap();
        assert_eq!(q, r.q);
        assert_eq!((alpha, n), (0.1, 20));
    }

    proptest! {
        #[test]
        fn quantile_monotone_in_alpha(res in proptest::collection::vec(0.0f64..10.0, 1..60), a in 0.01f64..0.98, b in 0.01f64..0.98) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let q_lo = conformal_quantile(&res, lo).unwrap().0;
            let q_hi = conformal_quantile(&res, hi).unwrap().0;
            prop_assert!(q_hi <= q_lo);
        }
    }
}
