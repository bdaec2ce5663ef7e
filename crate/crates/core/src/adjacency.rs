//! Incident-aware, hour-conditioned adjacency.
//!
//! Per edge, travel times across the 24 hours are correlated with the edge
//! risk series; the clipped correlation scales the risk perturbation of the
//! sampled travel time, and a Gaussian kernel on the hour-normalized
//! effective time gives the connectivity weight.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data_io::StationNetwork;
use crate::error::{Error, Result};
use crate::graph_prior::{TravelTimeBank, HOURS};
use crate::incident::RiskField;
use crate::matrix_io::{read_station_matrix, write_station_matrix};

/// Stabilizer in the row-normalization denominator. Rows of `A + I` sum to
/// at least 1, so this only needs to guard against degenerate input; it is
/// kept far below the 1e-9 row-sum tolerance.
pub const ROW_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdjacencyParams {
    pub sigma_sq: f64,
    pub rho_max: f64,
    pub eps: f64,
}

impl Default for AdjacencyParams {
    fn default() -> Self {
        Self {
            sigma_sq: 0.1,
            rho_max: 0.8,
            eps: crate::DEFAULT_EPS,
        }
    }
}

impl AdjacencyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_sq > 0.0 && self.sigma_sq.is_finite()) {
            return Err(Error::Config(format!("sigma_sq must be positive, got {}", self.sigma_sq)));
        }
        if !(0.0..=1.0).contains(&self.rho_max) {
            return Err(Error::Config(format!("rho_max must lie in [0,1], got {}", self.rho_max)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("eps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyBank {
    pub rho: Array2<f64>,
    pub t_eff: Vec<Array2<f64>>,
    pub a_raw: Vec<Array2<f64>>,
    pub a_adaptive: Vec<Array2<f64>>,
    pub params: AdjacencyParams,
}

impl AdjacencyBank {
    /// Full incident-aware construction.
    pub fn build(bank: &TravelTimeBank, field: &RiskField, net: &StationNetwork, params: AdjacencyParams) -> Result<Self> {
        params.validate()?;
        let rho = edge_correlations(bank, field, params.rho_max)?;
        Self::assemble(bank, field, net, params, rho)
    }

    /// Crash-free reference built from the same samples with `rho ≡ 0`.
    pub fn build_base(bank: &TravelTimeBank, field: &RiskField, net: &StationNetwork, params: AdjacencyParams) -> Result<Self> {
        params.validate()?;
        let n = bank.n_nodes();
        Self::assemble(bank, field, net, params, Array2::zeros((n, n)))
    }

    fn assemble(
        bank: &TravelTimeBank,
        field: &RiskField,
        net: &StationNetwork,
        params: AdjacencyParams,
        rho: Array2<f64>,
    ) -> Result<Self> {
        let t_eff = effective_travel_times(bank, &rho, field)?;
        let a_raw = kernel_adjacency(&t_eff, params.sigma_sq, params.eps)?;
        let a_adaptive = a_raw
            .iter()
            .map(|a| apply_availability(a, net))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            rho,
            t_eff,
            a_raw,
            a_adaptive,
            params,
        })
    }

    /// `RowNorm(A_adaptive^(h) + I)` for every hour.
    pub fn normalized(&self) -> Vec<Array2<f64>> {
        self.a_adaptive.iter().map(|a| row_normalize(a, ROW_NORM_EPS)).collect()
    }
}

fn check_dims(bank: &TravelTimeBank, field: &RiskField) -> Result<usize> {
    let n = bank.n_nodes();
    if field.n_nodes() != n || bank.banks.len() != HOURS || field.node_risk_std.nrows() != HOURS {
        return Err(Error::Validation(format!(
            "travel-time bank ({n} nodes, {} hours) and risk field ({} nodes) disagree",
            bank.banks.len(),
            field.n_nodes()
        )));
    }
    Ok(n)
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
    if constant(x) || constant(y) {
        return 0.0;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// Pearson correlation over the 24 hours between `T^(h)_ij` and the edge
/// risk, clipped to `[-rho_max, rho_max]`. Constant series give 0.
pub fn edge_correlations(bank: &TravelTimeBank, field: &RiskField, rho_max: f64) -> Result<Array2<f64>> {
    let n = check_dims(bank, field)?;
    let mut rho = Array2::zeros((n, n));
    let mut t = [0.0; HOURS];
    let mut r = [0.0; HOURS];
    for i in 0..n {
        for j in 0..n {
            for h in 0..HOURS {
                t[h] = bank.banks[h][[i, j]];
                r[h] = field.edge_risk(h, i, j);
            }
            rho[[i, j]] = pearson(&t, &r).clamp(-rho_max, rho_max);
        }
    }
    Ok(rho)
}

/// `T^(h) (1 + rho * R_total)`, floored at `0.01 * t_mean`.
pub fn effective_travel_times(bank: &TravelTimeBank, rho: &Array2<f64>, field: &RiskField) -> Result<Vec<Array2<f64>>> {
    let n = check_dims(bank, field)?;
    if rho.dim() != (n, n) {
        return Err(Error::Validation("rho has the wrong shape".into()));
    }
    Ok((0..HOURS)
        .map(|h| {
            Array2::from_shape_fn((n, n), |(i, j)| {
                let raw = bank.banks[h][[i, j]] * (1.0 + rho[[i, j]] * field.edge_risk(h, i, j));
                raw.max(0.01 * bank.t_mean[[i, j]])
            })
        })
        .collect())
}

/// Off-diagonal maximum of one hour's matrix.
fn off_diagonal_max(m: &Array2<f64>) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for ((i, j), v) in m.indexed_iter() {
        if i != j && *v > best {
            best = *v;
        }
    }
    best
}

pub fn kernel_hour(t_eff: &Array2<f64>, sigma_sq: f64, eps: f64) -> Array2<f64> {
    let t_max = off_diagonal_max(t_eff);
    t_eff.mapv(|t| {
        let x = t / (t_max + eps);
        (-x * x / (2.0 * sigma_sq)).exp()
    })
}

pub fn kernel_adjacency(t_eff: &[Array2<f64>], sigma_sq: f64, eps: f64) -> Result<Vec<Array2<f64>>> {
    if !(sigma_sq > 0.0) {
        return Err(Error::Domain(format!("sigma_sq must be positive, got {sigma_sq}")));
    }
    if t_eff.iter().any(|m| m.iter().any(|v| !(*v > 0.0))) {
        return Err(Error::Domain("effective travel times must be positive".into()));
    }
    Ok(t_eff.iter().map(|m| kernel_hour(m, sigma_sq, eps)).collect())
}

pub fn apply_availability(a_raw: &Array2<f64>, net: &StationNetwork) -> Result<Array2<f64>> {
    if a_raw.dim() != net.avail_mask.dim() {
        return Err(Error::Validation(format!(
            "adjacency {:?} does not match availability mask {:?}",
            a_raw.dim(),
            net.avail_mask.dim()
        )));
    }
    Ok(a_raw * &net.avail_mask)
}

/// `RowNorm(a + I)`: each row of `a + I` divided by its sum plus `eps`.
pub fn row_normalize(a: &Array2<f64>, eps: f64) -> Array2<f64> {
    let n = a.nrows();
    let mut m = a + &Array2::<f64>::eye(n);
    for mut row in m.rows_mut() {
        let s = row.sum() + eps;
        row.mapv_inplace(|v| v / s);
    }
    m
}

/// `A_crash^(h) - A_base^(h)` with the diagonal zeroed.
pub fn adjacency_delta(crash: &AdjacencyBank, base: &AdjacencyBank, h: usize) -> Result<Array2<f64>> {
    if h >= HOURS {
        return Err(Error::Domain(format!("hour {h} outside 0..23")));
    }
    if crash.a_adaptive[h].dim() != base.a_adaptive[h].dim() {
        return Err(Error::Validation("adjacency banks have different sizes".into()));
    }
    let mut d = &crash.a_adaptive[h] - &base.a_adaptive[h];
    d.diag_mut().fill(0.0);
    Ok(d)
}

pub fn adaptive_file(h: usize) -> String {
    format!("a_adaptive_h{h:02}.csv")
}

pub fn delta_file(h: usize) -> String {
    format!("delta_h{h:02}.csv")
}

/// Writes `rho.csv` and `a_adaptive_hXX.csv`.
pub fn write_adjacency_dir(dir: &Path, ids: &[String], adj: &AdjacencyBank) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_station_matrix(&dir.join("rho.csv"), ids, &adj.rho)?;
    for (h, a) in adj.a_adaptive.iter().enumerate() {
        write_station_matrix(&dir.join(adaptive_file(h)), ids, a)?;
    }
    Ok(())
}

/// Reads the 24 adaptive matrices written by [`write_adjacency_dir`].
pub fn read_adaptive(dir: &Path, ids: &[String]) -> Result<Vec<Array2<f64>>> {
    (0..HOURS)
        .map(|h| {
            let p = dir.join(adaptive_file(h));
            if !p.exists() {
                return Err(Error::MissingArtifact {
                    path: p,
                    producer: "build-graphs",
                });
            }
            read_station_matrix(&p, ids)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{Station, StationKind};
    use crate::graph_prior::CvProfile;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;

    const EPS: f64 = 1e-8;

    fn bank_from(hours: Vec<Array2<f64>>) -> TravelTimeBank {
        let n = hours[0].nrows();
        TravelTimeBank {
            t_mean: Array2::from_elem((n, n), 10.0),
            banks: hours,
            profile: CvProfile::constant(0.2).unwrap(),
            seed: 0,
            samples_per_edge: 1,
        }
    }

    fn field_from_std(z: Array2<f64>) -> RiskField {
        RiskField {
            node_risk: z.clone(),
            node_risk_std: z,
            mu: 0.0,
            sigma: 1.0,
        }
    }

    fn net(kinds: &[(StationKind, u64)]) -> StationNetwork {
        StationNetwork::new(
            kinds
                .iter()
                .enumerate()
                .map(|(i, &(kind, count_total))| Station {
                    id: format!("s{i}"),
                    lat: 40.0 + i as f64 * 0.01,
                    lon: -83.0,
                    kind,
                    count_total,
                })
                .collect(),
        )
        .unwrap()
    }

    /// Two-node fixture where edge risk follows `risk(h)` and travel time `tt(h)`.
    fn series_fixture(tt: impl Fn(usize) -> f64, risk: impl Fn(usize) -> f64) -> (TravelTimeBank, RiskField) {
        let hours = (0..HOURS).map(|h| Array2::from_elem((2, 2), tt(h))).collect();
        // Edge risk for (0,1) = z0 + z1; put it all on node 0.
        let z = Array2::from_shape_fn((HOURS, 2), |(h, i)| if i == 0 { risk(h) } else { 0.0 });
        (bank_from(hours), field_from_std(z))
    }

    #[test]
    fn perfectly_correlated_clips_to_rho_max() {
        let (b, f) = series_fixture(|h| 5.0 + h as f64, |h| 0.5 + 2.0 * h as f64);
        let rho = edge_correlations(&b, &f, 0.8).unwrap();
        assert_eq!(rho[[0, 1]], 0.8);
    }

    #[test]
    fn constant_risk_gives_zero() {
        let (b, f) = series_fixture(|h| 5.0 + h as f64, |_| 0.3);
        assert_eq!(edge_correlations(&b, &f, 0.8).unwrap()[[0, 1]], 0.0);
    }

    #[test]
    fn anti_correlated_clips_to_minus_rho_max() {
        let (b, f) = series_fixture(|h| 5.0 + h as f64, |h| -(h as f64));
        assert_eq!(edge_correlations(&b, &f, 0.8).unwrap()[[0, 1]], -0.8);
    }

    #[test]
    fn effective_time_cases() {
        let (b, f) = series_fixture(|_| 10.0, |_| 0.0);
        let zero = effective_travel_times(&b, &Array2::zeros((2, 2)), &f).unwrap();
        assert_eq!(zero, b.banks);

        let (b, f) = series_fixture(|_| 10.0, |_| 0.4);
        let rho = Array2::from_elem((2, 2), 0.5);
        assert_relative_eq!(effective_travel_times(&b, &rho, &f).unwrap()[0][[0, 1]], 12.0);

        let (b, f) = series_fixture(|_| 10.0, |_| -2.0);
        let rho = Array2::from_elem((2, 2), 0.8);
        assert_relative_eq!(effective_travel_times(&b, &rho, &f).unwrap()[0][[0, 1]], 0.1);
    }

    #[test]
    fn kernel_values() {
        let t = array![[1.0, 10.0, 5.0], [10.0, 1.0, 10.0], [5.0, 10.0, 1.0]];
        let a = kernel_hour(&t, 0.1, EPS);
        assert_relative_eq!(a[[0, 1]], (-5.0f64).exp(), max_relative = 1e-6);
        assert_relative_eq!(a[[0, 2]], (-1.25f64).exp(), max_relative = 1e-6);
        assert_relative_eq!(a[[0, 1]], 0.006_737_9, max_relative = 1e-4);
        assert_relative_eq!(a[[0, 2]], 0.286_505, max_relative = 1e-5);
        let tiny = array![[1e-9, 10.0], [10.0, 1e-9]];
        assert!(kernel_hour(&tiny, 0.1, EPS)[[0, 0]] > 1.0 - 1e-12);
    }

    #[test]
    fn availability_cases() {
        let a = Array2::from_elem((2, 2), 0.8);
        let all_ccs = net(&[(StationKind::Ccs, 0), (StationKind::Ccs, 0)]);
        assert_eq!(apply_availability(&a, &all_ccs).unwrap(), a);
        let mixed = net(&[(StationKind::Ccs, 0), (StationKind::Nccs, 50), (StationKind::Nccs, 100)]);
        let a3 = Array2::from_elem((3, 3), 0.8);
        let m = apply_availability(&a3, &mixed).unwrap();
        assert_relative_eq!(m[[0, 1]], 0.4);
        let dead = net(&[(StationKind::Ccs, 0), (StationKind::Nccs, 0)]);
        let m = apply_availability(&a, &dead).unwrap();
        assert_eq!(m.row(1).sum() + m.column(1).sum(), 0.0);
    }

    #[test]
    fn row_normalize_cases() {
        let r = row_normalize(&array![[1.0, 1.0], [0.0, 2.0]], ROW_NORM_EPS);
        assert_relative_eq!(r[[0, 0]], 2.0 / 3.0, max_relative = 1e-11);
        assert_relative_eq!(r[[0, 1]], 1.0 / 3.0, max_relative = 1e-11);
        assert_eq!(r[[1, 0]], 0.0);
        assert_relative_eq!(r[[1, 1]], 1.0, max_relative = 1e-11);
        let z = row_normalize(&Array2::zeros((3, 3)), ROW_NORM_EPS);
        for ((i, j), v) in z.indexed_iter() {
            assert_relative_eq!(*v, if i == j { 1.0 } else { 0.0 }, max_relative = 1e-7);
        }
    }

    #[test]
    fn delta_rejects_bad_hour() {
        let (b, f) = series_fixture(|h| 5.0 + h as f64, |h| h as f64);
        let n = net(&[(StationKind::Ccs, 0), (StationKind::Ccs, 0)]);
        let bank = AdjacencyBank::build(&b, &f, &n, AdjacencyParams::default()).unwrap();
        assert!(adjacency_delta(&bank, &bank, 24).is_err());
        assert!(adjacency_delta(&bank, &bank, 3).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn invalid_sigma_rejected() {
        let p = AdjacencyParams {
            sigma_sq: 0.0,
            ..Default::default()
        };
        assert!(matches!(p.validate(), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn normalized_rows_sum_to_one(vals in proptest::collection::vec(0.0f64..1.0, 16)) {
            let a = Array2::from_shape_vec((4, 4), vals).unwrap();
            let r = row_normalize(&a, ROW_NORM_EPS);
            for row in r.rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn kernel_scale_invariant(vals in proptest::collection::vec(0.5f64..50.0, 9), c in 0.1f64..10.0) {
            let t = Array2::from_shape_vec((3, 3), vals).unwrap();
            let a = kernel_hour(&t, 0.1, 0.0);
            let b = kernel_hour(&t.mapv(|v| v * c), 0.1, 0.0);
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
                prop_assert!(*x > 0.0 && *x <= 1.0);
            }
        }
    }
}
