//! Hour-of-day CV profile and the log-normal travel-time bank.
//!
//! For every hour `h` and station pair `(i, j)` the travel time is modelled
//! as `LogNormal(mu, sigma)` with `sigma = sqrt(ln(cv(h)^2 + 1))` and
//! `mu = ln(t_mean) - sigma^2 / 2`, so the distribution mean is exactly
//! `t_mean` and its coefficient of variation is `cv(h)`.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::data_io::{FlowSeries, StationNetwork};
use crate::error::{Error, Result};
use crate::incident::haversine_miles;
use crate::matrix_io::{read_station_matrix, write_station_matrix};

pub const HOURS: usize = 24;
pub const CV_MIN: f64 = 0.1;
pub const CV_MAX: f64 = 1.0;
/// Self travel time on the diagonal, minutes.
pub const SELF_TIME_MIN: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvProfile {
    pub cv: [f64; HOURS],
}

impl CvProfile {
    pub fn new(cv: [f64; HOURS]) -> Result<Self> {
        if cv.iter().any(|c| !(CV_MIN..=CV_MAX).contains(c)) {
            return Err(Error::Domain(format!("CV profile values must lie in [{CV_MIN}, {CV_MAX}]")));
        }
        Ok(Self { cv })
    }

    pub fn constant(cv: f64) -> Result<Self> {
        Self::new([cv; HOURS])
    }
}

/// Pools every reading taken at hour `h` (all days, all stations) and uses
/// population std / mean, clipped into `[0.1, 1.0]`.
pub fn estimate_cv_profile(flows: &FlowSeries) -> Result<CvProfile> {
    let days: BTreeSet<_> = flows.timestamps.iter().map(|t| t.date()).collect();
    if days.len() < 2 {
        return Err(Error::Validation(format!(
            "CV estimation needs flows spanning at least 2 days, got {}",
            days.len()
        )));
    }
    let mut pooled: Vec<Vec<f64>> = vec![Vec::new(); HOURS];
    for (t, row) in flows.values.rows().into_iter().enumerate() {
        pooled[flows.hour_of(t)].extend(row.iter().copied());
    }
    let mut cv = [CV_MIN; HOURS];
    for (h, values) in pooled.iter_mut().enumerate() {
        // Sorting makes the sums independent of station order.
        values.sort_by(f64::total_cmp);
        if values.is_empty() {
            log::warn!("no flow readings at hour {h}; CV set to {CV_MIN}");
            continue;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        if mean <= 0.0 {
            log::warn!("zero mean flow at hour {h}; CV set to {CV_MIN}");
            continue;
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        cv[h] = (var.sqrt() / mean).clamp(CV_MIN, CV_MAX);
    }
    CvProfile::new(cv)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormalParams {
    pub mu_ln: f64,
    pub sigma_ln: f64,
}

impl LogNormalParams {
    pub fn mean(&self) -> f64 {
        (self.mu_ln + 0.5 * self.sigma_ln * self.sigma_ln).exp()
    }

    pub fn distribution(&self) -> LogNormal<f64> {
        LogNormal::new(self.mu_ln, self.sigma_ln).expect("finite log-normal parameters")
    }
}

pub fn lognormal_params(t_mean: f64, cv: f64) -> Result<LogNormalParams> {
    if !(t_mean > 0.0 && t_mean.is_finite()) || !(cv > 0.0 && cv.is_finite()) {
        return Err(Error::Domain(format!(
            "log-normal parameters need positive mean and cv, got mean={t_mean}, cv={cv}"
        )));
    }
    let sigma_ln = (cv * cv).ln_1p().sqrt();
    let mu_ln = t_mean.ln() - 0.5 * sigma_ln * sigma_ln;
    Ok(LogNormalParams { mu_ln, sigma_ln })
}

/// Distance-derived mean travel times in minutes. Entries from `overrides`
/// (`from_id,to_id,minutes`) replace the computed values.
pub fn baseline_travel_times(net: &StationNetwork, speed_mph: f64, overrides: Option<&Path>) -> Result<Array2<f64>> {
    if !(speed_mph > 0.0 && speed_mph.is_finite()) {
        return Err(Error::Domain(format!("speed must be positive, got {speed_mph}")));
    }
    let n = net.len();
    let mut t = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            SELF_TIME_MIN
        } else {
            let (a, b) = (&net.stations[i], &net.stations[j]);
            haversine_miles(a.lat, a.lon, b.lat, b.lon) / speed_mph * 60.0
        }
    });
    // Co-located stations still need a positive time for the log-normal.
    t.mapv_inplace(|v| v.max(SELF_TIME_MIN));
    if let Some(path) = overrides {
        apply_overrides(&mut t, net, path)?;
    }
    Ok(t)
}

fn apply_overrides(t: &mut Array2<f64>, net: &StationNetwork, path: &Path) -> Result<()> {
    let file = Error::open_input(path)?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    crate::data_io::check_header(path, r.headers()?, &["from_id", "to_id", "minutes"])?;
    #[derive(Deserialize)]
    struct Row {
        from_id: String,
        to_id: String,
        minutes: f64,
    }
    for (k, row) in r.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::Schema {
            file: path.display().to_string(),
            message: e.to_string(),
        })?;
        let lookup = |id: &str| {
            net.index_of(id).ok_or_else(|| {
                Error::Validation(format!("{} row {}: unknown station `{id}`", path.display(), k + 1))
            })
        };
        let (i, j) = (lookup(&row.from_id)?, lookup(&row.to_id)?);
        if !(row.minutes > 0.0 && row.minutes.is_finite()) {
            return Err(Error::Validation(format!(
                "{} row {}: travel time must be positive",
                path.display(),
                k + 1
            )));
        }
        t[[i, j]] = row.minutes;
    }
    Ok(())
}

/// The 24 hour-indexed sampled travel-time matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct TravelTimeBank {
    pub t_mean: Array2<f64>,
    pub banks: Vec<Array2<f64>>,
    pub profile: CvProfile,
    pub seed: u64,
    pub samples_per_edge: usize,
}

impl TravelTimeBank {
    pub fn n_nodes(&self) -> usize {
        self.t_mean.nrows()
    }
}

/// Each `(h, i, j)` cell owns its own ChaCha stream, so the bank does not
/// depend on iteration order.
pub fn sample_bank(t_mean: &Array2<f64>, profile: &CvProfile, seed: u64, k: usize) -> Result<TravelTimeBank> {
    if k == 0 {
        return Err(Error::Domain("samples_per_edge must be at least 1".into()));
    }
    let n = t_mean.nrows();
    if t_mean.ncols() != n {
        return Err(Error::Validation("t_mean must be square".into()));
    }
    let mut banks = Vec::with_capacity(HOURS);
    for h in 0..HOURS {
        let mut m = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let dist = lognormal_params(t_mean[[i, j]], profile.cv[h])?.distribution();
                let mut rng = cell_rng(seed, (h * n + i) * n + j);
                let total: f64 = (0..k).map(|_| dist.sample(&mut rng)).sum();
                m[[i, j]] = total / k as f64;
            }
        }
        banks.push(m);
    }
    Ok(TravelTimeBank {
        t_mean: t_mean.clone(),
        banks,
        profile: profile.clone(),
        seed,
        samples_per_edge: k,
    })
}

pub(crate) fn cell_rng(seed: u64, stream: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Serialize, Deserialize)]
struct BankMeta {
    seed: u64,
    samples_per_edge: usize,
    cv: Vec<f64>,
}

pub fn bank_file(h: usize) -> String {
    format!("bank_h{h:02}.csv")
}

pub fn write_bank_dir(dir: &Path, ids: &[String], bank: &TravelTimeBank) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_station_matrix(&dir.join("t_mean.csv"), ids, &bank.t_mean)?;
    for (h, m) in bank.banks.iter().enumerate() {
        write_station_matrix(&dir.join(bank_file(h)), ids, m)?;
    }
    let meta = BankMeta {
        seed: bank.seed,
        samples_per_edge: bank.samples_per_edge,
        cv: bank.profile.cv.to_vec(),
    };
    let path = dir.join("meta.json");
    fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_bank_dir(dir: &Path, ids: &[String]) -> Result<TravelTimeBank> {
    let path = dir.join("meta.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: BankMeta = serde_json::from_str(&text)?;
    let cv: [f64; HOURS] = meta
        .cv
        .try_into()
        .map_err(|_| Error::Validation(format!("{}: cv must have 24 entries", path.display())))?;
    let t_mean = read_station_matrix(&dir.join("t_mean.csv"), ids)?;
    let banks = (0..HOURS)
        .map(|h| read_station_matrix(&dir.join(bank_file(h)), ids))
        .collect::<Result<Vec<_>>>()?;
    Ok(TravelTimeBank {
        t_mean,
        banks,
        profile: CvProfile::new(cv)?,
        seed: meta.seed,
        samples_per_edge: meta.samples_per_edge,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{Station, StationKind};
    use approx::assert_relative_eq;
    use chrono::{Duration, NaiveDate};
    use proptest::prelude::*;

    fn series(days: usize, f: impl Fn(usize, usize) -> f64, n: usize) -> FlowSeries {
        let start = NaiveDate::from_ymd_opt(2023, 3, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let t_len = days * 24;
        let ts = (0..t_len).map(|t| start + Duration::hours(t as i64)).collect();
        let values = Array2::from_shape_fn((t_len, n), |(t, i)| f(t, i));
        FlowSeries::new(ts, values, 60).unwrap()
    }

    #[test]
    fn constant_flows_clip_to_floor() {
        let p = estimate_cv_profile(&series(3, |_, _| 50.0, 2)).unwrap();
        assert!(p.cv.iter().all(|&c| c == CV_MIN));
    }

    #[test]
    fn pooled_pair_gives_half() {
        // Two days, one station: readings 10 then 30 at every hour.
        let p = estimate_cv_profile(&series(2, |t, _| if t < 24 { 10.0 } else { 30.0 }, 1)).unwrap();
        for c in p.cv {
            assert_relative_eq!(c, 0.5, max_relative = 1e-12);
        }
    }

    #[test]
    fn large_dispersion_clips_to_one() {
        let p = estimate_cv_profile(&series(2, |t, _| if t < 24 { 0.0 } else { 100.0 }, 1)).unwrap();
        assert!(p.cv.iter().all(|&c| c == CV_MAX));
    }

    #[test]
    fn zero_mean_hour_floors() {
        let p = estimate_cv_profile(&series(2, |t, _| if t % 24 == 3 { 0.0 } else { 5.0 + (t % 7) as f64 }, 1)).unwrap();
        assert_eq!(p.cv[3], CV_MIN);
    }

    #[test]
    fn single_day_rejected() {
        assert!(estimate_cv_profile(&series(1, |_, _| 1.0, 2)).is_err());
    }

    #[test]
    fn cv_invariant_to_station_order() {
        let a = series(3, |t, i| ((t * 7 + i * 13) % 17) as f64 + 1.0, 3);
        let mut b = a.clone();
        b.values = a.values.select(ndarray::Axis(1), &[2, 0, 1]);
        assert_eq!(estimate_cv_profile(&a).unwrap(), estimate_cv_profile(&b).unwrap());
    }

    #[test]
    fn sigma_for_half_cv() {
        // sqrt(ln 1.25) = 0.4723807...
        let p = lognormal_params(1.0, 0.5).unwrap();
        assert_relative_eq!(p.sigma_ln, 0.472_380_727_077_439, max_relative = 1e-12);
        assert_relative_eq!(p.mu_ln, -0.5 * p.sigma_ln * p.sigma_ln, max_relative = 1e-15);
    }

    #[test]
    fn mu_for_ten_minutes() {
        let p = lognormal_params(10.0, 0.5).unwrap();
        // ln 10 - ln(1.25)/2
        assert_relative_eq!(p.mu_ln, 2.191_013_317_336_941, max_relative = 1e-12);
        assert!((p.mu_ln - 2.191013).abs() < 5e-7);
    }

    #[test]
    fn nonpositive_inputs_rejected() {
        assert!(lognormal_params(0.0, 0.5).is_err());
        assert!(lognormal_params(1.0, -0.1).is_err());
    }

    fn two_station_net(lat2: f64) -> StationNetwork {
        let mk = |id: &str, lat: f64| Station {
            id: id.into(),
            lat,
            lon: 0.0,
            kind: StationKind::Ccs,
            count_total: 0,
        };
        StationNetwork::new(vec![mk("a", 0.0), mk("b", lat2)]).unwrap()
    }

    #[test]
    fn baseline_distance_over_speed() {
        // 50 miles along a meridian.
        let lat2 = (50.0 / crate::incident::EARTH_RADIUS_MILES).to_degrees();
        let t = baseline_travel_times(&two_station_net(lat2), 50.0, None).unwrap();
        assert_relative_eq!(t[[0, 1]], 60.0, max_relative = 1e-9);
        assert_eq!(t[[0, 0]], SELF_TIME_MIN);
    }

    #[test]
    fn override_wins_and_unknown_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ov.csv");
        std::fs::write(&p, "from_id,to_id,minutes\na,b,12.0\n").unwrap();
        let net = two_station_net(0.5);
        let t = baseline_travel_times(&net, 50.0, Some(&p)).unwrap();
        assert_eq!(t[[0, 1]], 12.0);
        std::fs::write(&p, "from_id,to_id,minutes\na,zz,12.0\n").unwrap();
        assert!(matches!(baseline_travel_times(&net, 50.0, Some(&p)), Err(Error::Validation(_))));
    }

    #[test]
    fn bank_mean_close_to_target_at_floor_cv() {
        let t = Array2::from_elem((2, 2), 20.0);
        let bank = sample_bank(&t, &CvProfile::constant(0.1).unwrap(), 9, 10_000).unwrap();
        for m in &bank.banks {
            for v in m.iter() {
                assert!((v / 20.0 - 1.0).abs() < 0.01, "{v}");
            }
        }
    }

    #[test]
    fn bank_deterministic_and_seed_sensitive() {
        let t = Array2::from_elem((3, 3), 5.0);
        let prof = CvProfile::constant(0.4).unwrap();
        let a = sample_bank(&t, &prof, 1, 4).unwrap();
        assert_eq!(a, sample_bank(&t, &prof, 1, 4).unwrap());
        assert_ne!(a.banks, sample_bank(&t, &prof, 2, 4).unwrap().banks);
    }

    #[test]
    fn higher_cv_hour_more_dispersed() {
        let mut cv = [0.1; HOURS];
        cv[5] = 0.9;
        let prof = CvProfile::new(cv).unwrap();
        let t = Array2::from_elem((30, 30), 10.0);
        let bank = sample_bank(&t, &prof, 3, 1).unwrap();
        let disp = |m: &Array2<f64>| {
            let mean = m.mean().unwrap();
            m.std(0.0) / mean
        };
        assert!(disp(&bank.banks[5]) > disp(&bank.banks[0]));
    }

    #[test]
    fn bank_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = Array2::from_elem((2, 2), 5.0);
        let bank = sample_bank(&t, &CvProfile::constant(0.3).unwrap(), 4, 2).unwrap();
        let ids = vec!["a".to_string(), "b".to_string()];
        write_bank_dir(dir.path(), &ids, &bank).unwrap();
        assert_eq!(read_bank_dir(dir.path(), &ids).unwrap(), bank);
    }

    proptest! {
        #[test]
        fn analytic_mean_preserved(t in 0.1f64..500.0, cv in 0.1f64..=1.0) {
            let p = lognormal_params(t, cv).unwrap();
            prop_assert!((p.mean() / t - 1.0).abs() < 1e-12);
        }
    }
}
