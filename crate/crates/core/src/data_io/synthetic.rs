use chrono::{Duration, NaiveDate, NaiveDateTime};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{CrashRecord, CrashTable, FlowSeries, Station, StationKind, StationNetwork};
use crate::error::{Error, Result};

/// Settings for the synthetic corridor. Flows follow a daily double-peak
/// profile scaled per station, perturbed by persistent (AR(1)) noise with
/// a network-wide shared component; crashes arrive as a Poisson process
/// whose rate tracks the current flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_stations: usize,
    pub days: usize,
    pub step_minutes: u32,
    pub start: NaiveDateTime,
    /// Fraction of stations that are continuous count stations.
    pub ccs_fraction: f64,
    /// Mean flow per interval at profile level 1.
    pub base_flow: f64,
    /// Stationary relative std of the multiplicative noise.
    pub noise_std: f64,
    /// Hour-scale AR(1) coefficient of the noise.
    pub noise_persistence: f64,
    /// Share of noise variance common to all stations.
    pub shared_noise: f64,
    /// Expected crashes per station-hour at the station's mean flow.
    pub crash_rate: f64,
    pub center_lat: f64,
    pub center_lon: f64,
    pub radius_miles: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_stations: 10,
            days: 60,
            step_minutes: 60,
            start: NaiveDate::from_ymd_opt(2023, 1, 2)
                .unwrap()
                .and_hms_opt(0, 0, 0)
                .unwrap(),
            ccs_fraction: 0.5,
            base_flow: 400.0,
            noise_std: 0.12,
            noise_persistence: 0.95,
            shared_noise: 0.4,
            crash_rate: 0.01,
            center_lat: 39.9612,
            center_lon: -82.9988,
            radius_miles: 15.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_stations < 2 {
            return Err(Error::Config("synthetic n_stations must be at least 2".into()));
        }
        if self.days < 2 {
            return Err(Error::Config("synthetic days must be at least 2".into()));
        }
        if self.step_minutes == 0 || 1440 % self.step_minutes != 0 {
            return Err(Error::Config("synthetic step_minutes must divide a day".into()));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.ccs_fraction) || !unit(self.shared_noise) || !(0.0..1.0).contains(&self.noise_persistence) {
            return Err(Error::Config(
                "ccs_fraction and shared_noise must lie in [0,1], noise_persistence in [0,1)".into(),
            ));
        }
        if self.base_flow <= 0.0 || self.noise_std < 0.0 || self.crash_rate < 0.0 || self.radius_miles <= 0.0 {
            return Err(Error::Config("synthetic magnitudes must be positive".into()));
        }
        Ok(())
    }
}

/// Daily double-peak shape (morning and afternoon peaks), mean ≈ 1.
fn daily_profile(hour: f64) -> f64 {
    use std::f64::consts::PI;
    1.0 - 0.45 * (2.0 * PI * hour / 24.0).cos() - 0.35 * (4.0 * PI * (hour - 1.5) / 24.0).cos()
}

pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<(StationNetwork, FlowSeries, CrashTable)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n_stations;

    // Stations scattered in a disc around the corridor centre.
    let miles_per_deg_lat = 69.0;
    let miles_per_deg_lon = 69.0 * cfg.center_lat.to_radians().cos();
    let n_ccs = ((n as f64) * cfg.ccs_fraction).round() as usize;
    let scales: Vec<f64> = (0..n).map(|_| rng.random_range(0.6..1.4)).collect();
    let mut stations: Vec<Station> = (0..n)
        .map(|i| {
            let r = cfg.radius_miles * rng.random::<f64>().sqrt();
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            Station {
                id: format!("S{i:03}"),
                lat: cfg.center_lat + r * theta.sin() / miles_per_deg_lat,
                lon: cfg.center_lon + r * theta.cos() / miles_per_deg_lon,
                kind: if i < n_ccs { StationKind::Ccs } else { StationKind::Nccs },
                count_total: 0,
            }
        })
        .collect();

    let steps_per_day = (1440 / cfg.step_minutes) as usize;
    let t_len = steps_per_day * cfg.days;
    let phi = cfg.noise_persistence.powf(cfg.step_minutes as f64 / 60.0);
    let innov = cfg.noise_std * (1.0 - phi * phi).sqrt();
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let (w_shared, w_own) = (cfg.shared_noise.sqrt(), (1.0 - cfg.shared_noise).sqrt());

    let mut noise: Vec<f64> = (0..n).map(|_| cfg.noise_std * std_normal.sample(&mut rng)).collect();
    let mut values = Array2::<f64>::zeros((t_len, n));
    let mut timestamps = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let ts = cfg.start + Duration::minutes(cfg.step_minutes as i64 * t as i64);
        timestamps.push(ts);
        let hour = (t % steps_per_day) as f64 * cfg.step_minutes as f64 / 60.0;
        let shape = daily_profile(hour);
        let common = std_normal.sample(&mut rng);
        for i in 0..n {
            if t > 0 {
                let z = w_shared * common + w_own * std_normal.sample(&mut rng);
                noise[i] = phi * noise[i] + innov * z;
            }
            let flow = cfg.base_flow * scales[i] * shape * (1.0 + noise[i]);
            values[[t, i]] = flow.max(0.0).round();
        }
    }

    for (i, s) in stations.iter_mut().enumerate() {
        s.count_total = match s.kind {
            StationKind::Ccs => values.column(i).sum() as u64,
            StationKind::Nccs => rng.random_range(500..5000),
        };
    }
    let net = StationNetwork::new(stations)?;
    let flows = FlowSeries::new(timestamps, values, cfg.step_minutes)?;
    let crashes = draw_crashes(cfg, &net, &flows, &scales, &mut rng);
    Ok((net, flows, crashes))
}

fn draw_crashes(
    cfg: &SyntheticConfig,
    net: &StationNetwork,
    flows: &FlowSeries,
    scales: &[f64],
    rng: &mut ChaCha8Rng,
) -> CrashTable {
    let mut records = Vec::new();
    if cfg.crash_rate == 0.0 {
        return CrashTable { records };
    }
    const WEATHER: [(u32, f64); 7] = [(1, 0.5), (2, 0.22), (4, 0.12), (6, 0.05), (3, 0.03), (9, 0.03), (99, 0.05)];
    const LIMITS: [f64; 4] = [45.0, 55.0, 65.0, 70.0];
    let hours_per_step = cfg.step_minutes as f64 / 60.0;
    let speed_noise = Normal::new(-2.0, 8.0).unwrap();
    let clearance = LogNormal::from_mean_cv(55.0, 0.6).unwrap();
    let jitter_deg = 0.3 / 69.0;
    for t in 0..flows.n_steps() {
        for (i, st) in net.stations.iter().enumerate() {
            let level = flows.values[[t, i]] / (cfg.base_flow * scales[i]);
            let lambda = cfg.crash_rate * level * hours_per_step;
            if lambda <= 0.0 {
                continue;
            }
            let count = Poisson::new(lambda).unwrap().sample(rng) as usize;
            for _ in 0..count {
                let minute = rng.random_range(0..cfg.step_minutes as i64);
                let mut u = rng.random::<f64>();
                let weather = WEATHER
                    .iter()
                    .find(|(_, p)| {
                        u -= p;
                        u <= 0.0
                    })
                    .map(|w| w.0)
                    .unwrap_or(99);
                let functional_class = rng.random_range(1..=7);
                let speed_limit = LIMITS[rng.random_range(0..LIMITS.len())];
                let vehicle_speed = (speed_limit + speed_noise.sample(rng)).max(5.0).round();
                let work_zone = u8::from(rng.random::<f64>() < 0.08);
                let weather_mult = match weather {
                    4 | 6 | 9 => 1.4,
                    3 => 1.2,
                    _ => 1.0,
                };
                let zone_mult = if work_zone == 1 { 1.3 } else { 1.0 };
                let class_mult = if functional_class <= 2 { 1.2 } else { 1.0 };
                let c: f64 = clearance.sample(rng) * weather_mult * zone_mult * class_mult;
                records.push(CrashRecord {
                    when: flows.timestamps[t] + Duration::minutes(minute),
                    weather,
                    lat: st.lat + rng.random_range(-jitter_deg..jitter_deg),
                    lon: st.lon + rng.random_range(-jitter_deg..jitter_deg),
                    functional_class,
                    vehicle_speed,
                    speed_limit,
                    work_zone,
                    clearance_min: c.round().max(1.0),
                });
            }
        }
    }
    CrashTable { records }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            n_stations: 4,
            days: 3,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_identical() {
        let a = generate_synthetic(&small(), 11).unwrap();
        let b = generate_synthetic(&small(), 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_synthetic(&small(), 1).unwrap();
        let b = generate_synthetic(&small(), 2).unwrap();
        assert_ne!(a.1.values, b.1.values);
    }

    #[test]
    fn zero_crash_rate_gives_empty_table() {
        let cfg = SyntheticConfig {
            crash_rate: 0.0,
            ..small()
        };
        let (_, _, crashes) = generate_synthetic(&cfg, 3).unwrap();
        assert!(crashes.is_empty());
    }

    #[test]
    fn shape_and_crash_validity() {
        let cfg = SyntheticConfig {
            crash_rate: 0.2,
            ..small()
        };
        let (net, flows, crashes) = generate_synthetic(&cfg, 5).unwrap();
        assert_eq!(net.len(), 4);
        assert_eq!(flows.values.dim(), (72, 4));
        assert!(!crashes.is_empty());
        for c in &crashes.records {
            assert!(c.clearance_min > 0.0 && c.speed_limit > 0.0);
            assert!(crate::data_io::WEATHER_CODES.contains(&c.weather));
        }
    }

    #[test]
    fn preconditions_enforced() {
        let cfg = SyntheticConfig { days: 1, ..small() };
        assert!(generate_synthetic(&cfg, 0).is_err());
        let cfg = SyntheticConfig { n_stations: 1, ..small() };
        assert!(generate_synthetic(&cfg, 0).is_err());
    }
}
