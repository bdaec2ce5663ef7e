//! Crash severity and hourly node/edge risk.
//!
//! Each crash gets a combined severity `s = c * r_tilde * m_weather * m_class * m_zone`
//! where every factor is a ratio against a dataset-wide mean. Severities are
//! summed per (hour, nearest station) and standardized over all 24×N cells.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

use crate::data_io::{CrashRecord, CrashTable, StationNetwork};
use crate::error::{Error, Result};
use crate::graph_prior::HOURS;

pub const EARTH_RADIUS_MILES: f64 = 3958.8;

pub fn haversine_miles(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_MILES * a.sqrt().min(1.0).asin()
}

/// Index of the nearest station; ties go to the lowest index.
pub fn map_crash_to_station(crash: &CrashRecord, net: &StationNetwork) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, s) in net.stations.iter().enumerate() {
        let d = haversine_miles(crash.lat, crash.lon, s.lat, s.lon);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Dataset statistics every per-crash factor is measured against.
#[derive(Debug, Clone, PartialEq)]
pub struct SeverityStats {
    pub c_bar: f64,
    pub r_bar: f64,
    pub weather_mean: BTreeMap<u32, f64>,
    pub class_mean: BTreeMap<u32, f64>,
    pub zone_mean: BTreeMap<u8, f64>,
    pub eps: f64,
}

/// Per-crash factors; `s` is their product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrashSeverity {
    pub station: usize,
    pub hour: usize,
    pub c: f64,
    pub r: f64,
    pub r_tilde: f64,
    pub m_w: f64,
    pub m_f: f64,
    pub m_z: f64,
    pub s: f64,
}

fn overspeed_ratio(c: &CrashRecord, eps: f64) -> f64 {
    ((c.vehicle_speed - c.speed_limit) / (c.speed_limit + eps)).max(0.0)
}

fn group_means<K: Ord + Copy>(crashes: &CrashTable, key: impl Fn(&CrashRecord) -> K) -> BTreeMap<K, f64> {
    let mut acc: BTreeMap<K, (f64, usize)> = BTreeMap::new();
    for c in &crashes.records {
        let e = acc.entry(key(c)).or_insert((0.0, 0));
        e.0 += c.clearance_min;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

impl SeverityStats {
    pub fn from_crashes(crashes: &CrashTable, eps: f64) -> Result<Self> {
        if crashes.is_empty() {
            return Err(Error::Validation("severity needs at least one crash".into()));
        }
        let n = crashes.len() as f64;
        let c_bar = crashes.records.iter().map(|c| c.clearance_min).sum::<f64>() / n;
        let r_bar = crashes.records.iter().map(|c| overspeed_ratio(c, eps)).sum::<f64>() / n;
        Ok(Self {
            c_bar,
            r_bar,
            weather_mean: group_means(crashes, |c| c.weather),
            class_mean: group_means(crashes, |c| c.functional_class),
            zone_mean: group_means(crashes, |c| c.work_zone),
            eps,
        })
    }

    /// Conditional-mean ratio; categories absent from the statistics are neutral.
    fn ratio(&self, mean: Option<&f64>) -> f64 {
        mean.map_or(1.0, |m| m / (self.c_bar + self.eps))
    }

    /// Scores one crash against fixed statistics.
    pub fn score(&self, crash: &CrashRecord, station: usize) -> CrashSeverity {
        let c = crash.clearance_min / (self.c_bar + self.eps);
        let r = overspeed_ratio(crash, self.eps);
        let r_tilde = if self.r_bar > 0.0 { r / (self.r_bar + self.eps) } else { 1.0 };
        let m_w = self.ratio(self.weather_mean.get(&crash.weather));
        let m_f = self.ratio(self.class_mean.get(&crash.functional_class));
        let m_z = self.ratio(self.zone_mean.get(&crash.work_zone));
        let mut sev = CrashSeverity {
            station,
            hour: crash.hour(),
            c,
            r,
            r_tilde,
            m_w,
            m_f,
            m_z,
            s: 0.0,
        };
        sev.s = combined_severity(&sev);
        sev
    }
}

pub fn combined_severity(f: &CrashSeverity) -> f64 {
    f.c * f.r_tilde * f.m_w * f.m_f * f.m_z
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeverityTable {
    pub crashes: Vec<CrashSeverity>,
    pub stats: SeverityStats,
}

pub fn severity_factors(crashes: &CrashTable, net: &StationNetwork, eps: f64) -> Result<SeverityTable> {
    let stats = SeverityStats::from_crashes(crashes, eps)?;
    let rows = crashes
        .records
        .iter()
        .map(|c| stats.score(c, map_crash_to_station(c, net)))
        .collect();
    Ok(SeverityTable { crashes: rows, stats })
}

pub fn write_severity_csv(path: &Path, table: &SeverityTable, net: &StationNetwork) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["crash", "station", "hour", "c", "r", "r_tilde", "m_w", "m_f", "m_z", "s"])?;
    for (k, f) in table.crashes.iter().enumerate() {
        w.write_record([
            k.to_string(),
            net.stations[f.station].id.clone(),
            f.hour.to_string(),
            f.c.to_string(),
            f.r.to_string(),
            f.r_tilde.to_string(),
            f.m_w.to_string(),
            f.m_f.to_string(),
            f.m_z.to_string(),
            f.s.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Hourly node risk and its standardized form.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskField {
    /// 24×N accumulated severity.
    pub node_risk: Array2<f64>,
    /// 24×N `(R - mu) / (sigma + eps)`.
    pub node_risk_std: Array2<f64>,
    pub mu: f64,
    pub sigma: f64,
}

impl RiskField {
    pub fn from_raw(node_risk: Array2<f64>, eps: f64) -> Self {
        let mu = node_risk.mean().unwrap_or(0.0);
        let sigma = node_risk.std(0.0);
        let node_risk_std = node_risk.mapv(|r| (r - mu) / (sigma + eps));
        Self {
            node_risk,
            node_risk_std,
            mu,
            sigma,
        }
    }

    /// Risk field of a network with no crashes.
    pub fn zeros(n: usize) -> Self {
        Self::from_raw(Array2::zeros((HOURS, n)), crate::DEFAULT_EPS)
    }

    pub fn n_nodes(&self) -> usize {
        self.node_risk.ncols()
    }

    /// Pairwise projection: sum of the two endpoints' standardized risk.
    pub fn edge_risk(&self, h: usize, i: usize, j: usize) -> f64 {
        self.node_risk_std[[h, i]] + self.node_risk_std[[h, j]]
    }
}

pub fn node_risk(sev: &SeverityTable, n_nodes: usize, eps: f64) -> Result<RiskField> {
    let mut r = Array2::zeros((HOURS, n_nodes));
    for f in &sev.crashes {
        if f.station >= n_nodes || f.hour >= HOURS {
            return Err(Error::Validation(format!(
                "crash assigned to station {} hour {} outside a {n_nodes}-station network",
                f.station, f.hour
            )));
        }
        r[[f.hour, f.station]] += f.s;
    }
    Ok(RiskField::from_raw(r, eps))
}
