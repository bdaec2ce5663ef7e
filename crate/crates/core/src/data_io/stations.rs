use std::collections::HashSet;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{check_header, open_csv};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StationKind {
    /// Continuous count station.
    #[serde(rename = "CCS")]
    Ccs,
    /// Non-continuous count station.
    #[serde(rename = "NCCS")]
    Nccs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub kind: StationKind,
    pub count_total: u64,
}

/// Stations in file order with their data-availability scores and the
/// edge-wise reliability mask `avail_mask[i][j] = a_i * a_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationNetwork {
    pub stations: Vec<Station>,
    pub availability: Vec<f64>,
    pub avail_mask: Array2<f64>,
}

impl StationNetwork {
    pub fn new(stations: Vec<Station>) -> Result<Self> {
        if stations.len() < 2 {
            return Err(Error::Validation(format!(
                "a station network needs at least 2 stations, got {}",
                stations.len()
            )));
        }
        let mut seen = HashSet::new();
        for s in &stations {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Validation(format!("duplicate station id `{}`", s.id)));
            }
            if !(s.lat.is_finite() && s.lon.is_finite()) {
                return Err(Error::Validation(format!("station `{}` has non-finite coordinates", s.id)));
            }
        }
        let availability = availability_scores(&stations);
        let n = stations.len();
        let avail_mask = Array2::from_shape_fn((n, n), |(i, j)| availability[i] * availability[j]);
        Ok(Self {
            stations,
            availability,
            avail_mask,
        })
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.stations.iter().map(|s| s.id.clone()).collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.stations.iter().position(|s| s.id == id)
    }
}

/// CCS stations score 1; N-CCS stations score their count relative to the
/// largest N-CCS count, or 0 when every N-CCS count is zero.
fn availability_scores(stations: &[Station]) -> Vec<f64> {
    let max_nccs = stations
        .iter()
        .filter(|s| s.kind == StationKind::Nccs)
        .map(|s| s.count_total)
        .max()
        .unwrap_or(0);
    stations
        .iter()
        .map(|s| match s.kind {
            StationKind::Ccs => 1.0,
            StationKind::Nccs if max_nccs == 0 => 0.0,
            StationKind::Nccs => s.count_total as f64 / max_nccs as f64,
        })
        .collect()
}

const STATION_COLUMNS: [&str; 5] = ["id", "lat", "lon", "kind", "count_total"];

pub fn load_stations(path: &Path) -> Result<StationNetwork> {
    let mut r = open_csv(path)?;
    check_header(path, r.headers()?, &STATION_COLUMNS)?;
    let mut stations = Vec::new();
    for rec in r.deserialize::<Station>() {
        stations.push(rec.map_err(|e| Error::Schema {
            file: path.display().to_string(),
            message: e.to_string(),
        })?);
    }
    StationNetwork::new(stations)
}

pub fn save_stations(path: &Path, net: &StationNetwork) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in &net.stations {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
