use std::path::Path;

use chrono::{NaiveDateTime, Timelike};
use ndarray::Array2;

use super::{check_header, open_csv, parse_datetime, StationNetwork, DATETIME_OUT};
use crate::error::{Error, Result, RowIssue};

/// Dense T×N flow matrix on a fixed time grid; column order follows the
/// station network.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSeries {
    pub timestamps: Vec<NaiveDateTime>,
    pub values: Array2<f64>,
    pub step_minutes: u32,
}

impl FlowSeries {
    pub fn new(timestamps: Vec<NaiveDateTime>, values: Array2<f64>, step_minutes: u32) -> Result<Self> {
        if step_minutes == 0 {
            return Err(Error::Validation("step_minutes must be positive".into()));
        }
        if timestamps.len() != values.nrows() {
            return Err(Error::Validation(format!(
                "{} timestamps for {} rows",
                timestamps.len(),
                values.nrows()
            )));
        }
        let step = chrono::Duration::minutes(step_minutes as i64);
        if timestamps.windows(2).any(|w| w[1] - w[0] != step) {
            return Err(Error::Validation(format!(
                "timestamps are not equally spaced at {step_minutes} min"
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation("flows must be finite and nonnegative".into()));
        }
        Ok(Self {
            timestamps,
            values,
            step_minutes,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_nodes(&self) -> usize {
        self.values.ncols()
    }

    pub fn hour_of(&self, t: usize) -> usize {
        self.timestamps[t].hour() as usize
    }

    /// Rows `[start, end)` as a new series.
    pub fn slice(&self, start: usize, end: usize) -> FlowSeries {
        FlowSeries {
            timestamps: self.timestamps[start..end].to_vec(),
            values: self.values.slice(ndarray::s![start..end, ..]).to_owned(),
            step_minutes: self.step_minutes,
        }
    }
}

const COUNT_COLUMNS: [&str; 3] = ["timestamp", "station_id", "flow"];

/// Loads long-format counts into a dense matrix. Missing cells take the
/// previous observation of the same station; leading gaps take the
/// station's observed mean.
pub fn load_counts(path: &Path, net: &StationNetwork) -> Result<FlowSeries> {
    let file = path.display().to_string();
    let mut r = open_csv(path)?;
    let headers = r.headers()?.clone();
    check_header(path, &headers, &COUNT_COLUMNS)?;
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (c_ts, c_id, c_flow) = (col("timestamp"), col("station_id"), col("flow"));

    let mut issues = Vec::new();
    let mut obs: Vec<(NaiveDateTime, usize, f64)> = Vec::new();
    for (idx, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = idx + 1;
        let Some(ts) = parse_datetime(&rec[c_ts]) else {
            issues.push(RowIssue {
                row,
                message: format!("unparseable timestamp {:?}", &rec[c_ts]),
            });
            continue;
        };
        let id = &rec[c_id];
        let Some(station) = net.index_of(id) else {
            return Err(Error::Validation(format!("{file} row {row}: unknown station id `{id}`")));
        };
        let flow: f64 = match rec[c_flow].parse() {
            Ok(v) if f64::is_finite(v) && v >= 0.0 => v,
            _ => {
                issues.push(RowIssue {
                    row,
                    message: format!("invalid flow {:?}", &rec[c_flow]),
                });
                continue;
            }
        };
        if let Some(&(prev, _, _)) = obs.last() {
            if ts < prev {
                return Err(Error::Validation(format!(
                    "{file} row {row}: timestamp {ts} precedes {prev} (timestamps must be nondecreasing)"
                )));
            }
        }
        obs.push((ts, station, flow));
    }
    if !issues.is_empty() {
        return Err(Error::Rows { file, issues });
    }

    let mut distinct: Vec<NaiveDateTime> = obs.iter().map(|o| o.0).collect();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Validation(format!("{file}: need at least two distinct timestamps")));
    }
    let step = distinct
        .windows(2)
        .map(|w| (w[1] - w[0]).num_minutes())
        .min()
        .unwrap_or(0);
    if step <= 0 {
        return Err(Error::Validation(format!("{file}: timestamps must differ by whole minutes")));
    }
    let first = distinct[0];
    let last = *distinct.last().unwrap();
    let span = (last - first).num_minutes();
    if span % step != 0 {
        return Err(Error::Validation(format!("{file}: timestamps are not on a {step}-minute grid")));
    }
    let t_len = (span / step) as usize + 1;
    let n = net.len();
    let mut grid = vec![f64::NAN; t_len * n];
    for (ts, station, flow) in obs {
        let delta = (ts - first).num_minutes();
        if delta % step != 0 || (ts - first).num_seconds() % 60 != 0 {
            return Err(Error::Validation(format!("{file}: timestamp {ts} is off the {step}-minute grid")));
        }
        let t = (delta / step) as usize;
        let cell = &mut grid[t * n + station];
        if !cell.is_nan() {
            return Err(Error::Validation(format!(
                "{file}: duplicate reading for station `{}` at {ts}",
                net.stations[station].id
            )));
        }
        *cell = flow;
    }
    let mut values = Array2::from_shape_vec((t_len, n), grid).expect("grid shape");
    fill_gaps(&mut values, net);
    let timestamps = (0..t_len)
        .map(|t| first + chrono::Duration::minutes(step * t as i64))
        .collect();
    FlowSeries::new(timestamps, values, step as u32)
}

fn fill_gaps(values: &mut Array2<f64>, net: &StationNetwork) {
    for (j, mut col) in values.columns_mut().into_iter().enumerate() {
        let observed: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
        let mean = if observed.is_empty() {
            log::warn!("station `{}` has no flow readings; filling with 0", net.stations[j].id);
            0.0
        } else {
            observed.iter().sum::<f64>() / observed.len() as f64
        };
        let mut last = None;
        for v in col.iter_mut() {
            if v.is_nan() {
                *v = last.unwrap_or(mean);
            } else {
                last = Some(*v);
            }
        }
    }
}

pub fn save_counts(path: &Path, flows: &FlowSeries, net: &StationNetwork) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(COUNT_COLUMNS)?;
    for (t, ts) in flows.timestamps.iter().enumerate() {
        let stamp = ts.format(DATETIME_OUT).to_string();
        for (j, s) in net.stations.iter().enumerate() {
            w.write_record([stamp.as_str(), s.id.as_str(), &flows.values[[t, j]].to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
