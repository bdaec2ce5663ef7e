use std::path::Path;

use chrono::{NaiveDateTime, Timelike};

use super::{check_header, open_csv, parse_datetime, DATETIME_OUT};
use crate::error::{Error, Result, RowIssue};

/// 1=Clear, 2=Cloudy, 3=Fog/Smog/Smoke, 4=Rain, 5=Sleet/Hail, 6=Snow,
/// 7=Severe Crosswinds, 8=Blowing Sand/Soil/Dirt/Snow, 9=Freezing Rain/Drizzle,
/// 99=Other/Unknown.
pub const WEATHER_CODES: [u32; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 99];

/// 1-2 interstates/freeways, 3 principal arterial, 4 minor arterial,
/// 5-6 collectors, 7 local roads.
pub const FUNCTIONAL_CLASS_CODES: [u32; 7] = [1, 2, 3, 4, 5, 6, 7];

#[derive(Debug, Clone, PartialEq)]
pub struct CrashRecord {
    pub when: NaiveDateTime,
    pub weather: u32,
    pub lat: f64,
    pub lon: f64,
    pub functional_class: u32,
    /// mph
    pub vehicle_speed: f64,
    /// mph
    pub speed_limit: f64,
    pub work_zone: u8,
    /// Incident clearance time, minutes.
    pub clearance_min: f64,
}

impl CrashRecord {
    pub fn hour(&self) -> usize {
        self.when.hour() as usize
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CrashTable {
    pub records: Vec<CrashRecord>,
}

impl CrashTable {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrashLoad {
    pub table: CrashTable,
    /// Rows dropped because clearance time was not positive.
    pub dropped_nonpositive_clearance: usize,
}

const CRASH_COLUMNS: [&str; 9] = [
    "datetime",
    "weather",
    "lat",
    "lon",
    "functional_class",
    "vehicle_speed",
    "speed_limit",
    "work_zone",
    "clearance_min",
];

pub fn load_crashes(path: &Path) -> Result<CrashLoad> {
    let file = path.display().to_string();
    let mut r = open_csv(path)?;
    let headers = r.headers()?.clone();
    check_header(path, &headers, &CRASH_COLUMNS)?;
    let idx: Vec<usize> = CRASH_COLUMNS
        .iter()
        .map(|c| headers.iter().position(|h| h == *c).unwrap())
        .collect();

    let mut records = Vec::new();
    let mut issues = Vec::new();
    let mut dropped = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let field = |k: usize| rec.get(idx[k]).unwrap_or("");
        match parse_row(&field) {
            Ok(Some(c)) => records.push(c),
            Ok(None) => dropped += 1,
            Err(message) => issues.push(RowIssue { row, message }),
        }
    }
    if !issues.is_empty() {
        return Err(Error::Rows { file, issues });
    }
    if dropped > 0 {
        log::warn!("{file}: dropped {dropped} crash row(s) with nonpositive clearance time");
    }
    if records.is_empty() {
        return Err(Error::Validation(format!("{file}: crash table is empty")));
    }
    Ok(CrashLoad {
        table: CrashTable { records },
        dropped_nonpositive_clearance: dropped,
    })
}

/// `Ok(None)` marks a row dropped for nonpositive clearance.
fn parse_row<'a>(field: &impl Fn(usize) -> &'a str) -> std::result::Result<Option<CrashRecord>, String> {
    let num = |k: usize, name: &str| -> std::result::Result<f64, String> {
        field(k)
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("invalid {name} {:?}", field(k)))
    };
    let code = |k: usize, name: &str, allowed: &[u32]| -> std::result::Result<u32, String> {
        field(k)
            .parse::<u32>()
            .ok()
            .filter(|c| allowed.contains(c))
            .ok_or_else(|| format!("invalid {name} code {:?}", field(k)))
    };
    let when = parse_datetime(field(0)).ok_or_else(|| format!("unparseable datetime {:?}", field(0)))?;
    let weather = code(1, "weather", &WEATHER_CODES)?;
    let lat = num(2, "lat")?;
    let lon = num(3, "lon")?;
    let functional_class = code(4, "functional_class", &FUNCTIONAL_CLASS_CODES)?;
    let vehicle_speed = num(5, "vehicle_speed")?;
    let speed_limit = num(6, "speed_limit")?;
    if speed_limit <= 0.0 {
        return Err(format!("speed_limit must be positive, got {speed_limit}"));
    }
    let work_zone = match field(7).to_ascii_uppercase().as_str() {
        "Y" | "1" => 1,
        "N" | "0" => 0,
        other => return Err(format!("invalid work_zone {other:?}")),
    };
    let clearance_min = num(8, "clearance_min")?;
    if clearance_min <= 0.0 {
        return Ok(None);
    }
    Ok(Some(CrashRecord {
        when,
        weather,
        lat,
        lon,
        functional_class,
        vehicle_speed,
        speed_limit,
        work_zone,
        clearance_min,
    }))
}

pub fn save_crashes(path: &Path, crashes: &CrashTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CRASH_COLUMNS)?;
    for c in &crashes.records {
        w.write_record([
            c.when.format(DATETIME_OUT).to_string(),
            c.weather.to_string(),
            c.lat.to_string(),
            c.lon.to_string(),
            c.functional_class.to_string(),
            c.vehicle_speed.to_string(),
            c.speed_limit.to_string(),
            if c.work_zone == 1 { "Y" } else { "N" }.to_string(),
            c.clearance_min.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "datetime,weather,lat,lon,functional_class,vehicle_speed,speed_limit,work_zone,clearance_min
11/19/2023 11:43,1,40.111327,-83.002978,1,50,65,N,67
05/16/2023 06:50,2,39.832623,-82.736814,3,40,60,N,115
06/19/2023 12:13,2,39.945520,-81.985450,1,50,50,Y,64
11/22/2023 15:25,2,39.931881,-82.907888,1,75,70,N,50
";

    fn write(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("crashes.csv");
        std::fs::write(&p, content).unwrap();
        (dir, p)
    }

    #[test]
    fn sample_rows_parse() {
        let (_d, p) = write(SAMPLE);
        let load = load_crashes(&p).unwrap();
        let first = &load.table.records[0];
        assert_eq!(first.weather, 1);
        assert_eq!(first.vehicle_speed, 50.0);
        assert_eq!(first.speed_limit, 65.0);
        assert_eq!(first.work_zone, 0);
        assert_eq!(first.clearance_min, 67.0);
        assert_eq!(first.hour(), 11);
        assert_eq!(load.table.records[2].work_zone, 1);
        assert_eq!(load.dropped_nonpositive_clearance, 0);
    }

    #[test]
    fn nonpositive_clearance_dropped_and_counted() {
        let s = format!("{SAMPLE}11/22/2023 15:25,2,39.9,-82.9,1,75,70,N,-5\n");
        let (_d, p) = write(&s);
        let load = load_crashes(&p).unwrap();
        assert_eq!(load.table.len(), 4);
        assert_eq!(load.dropped_nonpositive_clearance, 1);
    }

    #[test]
    fn bad_datetime_reported_per_row() {
        let s = format!("{SAMPLE}yesterday,2,39.9,-82.9,1,75,70,N,5\n");
        let (_d, p) = write(&s);
        match load_crashes(&p) {
            Err(Error::Rows { issues, .. }) => {
                assert_eq!(issues.len(), 1);
                assert_eq!(issues[0].row, 5);
            }
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_weather_code_rejected() {
        let s = format!("{SAMPLE}11/22/2023 15:25,42,39.9,-82.9,1,75,70,N,5\n");
        let (_d, p) = write(&s);
        assert!(matches!(load_crashes(&p), Err(Error::Rows { .. })));
    }

    #[test]
    fn empty_table_rejected() {
        let (_d, p) = write("datetime,weather,lat,lon,functional_class,vehicle_speed,speed_limit,work_zone,clearance_min\n");
        assert!(matches!(load_crashes(&p), Err(Error::Validation(_))));
    }

    #[test]
    fn round_trip() {
        let (d, p) = write(SAMPLE);
        let a = load_crashes(&p).unwrap().table;
        let p2 = d.path().join("again.csv");
        save_crashes(&p2, &a).unwrap();
        assert_eq!(load_crashes(&p2).unwrap().table, a);
    }
}
