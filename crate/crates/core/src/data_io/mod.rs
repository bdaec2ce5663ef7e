//! Input tables: stations, flow counts and crash records, plus a seeded
//! synthetic generator standing in for proprietary agency data.

mod counts;
mod crashes;
mod stations;
mod synthetic;

pub use counts::{load_counts, save_counts, FlowSeries};
pub use crashes::{
    load_crashes, save_crashes, CrashLoad, CrashRecord, CrashTable, FUNCTIONAL_CLASS_CODES,
    WEATHER_CODES,
};
pub use stations::{load_stations, save_stations, Station, StationKind, StationNetwork};
pub use synthetic::{generate_synthetic, SyntheticConfig};

use std::path::Path;

use crate::error::{Error, Result};

/// Verifies that `headers` contains every column in `expected`.
pub(crate) fn check_header(path: &Path, headers: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    for col in expected {
        if !headers.iter().any(|h| h.trim() == *col) {
            return Err(Error::Schema {
                file: path.display().to_string(),
                message: format!("missing column `{col}` (expected {})", expected.join(",")),
            });
        }
    }
    Ok(())
}

pub(crate) fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = Error::open_input(path)?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

/// Parses the timestamp formats accepted in input tables: ISO-8601
/// (`2023-11-19T11:43:00`, `2023-11-19 11:43`) and the agency style
/// `11/19/2023 11:43`.
pub fn parse_datetime(s: &str) -> Option<chrono::NaiveDateTime> {
    use chrono::NaiveDateTime;
    const FORMATS: [&str; 6] = [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%m/%d/%Y %H:%M",
        "%m/%d/%Y %H:%M:%S",
    ];
    let s = s.trim();
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| chrono::DateTime::parse_from_rfc3339(s).ok().map(|d| d.naive_local()))
}

pub(crate) const DATETIME_OUT: &str = "%Y-%m-%dT%H:%M:%S";
