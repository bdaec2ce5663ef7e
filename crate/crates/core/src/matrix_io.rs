//! Labelled matrix CSV files: a header row `<corner>,<col ids...>` followed by
//! one row per label. Values are written with Rust's shortest round-trip
//! float formatting so a write/read cycle is bit-exact.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn write_matrix(
    path: &Path,
    corner: &str,
    row_labels: &[String],
    col_labels: &[String],
    m: &Array2<f64>,
) -> Result<()> {
    write_matrix_with_comment(path, None, corner, row_labels, col_labels, m)
}

/// As [`write_matrix`], with an optional leading `# comment` line.
pub fn write_matrix_with_comment(
    path: &Path,
    comment: Option<&str>,
    corner: &str,
    row_labels: &[String],
    col_labels: &[String],
    m: &Array2<f64>,
) -> Result<()> {
    if m.nrows() != row_labels.len() || m.ncols() != col_labels.len() {
        return Err(Error::Validation(format!(
            "matrix {}x{} does not match {} row / {} column labels",
            m.nrows(),
            m.ncols(),
            row_labels.len(),
            col_labels.len()
        )));
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    if let Some(c) = comment {
        use std::io::Write;
        writeln!(file, "# {c}").map_err(|e| Error::io(path, e))?;
    }
    let mut w = csv::Writer::from_writer(file);
    let mut header = Vec::with_capacity(col_labels.len() + 1);
    header.push(corner.to_string());
    header.extend(col_labels.iter().cloned());
    w.write_record(&header)?;
    for (label, row) in row_labels.iter().zip(m.rows()) {
        let mut rec = Vec::with_capacity(row.len() + 1);
        rec.push(label.clone());
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Square station matrix with identical row and column labels.
pub fn write_station_matrix(path: &Path, ids: &[String], m: &Array2<f64>) -> Result<()> {
    write_matrix(path, "station", ids, ids, m)
}

/// Reads a labelled matrix, returning (row labels, column labels, values).
pub fn read_matrix(path: &Path) -> Result<(Vec<String>, Vec<String>, Array2<f64>)> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    let file = path.display().to_string();
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = r.headers()?.clone();
    let cols: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    let mut data = Vec::new();
    for (idx, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != cols.len() + 1 {
            return Err(Error::Schema {
                file,
                message: format!("row {} has {} fields, expected {}", idx + 1, rec.len(), cols.len() + 1),
            });
        }
        rows.push(rec[0].to_string());
        for v in rec.iter().skip(1) {
            let x: f64 = v.trim().parse().map_err(|_| Error::Schema {
                file: file.clone(),
                message: format!("row {}: not a number: {v:?}", idx + 1),
            })?;
            data.push(x);
        }
    }
    let m = Array2::from_shape_vec((rows.len(), cols.len()), data)
        .map_err(|e| Error::Validation(e.to_string()))?;
    Ok((rows, cols, m))
}

/// Reads a square matrix and checks its labels against `ids`.
pub fn read_station_matrix(path: &Path, ids: &[String]) -> Result<Array2<f64>> {
    let (rows, cols, m) = read_matrix(path)?;
    if rows != ids || cols != ids {
        return Err(Error::Validation(format!(
            "{}: station labels do not match the network",
            path.display()
        )));
    }
    Ok(m)
}

/// Hex SHA-256 of a sequence of files, in the given order.
pub fn fingerprint_files(paths: &[impl AsRef<Path>]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        let p = p.as_ref();
        let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    fingerprint_files(&[path])
}
