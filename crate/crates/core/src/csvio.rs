//! Small CSV helpers shared by the writers.

use std::path::Path;

use crate::error::{Result, TemError};

/// Scientific notation with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn write_rows<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| TemError::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| TemError::csv(path, e))?;
    w.write_record(header).map_err(|e| TemError::csv(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| TemError::csv(path, e))?;
    }
    w.flush().map_err(|e| TemError::io(path, e))
}

/// Reads a CSV written by [`write_rows`] back as header plus string records.
pub fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| TemError::csv(path, e))?;
    let header = r
        .headers()
        .map_err(|e| TemError::csv(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| TemError::csv(path, e))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}
