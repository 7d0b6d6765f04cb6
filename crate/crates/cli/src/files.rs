use std::fs;
use std::path::Path;

use reactor_grid::dataset::format_g12;
use reactor_grid::domain::StateField;

use crate::{CliError, Result};

pub fn write(path: &Path, content: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, content).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(reactor_grid::Error::from)? + "\n";
    write(path, &text)
}

/// CSV text with LF line endings from a header and string rows.
pub fn csv_text(header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::Config(format!("csv: {e}"));
    w.write_record(header).map_err(fail)?;
    for r in rows {
        w.write_record(r).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn num(x: f64) -> String {
    format_g12(x)
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// A field as an `n_t x n_z` matrix: one row per time index.
pub fn field_csv(f: &StateField) -> Result<String> {
    let mut header = vec!["t_index".to_string()];
    header.extend((0..f.n_z).map(|z| format!("z{z}")));
    let rows: Vec<Vec<String>> = (0..f.n_t)
        .map(|j| std::iter::once(j.to_string()).chain(f.row(j).iter().map(|&v| num(v))).collect())
        .collect();
    csv_text(&header, &rows)
}
