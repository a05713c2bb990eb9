//! Result emitters: CSV tables, JSON documents and SVG figures.

pub mod figures;
mod svg;

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

pub use svg::Svg;

/// Rows as CSV text with a header line. Floats use their shortest
/// round-trip representation.
pub fn csv_string<R: Serialize>(rows: &[R]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn json_string<V: Serialize + ?Sized>(value: &V) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn jsonl_string<V: Serialize>(items: &[V]) -> Result<String> {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn write_csv<R: Serialize>(path: impl AsRef<Path>, rows: &[R]) -> Result<()> {
    fs::write(path, csv_string(rows)?)?;
    Ok(())
}

pub fn write_json<V: Serialize + ?Sized>(path: impl AsRef<Path>, value: &V) -> Result<()> {
    fs::write(path, json_string(value)?)?;
    Ok(())
}

pub fn read_csv<R: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<R>, _>>()?)
}
