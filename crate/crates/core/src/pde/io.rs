//! Plain-text CSV grids and 8-bit PGM heatmaps.

use std::fs;
use std::path::Path;

use crate::error::{Error, ParseErrorKind, Result};

/// A row-major grid as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

/// Parses one grid row per line, comma separated. Blank lines are skipped;
/// every row must have the same width.
pub fn parse_csv(text: &str, path: &Path) -> Result<Grid> {
    let mut values = Vec::new();
    let mut rows = 0;
    let mut cols = None;
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len() as u64;
        let body = line.trim();
        if body.is_empty() {
            continue;
        }
        let malformed = |detail: String| Error::Parse {
            path: path.to_path_buf(),
            offset: start,
            kind: ParseErrorKind::Malformed,
            detail,
        };
        let mut width = 0;
        for cell in body.split(',') {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| malformed(format!("row {rows}: not a number: {:?}", cell.trim())))?;
            if !v.is_finite() {
                return Err(malformed(format!("row {rows}: non-finite value")));
            }
            values.push(v);
            width += 1;
        }
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(malformed(format!("row {rows} has {width} columns, expected {c}")));
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        offset: 0,
        kind: ParseErrorKind::Truncated,
        detail: "empty grid".into(),
    })?;
    Ok(Grid { rows, cols, values })
}

pub fn format_csv(cols: usize, values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 12);
    for row in values.chunks(cols.max(1)) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Grid> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, path)
}

pub fn write_csv(path: impl AsRef<Path>, cols: usize, values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_csv(cols, values)).map_err(|e| Error::io(path, e))
}

/// Binary (P5) PGM bytes, min-max normalized to `0..=255`. A constant grid
/// maps to 0.
pub fn encode_pgm(rows: usize, cols: usize, values: &[f64]) -> Vec<u8> {
    assert_eq!(rows * cols, values.len(), "grid extent mismatch");
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round() as u8
        } else {
            0
        }
    }));
    out
}

pub fn write_pgm(path: impl AsRef<Path>, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(rows, cols, values)).map_err(|e| Error::io(path, e))
}
