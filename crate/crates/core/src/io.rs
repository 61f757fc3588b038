//! Array-file IO for cell/domain fields and deterministic CSV writers.
//!
//! The array format is a small text header followed by whitespace-
//! separated values, row-major by (i,j):
//!
//! ```text
//! # array d=2 n=32,32 entries=4
//! <v...>
//! ```

use crate::coeff::PeriodicCoefficientField;
use crate::{Error, Result};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

/// Print a float the same way every time: shortest round-trip form.
/// All CSV bodies funnel through this so reruns are byte-identical.
pub fn fmt_f64(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

/// Write a CSV with a fixed header and rows of floats.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut s = String::new();
    s.push_str(&header.join(","));
    s.push('\n');
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                s.push(',');
            }
            first = false;
            s.push_str(&fmt_f64(*v));
        }
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Dump one or more scalar fields (same grid) to the array format.
pub fn write_array(path: &Path, d: usize, n: [usize; 2], fields: &[&[f64]]) -> Result<()> {
    let count = if d == 1 { n[0] } else { n[0] * n[1] };
    for f in fields {
        if f.len() != count {
            return Err(Error::invalid("array dump: field length does not match resolution"));
        }
    }
    let mut s = format!("# array d={d} n={},{} entries={}\n", n[0], n[1], fields.len());
    for idx in 0..count {
        let mut first = true;
        for f in fields {
            if !first {
                s.push(' ');
            }
            first = false;
            let _ = write!(s, "{}", fmt_f64(f[idx]));
        }
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

fn parse_header(line: &str) -> Result<(usize, [usize; 2], usize)> {
    let err = || Error::invalid(format!("bad array header: {line:?}"));
    if !line.starts_with("# array") {
        return Err(err());
    }
    let mut d = 0usize;
    let mut n = [0usize; 2];
    let mut entries = 0usize;
    for tok in line.split_whitespace() {
        if let Some(v) = tok.strip_prefix("d=") {
            d = v.parse().map_err(|_| err())?;
        } else if let Some(v) = tok.strip_prefix("n=") {
            let parts: Vec<&str> = v.split(',').collect();
            if parts.len() != 2 {
                return Err(err());
            }
            n[0] = parts[0].parse().map_err(|_| err())?;
            n[1] = parts[1].parse().map_err(|_| err())?;
        } else if let Some(v) = tok.strip_prefix("entries=") {
            entries = v.parse().map_err(|_| err())?;
        }
    }
    if d == 0 || n[0] == 0 || entries == 0 {
        return Err(err());
    }
    Ok((d, n, entries))
}

/// Read an array file back: (d, resolution, one Vec per entry column).
pub fn read_array(path: &Path) -> Result<(usize, [usize; 2], Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::invalid("empty array file"))?;
    let (d, n, entries) = parse_header(header)?;
    let count = if d == 1 { n[0] } else { n[0] * n[1] };
    let mut fields = vec![Vec::with_capacity(count); entries];
    for line in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::invalid(format!("bad value {t:?}"))))
            .collect::<Result<_>>()?;
        if vals.len() != entries {
            return Err(Error::invalid(format!(
                "expected {entries} values per row, got {}",
                vals.len()
            )));
        }
        for (f, v) in fields.iter_mut().zip(vals) {
            f.push(v);
        }
    }
    for f in &fields {
        if f.len() != count {
            return Err(Error::invalid(format!(
                "expected {count} rows, got {}",
                f.len()
            )));
        }
    }
    Ok((d, n, fields))
}

/// Load a gridded coefficient: d*d entry columns, row-major by (i,j).
pub fn load_gridded_field(path: &str, mu: f64, lip: f64) -> Result<PeriodicCoefficientField> {
    let (d, n, fields) = read_array(Path::new(path))?;
    if d != 1 && d != 2 {
        return Err(Error::invalid("gridded field dimension must be 1 or 2"));
    }
    if fields.len() != d * d {
        return Err(Error::invalid(format!(
            "gridded field needs {} entry columns, found {}",
            d * d,
            fields.len()
        )));
    }
    let count = fields[0].len();
    let mut values = vec![[[0.0; 2]; 2]; count];
    for i in 0..d {
        for j in 0..d {
            for (e, v) in fields[i * d + j].iter().enumerate() {
                values[e][i][j] = *v;
            }
        }
    }
    PeriodicCoefficientField::from_gridded(d, n, values, mu, lip)
}

/// Write a manifest JSON next to the artifacts of a run.
pub fn write_manifest(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::invalid(format!("manifest serialization: {e}")))?;
    body.push('\n');
    let mut f = std::fs::File::create(path)?;
    f.write_all(body.as_bytes())?;
    Ok(())
}
