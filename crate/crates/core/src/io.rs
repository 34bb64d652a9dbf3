//! Orbit files.
//!
//! CSV: header `t,x0,...,x{d-1}`, one state per line, `t` the physical time.
//!
//! Binary (all little-endian):
//!
//! | bytes      | content                                   |
//! |------------|-------------------------------------------|
//! | 4          | magic `ERGL`                              |
//! | 2          | format version (u16, currently 1)         |
//! | 4          | state dimension `d` (u32)                 |
//! | 8          | state count `n` (u64)                     |
//! | 8·n·d      | states, row-major f64                     |
//! | 8·(n-1)·d² | optional Jacobians `dF(x_t)`, row-major   |

use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ERGL";
pub const VERSION: u16 = 1;

/// Writes states as CSV; `dt` is the time per row (1 for maps).
pub fn write_csv<W: Write>(mut w: W, states: &Array2<f64>, dt: f64) -> Result<()> {
    let d = states.ncols();
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((0..d).map(|i| format!("x{i}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    let mut line = String::new();
    for (t, row) in states.rows().into_iter().enumerate() {
        line.clear();
        line.push_str(&(t as f64 * dt).to_string());
        for v in row {
            line.push(',');
            line.push_str(&v.to_string());
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Reads a CSV written by [`write_csv`], returning the states (time column dropped).
pub fn read_csv<R: BufRead>(r: R) -> Result<Array2<f64>> {
    let mut lines = r.lines();
    let header = lines.next().ok_or(Error::Empty("csv file"))??;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.first() != Some(&"t") || cols.len() < 2 {
        return Err(Error::Format(format!("bad csv header {header:?}")));
    }
    let d = cols.len() - 1;
    let mut data = Vec::new();
    let mut rows = 0;
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != d + 1 {
            return Err(Error::Format(format!("line {}: expected {} fields", lineno + 2, d + 1)));
        }
        for f in &fields[1..] {
            data.push(
                f.parse::<f64>()
                    .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 2)))?,
            );
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, d), data).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_binary<W: Write>(mut w: W, states: &Array2<f64>, jacobians: Option<&Array3<f64>>) -> Result<()> {
    let (n, d) = states.dim();
    if let Some(j) = jacobians {
        if j.dim() != (n.saturating_sub(1), d, d) {
            return Err(Error::ShapeMismatch(format!(
                "jacobians {:?} for {n} states of dimension {d}",
                j.dim()
            )));
        }
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(d as u32).to_le_bytes())?;
    w.write_all(&(n as u64).to_le_bytes())?;
    for v in states.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    if let Some(j) = jacobians {
        for v in j.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect()
}

/// Parses a binary orbit file; Jacobians are present iff trailing bytes remain.
pub fn read_binary(bytes: &[u8]) -> Result<(Array2<f64>, Option<Array3<f64>>)> {
    if bytes.len() < 18 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing ERGL magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let d = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let n = u64::from_le_bytes(bytes[10..18].try_into().expect("8 bytes")) as usize;
    let body = &bytes[18..];
    let state_bytes = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
    if body.len() < state_bytes {
        return Err(Error::Format(format!("truncated: {} state bytes, expected {state_bytes}", body.len())));
    }
    let states = Array2::from_shape_vec((n, d), read_f64s(&body[..state_bytes])).expect("sized");
    let rest = &body[state_bytes..];
    if rest.is_empty() {
        return Ok((states, None));
    }
    let m = n.saturating_sub(1);
    if rest.len() != m * d * d * 8 {
        return Err(Error::Format(format!(
            "trailing {} bytes do not match {m} Jacobians of size {d}×{d}",
            rest.len()
        )));
    }
    let jac = Array3::from_shape_vec((m, d, d), read_f64s(rest)).expect("sized");
    Ok((states, Some(jac)))
}

pub fn save_binary(path: &Path, states: &Array2<f64>, jacobians: Option<&Array3<f64>>) -> Result<()> {
    let mut buf = Vec::with_capacity(18 + 8 * states.len());
    write_binary(&mut buf, states, jacobians)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_binary(path: &Path) -> Result<(Array2<f64>, Option<Array3<f64>>)> {
    read_binary(&std::fs::read(path)?)
}

pub fn save_csv(path: &Path, states: &Array2<f64>, dt: f64) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_csv(f, states, dt)
}

pub fn load_csv(path: &Path) -> Result<Array2<f64>> {
    read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
}
