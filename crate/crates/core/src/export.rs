//! CSV curves and raw tensor dumps.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::analysis::BoundReport;
use crate::dynamics::TrajectoryEnsemble;
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"SGDF";
pub const TENSOR_VERSION: u32 = 1;

/// Shortest decimal that parses back to the same f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Writes named columns of equal length with a header row.
pub fn write_columns<W: Write>(mut w: W, headers: &[&str], columns: &[&[f64]]) -> Result<()> {
    if headers.len() != columns.len() {
        return Err(Error::InvalidInput("header / column count mismatch".into()));
    }
    let rows = columns.first().map_or(0, |c| c.len());
    if columns.iter().any(|c| c.len() != rows) {
        return Err(Error::InvalidInput("columns differ in length".into()));
    }
    writeln!(w, "{}", headers.join(","))?;
    for i in 0..rows {
        let line: Vec<String> = columns.iter().map(|c| fmt_f64(c[i])).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn write_csv(path: &Path, headers: &[&str], columns: &[&[f64]]) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    write_columns(f, headers, columns)
}

/// Columns t, value, stderr, bound.
pub fn write_bound_report(path: &Path, report: &BoundReport) -> Result<()> {
    write_csv(
        path,
        &["t", "value", "stderr", "bound"],
        &[&report.times, &report.empirical, &report.stderr, &report.bound],
    )
}

/// Header: magic "SGDF", u32 version, u64 M, u64 T, u64 d, then M·T·d f64 values
/// (trajectory-major, then time, then coordinate), all little-endian.
pub fn write_tensor<W: Write>(mut w: W, m: usize, t: usize, d: usize, data: &[f64]) -> Result<()> {
    if data.len() != m * t * d {
        return Err(Error::InvalidInput(format!("tensor has {} values, expected {}", data.len(), m * t * d)));
    }
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&TENSOR_VERSION.to_le_bytes())?;
    for v in [m, t, d] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_ensemble_tensor(path: &Path, ensemble: &TrajectoryEnsemble) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    write_tensor(f, ensemble.ensemble_size(), ensemble.len_times(), ensemble.dim, ensemble.raw_states())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub m: usize,
    pub t: usize,
    pub d: usize,
    pub data: Vec<f64>,
}

pub fn read_tensor<R: Read>(r: R) -> Result<Tensor> {
    let mut r = BufReader::new(r);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::InvalidInput("bad tensor magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != TENSOR_VERSION {
        return Err(Error::InvalidInput(format!("unsupported tensor version {version}")));
    }
    let mut b8 = [0u8; 8];
    let mut dims = [0usize; 3];
    for v in dims.iter_mut() {
        r.read_exact(&mut b8)?;
        *v = u64::from_le_bytes(b8) as usize;
    }
    let count = dims[0] * dims[1] * dims[2];
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut b8)?;
        data.push(f64::from_le_bytes(b8));
    }
    Ok(Tensor {
        m: dims[0],
        t: dims[1],
        d: dims[2],
        data,
    })
}
