//! CSV and binary (`PLAB1`) matrix serialization.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::Matrix;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"PLAB1";

/// Shortest round-trip decimal, switching to exponent form for very small or
/// very large magnitudes.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    let header: Vec<String> = (0..m.ncols()).map(|j| format!("c{j}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt_f64(m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv(text: &str) -> Result<Matrix> {
    let bad = |msg: String| Error::Format { what: "matrix csv", msg };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let cols = lines
        .next()
        .ok_or_else(|| bad("missing header".into()))?
        .split(',')
        .count();
    let mut data = Vec::new();
    let mut rows = 0;
    for (k, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(bad(format!("row {k} has {} fields, expected {cols}", fields.len())));
        }
        for f in fields {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| bad(format!("row {k}: cannot parse `{f}`")))?;
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(bad("no data rows".into()));
    }
    Ok(Matrix::from_row_slice(rows, cols, &data))
}

pub fn write_binary<W: Write>(w: &mut W, m: &Matrix) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| Error::Format {
        what: "binary matrix",
        msg: e.to_string(),
    })?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_binary<R: Read>(r: &mut R) -> Result<Matrix> {
    let bad = |msg: String| Error::Format {
        what: "binary matrix",
        msg,
    };
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(|e| bad(e.to_string()))?;
    if &magic != MAGIC {
        return Err(bad("bad magic bytes".into()));
    }
    let rows = read_u64(r)? as usize;
    let cols = read_u64(r)? as usize;
    let len = rows
        .checked_mul(cols)
        .filter(|&n| n > 0 && n < (1 << 32))
        .ok_or_else(|| bad(format!("implausible shape {rows}x{cols}")))?;
    let mut data = Vec::with_capacity(len);
    let mut b = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut b).map_err(|e| bad(e.to_string()))?;
        data.push(f64::from_le_bytes(b));
    }
    Ok(Matrix::from_row_slice(rows, cols, &data))
}

pub fn save_csv(path: &Path, m: &Matrix) -> Result<()> {
    fs::write(path, matrix_to_csv(m)).map_err(|e| Error::io(path, e))
}

pub fn load_csv(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    matrix_from_csv(&text)
}

pub fn save_binary(path: &Path, m: &Matrix) -> Result<()> {
    let mut buf = Vec::new();
    write_binary(&mut buf, m).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_binary(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_binary(&mut bytes.as_slice())
}
