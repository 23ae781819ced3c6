//! Field import and export.
//!
//! CSV: one header line, then one row per grid point in flat (lexicographic)
//! order: `index,<components...>`. Scalar fields have header `index,value`;
//! symmetric tensor fields list the upper triangle row by row, e.g.
//! `index,t00,t01,t02,t11,t12,t22` for n = 3.
//!
//! PCRV1 binary, all integers and floats little-endian:
//!
//! | bytes        | content                                        |
//! |--------------|------------------------------------------------|
//! | 5            | magic `PCRV1`                                  |
//! | 1            | field kind: 0 = scalar, 1 = symmetric tensor   |
//! | 4 (u32)      | dimension n                                    |
//! | 4n (u32 x n) | points per axis                                |
//! | 4 (u32)      | components per point (1 or n(n+1)/2)           |
//! | 8 x rest     | f64 values, point-major, components innermost  |

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{sym_components, Grid, ScalarField, SymTensorField};
use crate::scalar::Real;

pub const MAGIC: &[u8; 5] = b"PCRV1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Scalar = 0,
    SymTensor = 1,
}

/// A decoded binary field: header plus raw values.
#[derive(Clone, Debug, PartialEq)]
pub struct RawField {
    pub kind: FieldKind,
    pub shape: Vec<usize>,
    pub components: usize,
    pub values: Vec<f64>,
}

impl RawField {
    pub fn into_scalar<T: Real>(self, grid: &Grid) -> Result<ScalarField<T>> {
        self.check(grid, FieldKind::Scalar)?;
        ScalarField::from_values(grid, self.values.into_iter().map(T::lit).collect())
    }

    pub fn into_tensor<T: Real>(self, grid: &Grid) -> Result<SymTensorField<T>> {
        self.check(grid, FieldKind::SymTensor)?;
        SymTensorField::from_components(grid, self.values.into_iter().map(T::lit).collect())
    }

    fn check(&self, grid: &Grid, kind: FieldKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!(
                "expected {kind:?} field, found {:?}",
                self.kind
            )));
        }
        if self.shape != grid.shape() {
            return Err(Error::Format(format!(
                "field shape {:?} does not match grid shape {:?}",
                self.shape,
                grid.shape()
            )));
        }
        Ok(())
    }
}

pub fn encode_binary(
    kind: FieldKind,
    shape: &[usize],
    components: usize,
    values: &[f64],
) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + 1 + 4 * (shape.len() + 2) + 8 * values.len());
    out.extend_from_slice(MAGIC);
    out.push(kind as u8);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &s in shape {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    out.extend_from_slice(&(components as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], k: usize) -> Result<&'a [u8]> {
    if bytes.len() < k {
        return Err(Error::Format("truncated PCRV1 data".into()));
    }
    let (head, tail) = bytes.split_at(k);
    *bytes = tail;
    Ok(head)
}

fn take_u32(bytes: &mut &[u8]) -> Result<usize> {
    let b = take(bytes, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
}

pub fn decode_binary(mut bytes: &[u8]) -> Result<RawField> {
    if take(&mut bytes, 5)? != MAGIC {
        return Err(Error::Format("missing PCRV1 magic".into()));
    }
    let kind = match take(&mut bytes, 1)?[0] {
        0 => FieldKind::Scalar,
        1 => FieldKind::SymTensor,
        k => return Err(Error::Format(format!("unknown field kind {k}"))),
    };
    let n = take_u32(&mut bytes)?;
    let shape = (0..n)
        .map(|_| take_u32(&mut bytes))
        .collect::<Result<Vec<_>>>()?;
    let components = take_u32(&mut bytes)?;
    let expected_components = match kind {
        FieldKind::Scalar => 1,
        FieldKind::SymTensor => sym_components(n),
    };
    if components != expected_components {
        return Err(Error::Format(format!(
            "{kind:?} field in dimension {n} needs {expected_components} components, header says {components}"
        )));
    }
    let count = shape.iter().product::<usize>() * components;
    if bytes.len() != 8 * count {
        return Err(Error::Format(format!(
            "expected {count} values, found {} bytes of payload",
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(RawField {
        kind,
        shape,
        components,
        values,
    })
}

pub fn write_scalar_binary<T: Real>(
    path: &Path,
    grid: &Grid,
    field: &ScalarField<T>,
) -> Result<()> {
    let values: Vec<f64> = field.values().iter().map(|v| v.as_f64()).collect();
    std::fs::write(
        path,
        encode_binary(FieldKind::Scalar, grid.shape(), 1, &values),
    )?;
    Ok(())
}

pub fn write_tensor_binary<T: Real>(
    path: &Path,
    grid: &Grid,
    field: &SymTensorField<T>,
) -> Result<()> {
    let values: Vec<f64> = field.raw().iter().map(|v| v.as_f64()).collect();
    std::fs::write(
        path,
        encode_binary(
            FieldKind::SymTensor,
            grid.shape(),
            field.components(),
            &values,
        ),
    )?;
    Ok(())
}

pub fn read_binary(path: &Path) -> Result<RawField> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_binary(&bytes)
}

fn tensor_header(n: usize) -> String {
    let mut cols = vec!["index".to_string()];
    for i in 0..n {
        for j in i..n {
            cols.push(format!("t{i}{j}"));
        }
    }
    cols.join(",")
}

fn write_rows<W: Write>(mut w: W, header: &str, components: usize, values: &[f64]) -> Result<()> {
    writeln!(w, "{header}")?;
    for (pt, row) in values.chunks(components).enumerate() {
        write!(w, "{pt}")?;
        for v in row {
            // shortest representation that round-trips
            write!(w, ",{v:?}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_scalar_csv<T: Real>(path: &Path, field: &ScalarField<T>) -> Result<()> {
    let values: Vec<f64> = field.values().iter().map(|v| v.as_f64()).collect();
    write_rows(
        BufWriter::new(File::create(path)?),
        "index,value",
        1,
        &values,
    )
}

pub fn write_tensor_csv<T: Real>(path: &Path, field: &SymTensorField<T>) -> Result<()> {
    let values: Vec<f64> = field.raw().iter().map(|v| v.as_f64()).collect();
    write_rows(
        BufWriter::new(File::create(path)?),
        &tensor_header(field.dim()),
        field.components(),
        &values,
    )
}

fn read_rows<R: BufRead>(r: R, components: usize, points: usize) -> Result<Vec<f64>> {
    let mut lines = r.lines();
    lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::Format("empty CSV".into()))?;
    let mut out = vec![f64::NAN; points * components];
    let mut seen = vec![false; points];
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut cells = line.split(',');
        let idx: usize = cells
            .next()
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("bad index on data line {}", lineno + 1)))?;
        if idx >= points || seen[idx] {
            return Err(Error::Format(format!(
                "index {idx} out of range or repeated"
            )));
        }
        seen[idx] = true;
        let vals: Vec<f64> = cells
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("bad value on data line {}: {e}", lineno + 1)))?;
        if vals.len() != components {
            return Err(Error::Format(format!(
                "expected {components} components on data line {}, found {}",
                lineno + 1,
                vals.len()
            )));
        }
        out[idx * components..(idx + 1) * components].copy_from_slice(&vals);
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::Format(format!(
            "CSV is missing grid point {missing}"
        )));
    }
    Ok(out)
}

pub fn read_scalar_csv<T: Real>(path: &Path, grid: &Grid) -> Result<ScalarField<T>> {
    let vals = read_rows(BufReader::new(File::open(path)?), 1, grid.len())?;
    ScalarField::from_values(grid, vals.into_iter().map(T::lit).collect())
}

pub fn read_tensor_csv<T: Real>(path: &Path, grid: &Grid) -> Result<SymTensorField<T>> {
    let vals = read_rows(
        BufReader::new(File::open(path)?),
        sym_components(grid.dim()),
        grid.len(),
    )?;
    SymTensorField::from_components(grid, vals.into_iter().map(T::lit).collect())
}

/// Reads a scalar field from `.csv` or PCRV1 (any other extension).
pub fn read_scalar<T: Real>(path: &Path, grid: &Grid) -> Result<ScalarField<T>> {
    if is_csv(path) {
        read_scalar_csv(path, grid)
    } else {
        read_binary(path)?.into_scalar(grid)
    }
}

/// Reads a symmetric tensor field from `.csv` or PCRV1 (any other extension).
pub fn read_tensor<T: Real>(path: &Path, grid: &Grid) -> Result<SymTensorField<T>> {
    if is_csv(path) {
        read_tensor_csv(path, grid)
    } else {
        read_binary(path)?.into_tensor(grid)
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}
