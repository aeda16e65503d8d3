//! Readers and writers for the `.fvecs` / `.bvecs` / `.ivecs` vector formats
//! and plain CSV.
//!
//! Each `*vecs` record is a little-endian `i32` dimension followed by that
//! many components (`f32`, `u8` or `i32` respectively).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{BoltError, Result};
use crate::format::LeReader;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VecsKind {
    Fvecs,
    Bvecs,
    Csv,
}

impl VecsKind {
    /// Guesses the kind from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "fvecs" => Some(VecsKind::Fvecs),
            "bvecs" => Some(VecsKind::Bvecs),
            "csv" | "txt" => Some(VecsKind::Csv),
            _ => None,
        }
    }
}

impl std::str::FromStr for VecsKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fvecs" => Ok(VecsKind::Fvecs),
            "bvecs" => Ok(VecsKind::Bvecs),
            "csv" => Ok(VecsKind::Csv),
            other => Err(format!("unknown vector format '{other}'")),
        }
    }
}

pub fn load_vecs(path: impl AsRef<Path>, kind: VecsKind) -> Result<Array2<f32>> {
    let path = path.as_ref();
    let file = BufReader::new(File::open(path)?);
    match kind {
        VecsKind::Fvecs => read_fvecs(file),
        VecsKind::Bvecs => read_bvecs(file),
        VecsKind::Csv => read_csv(file),
    }
}

/// Loads a file whose kind is inferred from its extension.
pub fn load_auto(path: impl AsRef<Path>) -> Result<Array2<f32>> {
    let path = path.as_ref();
    let kind = VecsKind::from_path(path).ok_or_else(|| {
        BoltError::invalid(format!("cannot infer vector format of {}", path.display()))
    })?;
    load_vecs(path, kind)
}

fn read_records<R: Read, T>(
    r: R,
    elem_size: usize,
    mut decode: impl FnMut(&[u8]) -> T,
) -> Result<(usize, Vec<T>)> {
    let mut r = LeReader::new(r);
    let mut dim: Option<usize> = None;
    let mut values = Vec::new();
    let mut buf = Vec::new();
    loop {
        let at = r.offset();
        let mut header = [0u8; 4];
        if !r.exact_or_eof(&mut header, "record dimension")? {
            break;
        }
        let d = i32::from_le_bytes(header);
        if d <= 0 {
            return Err(BoltError::format(
                at,
                format!("invalid record dimension {d}"),
            ));
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(prev) if prev != d => {
                return Err(BoltError::format(
                    at,
                    format!("record dimension {d} differs from {prev}"),
                ))
            }
            _ => {}
        }
        buf.resize(d * elem_size, 0);
        r.exact(&mut buf, "record body")?;
        values.extend(buf.chunks_exact(elem_size).map(&mut decode));
    }
    Ok((dim.unwrap_or(0), values))
}

pub fn read_fvecs<R: Read>(r: R) -> Result<Array2<f32>> {
    let (dim, values) = read_records(r, 4, |b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))?;
    to_matrix(dim, values)
}

pub fn read_bvecs<R: Read>(r: R) -> Result<Array2<f32>> {
    let (dim, values) = read_records(r, 1, |b| b[0] as f32)?;
    to_matrix(dim, values)
}

/// Reads `.ivecs` rows, e.g. ground-truth neighbor lists.
pub fn read_ivecs<R: Read>(r: R) -> Result<Vec<Vec<i32>>> {
    let (dim, values) = read_records(r, 4, |b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]))?;
    if dim == 0 {
        return Ok(Vec::new());
    }
    Ok(values.chunks_exact(dim).map(<[i32]>::to_vec).collect())
}

fn to_matrix(dim: usize, values: Vec<f32>) -> Result<Array2<f32>> {
    let rows = values.len().checked_div(dim).unwrap_or(0);
    Array2::from_shape_vec((rows, dim), values).map_err(|e| BoltError::invalid(e.to_string()))
}

pub fn read_csv<R: Read>(r: R) -> Result<Array2<f32>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut dim = None;
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let offset = e.position().map(|p| p.byte()).unwrap_or(0);
            BoltError::format(offset, e.to_string())
        })?;
        let offset = record.position().map(|p| p.byte()).unwrap_or(0);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        match dim {
            None => dim = Some(record.len()),
            Some(d) if d != record.len() => {
                return Err(BoltError::format(
                    offset,
                    format!("row has {} fields, expected {d}", record.len()),
                ))
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f32 = field
                .parse()
                .map_err(|_| BoltError::format(offset, format!("not a number: '{field}'")))?;
            values.push(v);
        }
    }
    to_matrix(dim.unwrap_or(0), values)
}

pub fn write_fvecs<W: Write>(x: ArrayView2<'_, f32>, w: W) -> Result<()> {
    write_records(
        x.ncols(),
        x.rows().into_iter().map(|r| r.to_vec()),
        w,
        |v, out| out.extend_from_slice(&v.to_le_bytes()),
    )
}

/// Components are rounded and clamped to `0..=255`.
pub fn write_bvecs<W: Write>(x: ArrayView2<'_, f32>, w: W) -> Result<()> {
    write_records(
        x.ncols(),
        x.rows().into_iter().map(|r| r.to_vec()),
        w,
        |v, out| out.push(v.round().clamp(0.0, 255.0) as u8),
    )
}

pub fn write_ivecs<W: Write>(rows: &[Vec<i32>], w: W) -> Result<()> {
    let dim = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != dim) {
        return Err(BoltError::invalid("ivecs rows must share one length"));
    }
    write_records(dim, rows.iter().cloned(), w, |v, out| {
        out.extend_from_slice(&v.to_le_bytes())
    })
}

fn write_records<T: Copy, W: Write>(
    dim: usize,
    rows: impl Iterator<Item = Vec<T>>,
    w: W,
    mut put: impl FnMut(T, &mut Vec<u8>),
) -> Result<()> {
    let mut w = BufWriter::new(w);
    let mut buf = Vec::new();
    for row in rows {
        buf.clear();
        buf.extend_from_slice(&(dim as i32).to_le_bytes());
        for v in row {
            put(v, &mut buf);
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv<W: Write>(x: ArrayView2<'_, f32>, w: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for row in x.rows() {
        writer
            .write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| BoltError::invalid(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_vecs(x: ArrayView2<'_, f32>, path: impl AsRef<Path>, kind: VecsKind) -> Result<()> {
    let file = File::create(path)?;
    match kind {
        VecsKind::Fvecs => write_fvecs(x, file),
        VecsKind::Bvecs => write_bvecs(x, file),
        VecsKind::Csv => write_csv(x, file),
    }
}
