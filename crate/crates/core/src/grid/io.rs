//! Field snapshots: CSV (coordinates + value) and a small binary format.
//!
//! Binary layout, little endian: magic `RBF1`, `u32` dimension, then per axis
//! `u64` count, `f64` lo, `f64` hi; then `len` doubles in row-major order
//! (last axis fastest), which is the in-memory order of [`Field`].

use std::io::{Read, Write};
use std::path::Path;

use super::{Field, SpatialGrid};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RBF1";

fn coord_header(d: usize) -> Vec<String> {
    (1..=d).map(|k| format!("x{k}")).collect()
}

/// Columns `x1..xd,value`.
pub fn write_field_csv(path: &Path, grid: &SpatialGrid, u: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = coord_header(grid.dim());
    header.push("value".into());
    w.write_record(&header)?;
    let mut x = vec![0.0; grid.dim()];
    for (idx, v) in u.iter().enumerate() {
        grid.point_into(idx, &mut x);
        let mut row: Vec<String> = x.iter().map(|c| c.to_string()).collect();
        row.push(v.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `level,node,x1..xd,value` for a sequence of `(level, node, field)`.
pub fn write_node_fields_csv<'a, I>(path: &Path, grid: &SpatialGrid, fields: I) -> Result<()>
where
    I: IntoIterator<Item = (usize, usize, &'a Field)>,
{
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["level".to_string(), "node".to_string()];
    header.extend(coord_header(grid.dim()));
    header.push("value".into());
    w.write_record(&header)?;
    let mut x = vec![0.0; grid.dim()];
    for (level, node, u) in fields {
        for (idx, v) in u.iter().enumerate() {
            grid.point_into(idx, &mut x);
            let mut row = vec![level.to_string(), node.to_string()];
            row.extend(x.iter().map(|c| c.to_string()));
            row.push(v.to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_field_binary<W: Write>(mut out: W, grid: &SpatialGrid, u: &[f64]) -> Result<()> {
    if u.len() != grid.len() {
        return Err(Error::LevelMismatch { expected: grid.len(), got: u.len() });
    }
    out.write_all(MAGIC)?;
    out.write_all(&(grid.dim() as u32).to_le_bytes())?;
    for (&n, (lo, hi)) in grid.counts().iter().zip(grid.bounds()) {
        out.write_all(&(n as u64).to_le_bytes())?;
        out.write_all(&lo.to_le_bytes())?;
        out.write_all(&hi.to_le_bytes())?;
    }
    for v in u {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_field_binary<R: Read>(mut input: R) -> Result<(SpatialGrid, Field)> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::InvalidInput("not a field snapshot (bad magic)".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    input.read_exact(&mut b4)?;
    let d = u32::from_le_bytes(b4) as usize;
    if d == 0 || d > 16 {
        return Err(Error::InvalidInput(format!("implausible dimension {d}")));
    }
    let mut counts = Vec::with_capacity(d);
    let mut bounds = Vec::with_capacity(d);
    for _ in 0..d {
        input.read_exact(&mut b8)?;
        counts.push(u64::from_le_bytes(b8) as usize);
        input.read_exact(&mut b8)?;
        let lo = f64::from_le_bytes(b8);
        input.read_exact(&mut b8)?;
        bounds.push((lo, f64::from_le_bytes(b8)));
    }
    let grid = SpatialGrid::new(&bounds, &counts)?;
    let mut data = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        input.read_exact(&mut b8)?;
        data.push(f64::from_le_bytes(b8));
    }
    Ok((grid, Field(data)))
}
