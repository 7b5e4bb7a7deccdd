//! Binary field snapshots.
//!
//! Layout: a 32-byte header (`b"RELENT01"`, then `dim`, `n`, `rank` and
//! `count` as little-endian `u32`, then the axis period as a little-endian
//! `f64`) followed by `count` records of little-endian `f64`s in row-major
//! order. A record holds `n^dim` values for rank 0 and `dim · n^dim` values,
//! component by component, for rank 1.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, VectorField};

pub const MAGIC: &[u8; 8] = b"RELENT01";
pub const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotHeader {
    pub dim: u32,
    pub n: u32,
    pub rank: u32,
    pub count: u32,
    pub length: f64,
}

impl SnapshotHeader {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dim as usize, self.n as usize, self.length)
    }

    fn record_len(&self) -> usize {
        let cells = (self.n as usize).pow(self.dim);
        if self.rank == 0 {
            cells
        } else {
            cells * self.dim as usize
        }
    }
}

fn header_bytes(out: &mut Vec<u8>, grid: &Grid, rank: u32, count: usize) {
    out.extend_from_slice(MAGIC);
    for v in [grid.dim() as u32, grid.n() as u32, rank, count as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&grid.length().to_le_bytes());
}

fn check_grids<'a>(mut grids: impl Iterator<Item = &'a Grid>) -> Result<Grid> {
    let first = *grids.next().ok_or_else(|| Error::usage("a snapshot needs at least one record"))?;
    if grids.any(|g| *g != first) {
        return Err(Error::usage("snapshot records live on different grids"));
    }
    Ok(first)
}

pub fn encode_scalars(fields: &[ScalarField]) -> Result<Vec<u8>> {
    let grid = check_grids(fields.iter().map(|f| f.grid()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * fields.len() * grid.cells());
    header_bytes(&mut out, &grid, 0, fields.len());
    for f in fields {
        for v in f.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn encode_vectors(fields: &[VectorField]) -> Result<Vec<u8>> {
    let grid = check_grids(fields.iter().map(|f| f.grid()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * fields.len() * grid.cells() * grid.dim());
    header_bytes(&mut out, &grid, 1, fields.len());
    for f in fields {
        for a in 0..grid.dim() {
            for v in f.component(a) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("four bytes"))
}

pub fn decode_header(bytes: &[u8]) -> Result<SnapshotHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("snapshot is {} bytes, shorter than its header", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Format("bad snapshot magic".into()));
    }
    let h = SnapshotHeader {
        dim: u32_at(bytes, 8),
        n: u32_at(bytes, 12),
        rank: u32_at(bytes, 16),
        count: u32_at(bytes, 20),
        length: f64::from_le_bytes(bytes[24..32].try_into().expect("eight bytes")),
    };
    if h.rank > 1 {
        return Err(Error::Format(format!("unknown field rank {}", h.rank)));
    }
    h.grid().map_err(|e| Error::Format(format!("bad snapshot grid: {e}")))?;
    let want = HEADER_LEN + 8 * h.record_len() * h.count as usize;
    if bytes.len() != want {
        return Err(Error::Format(format!("snapshot has {} bytes, header implies {want}", bytes.len())));
    }
    Ok(h)
}

fn records(bytes: &[u8], h: &SnapshotHeader) -> Vec<Vec<f64>> {
    let len = h.record_len();
    bytes[HEADER_LEN..]
        .chunks_exact(8 * len)
        .map(|rec| rec.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("eight bytes"))).collect())
        .collect()
}

pub fn decode_scalars(bytes: &[u8]) -> Result<Vec<ScalarField>> {
    let h = decode_header(bytes)?;
    if h.rank != 0 {
        return Err(Error::Format("expected scalar records".into()));
    }
    let g = h.grid()?;
    records(bytes, &h).into_iter().map(|r| ScalarField::from_vec(g, r)).collect()
}

pub fn decode_vectors(bytes: &[u8]) -> Result<Vec<VectorField>> {
    let h = decode_header(bytes)?;
    if h.rank != 1 {
        return Err(Error::Format("expected vector records".into()));
    }
    let g = h.grid()?;
    let cells = g.cells();
    records(bytes, &h)
        .into_iter()
        .map(|r| VectorField::from_components(g, r.chunks_exact(cells).map(|c| c.to_vec()).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{sin, PI};
    use std::vec;

    #[test]
    fn header_layout() {
        let g = Grid::torus(2, 8).unwrap();
        let bytes = encode_scalars(&[ScalarField::constant(g, 1.5)]).unwrap();
        assert_eq!(&bytes[..8], b"RELENT01");
        assert_eq!(&bytes[8..24], &[2, 0, 0, 0, 8, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), 2.0);
        assert_eq!(bytes.len(), 32 + 8 * 64);
        assert_eq!(f64::from_le_bytes(bytes[32..40].try_into().unwrap()), 1.5);
    }

    #[test]
    fn round_trips_are_bitwise() {
        let g = Grid::new(2, 10, 3.0).unwrap();
        let a = ScalarField::from_fn(g, |x| sin(PI * x[0]) + x[1] / 3.0);
        let b = a.map(|v| v * 1e-300);
        assert_eq!(decode_scalars(&encode_scalars(&[a.clone(), b.clone()]).unwrap()).unwrap(), vec![a, b]);
        let v = VectorField::from_fn(g, |x| [x[0], -x[1] * 0.1]);
        assert_eq!(decode_vectors(&encode_vectors(&[v.clone()]).unwrap()).unwrap(), vec![v]);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let g = Grid::torus(1, 8).unwrap();
        let bytes = encode_scalars(&[ScalarField::zeros(g)]).unwrap();
        assert!(decode_scalars(&bytes[..40]).is_err());
        assert!(decode_vectors(&bytes).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_scalars(&bad), Err(Error::Format(_))));
        let mut odd = bytes;
        odd[12] = 7;
        assert!(decode_header(&odd).is_err());
        assert!(encode_scalars(&[]).is_err());
    }
}
