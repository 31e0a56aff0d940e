//! Binary field snapshots.
//!
//! Layout: an 8-byte little-endian `u64` header length `L`, then `L` bytes of
//! UTF-8 JSON header, then the node data as little-endian IEEE-754 `f64`
//! values in row-major node order, components of each node contiguous.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::field::{Role, TensorField};
use crate::grid::ChartGrid;

pub const FORMAT: &str = "bochner-field";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub format: String,
    pub version: u32,
    pub chart: ChartGrid,
    pub role: Role,
    /// (covariant rank, contravariant rank)
    pub valence: (usize, usize),
    pub components: usize,
    pub nodes: usize,
    /// Tolerance settings in effect when the field was produced.
    #[serde(default)]
    pub tolerances: serde_json::Map<String, serde_json::Value>,
}

pub fn write_field<W: Write>(
    mut w: W,
    field: &TensorField,
    tolerances: serde_json::Map<String, serde_json::Value>,
) -> Result<()> {
    let header = SnapshotHeader {
        format: FORMAT.into(),
        version: VERSION,
        chart: field.grid().clone(),
        role: field.role(),
        valence: field.role().valence(),
        components: field.ncomp(),
        nodes: field.grid().node_count(),
        tolerances,
    };
    let json = serde_json::to_vec(&header).map_err(|e| GeomError::Io(e.to_string()))?;
    let io = |e: std::io::Error| GeomError::Io(e.to_string());
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    let mut buf = Vec::with_capacity(field.data().len() * 8);
    for v in field.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(io)
}

pub fn read_field<R: Read>(mut r: R) -> Result<(SnapshotHeader, TensorField)> {
    let io = |e: std::io::Error| GeomError::Io(e.to_string());
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(io)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(io)?;
    let header: SnapshotHeader = serde_json::from_slice(&json).map_err(|e| GeomError::Io(e.to_string()))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(GeomError::Io(format!("unsupported snapshot {} v{}", header.format, header.version)));
    }
    let grid = header.chart.clone().rehydrate()?;
    let count = header.nodes * header.components;
    let mut raw = vec![0u8; count * 8];
    r.read_exact(&mut raw).map_err(io)?;
    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let field = TensorField::from_data(&grid, header.role, data)?;
    Ok((header, field))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;

    #[test]
    fn round_trip_is_bit_exact() {
        let g = ChartGrid::new(vec![Axis::closed(0.1, 3.0, 9, 0.125), Axis::periodic(0.0, 1.0, 8)]).unwrap();
        let f = TensorField::from_fn(&g, Role::Sym2, |x| vec![x[0].exp(), x[1] / 3.0, x[1] / 3.0, -x[0]]).unwrap();
        let mut tol = serde_json::Map::new();
        tol.insert("identity".into(), serde_json::json!(1e-6));
        let mut buf = Vec::new();
        write_field(&mut buf, &f, tol.clone()).unwrap();
        let (h, back) = read_field(buf.as_slice()).unwrap();
        assert_eq!(h.tolerances, tol);
        assert_eq!(h.valence, (2, 0));
        assert_eq!(back, f);
        assert_eq!(buf.len(), 8 + u64::from_le_bytes(buf[..8].try_into().unwrap()) as usize + f.data().len() * 8);
    }

    #[test]
    fn truncated_input_is_an_error() {
        let g = ChartGrid::new(vec![Axis::periodic(0.0, 1.0, 8)]).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &TensorField::zeros(&g, Role::Scalar), Default::default()).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_field(buf.as_slice()), Err(GeomError::Io(_))));
    }
}
