//! Field files: flat little-endian f64 binary plus a JSON sidecar.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{Field, Grid2D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub n: usize,
    #[serde(rename = "L")]
    pub half_width: f64,
    pub components: usize,
    pub constant_at_infinity: Option<Vec<f64>>,
}

/// Write `bytes` to `path` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(d) = dir {
        fs::create_dir_all(d)?;
    }
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or_else(|| Path::new(".")))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_atomic(path, text.as_bytes())
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

/// Writes `<stem>.bin` and `<stem>.json`.
pub fn write_field(stem: &Path, field: &Field, constant_at_infinity: Option<&[f64]>) -> Result<()> {
    let (bin, json) = paths(stem);
    let mut bytes = Vec::with_capacity(field.data().len() * 8);
    for v in field.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(&bin, &bytes)?;
    let side = FieldSidecar {
        n: field.grid().n(),
        half_width: field.grid().half_width(),
        components: field.ncomp(),
        constant_at_infinity: constant_at_infinity.map(|c| c.to_vec()),
    };
    write_json_atomic(&json, &side)
}

pub fn read_field(stem: &Path) -> Result<(Field, FieldSidecar)> {
    let (bin, json) = paths(stem);
    let side: FieldSidecar = serde_json::from_slice(&fs::read(json)?)?;
    let bytes = fs::read(bin)?;
    if bytes.len() % 8 != 0 {
        return Err(invalid("field binary length is not a multiple of 8"));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let grid = Grid2D::new(side.n, side.half_width)?;
    let field = Field::from_vec(grid, side.components, data)?;
    Ok((field, side))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid2D::new(8, 2.0).unwrap();
        let f = Field::from_fn(g, 3, |x, y, out| {
            out[0] = x;
            out[1] = y;
            out[2] = x * y - 0.1;
        });
        let stem = dir.path().join("sub").join("phi");
        write_field(&stem, &f, Some(&[1.0, 0.0, 0.0])).unwrap();
        let (back, side) = read_field(&stem).unwrap();
        assert_eq!(back, f);
        assert_eq!(side.constant_at_infinity, Some(vec![1.0, 0.0, 0.0]));
        let raw = fs::read_to_string(stem.with_extension("json")).unwrap();
        assert!(raw.contains("\"L\""));
    }
}
