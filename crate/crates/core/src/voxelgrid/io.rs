//! Grid file format.
//!
//! ```text
//! offset  size      field
//! 0       4         magic "PSVH"
//! 4       1         version (1)
//! 5       4         D, u32 little-endian
//! 9       4·D³      values, f32 little-endian, x fastest
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::VoxelGrid;
use crate::error::{Error, Result};

pub const GRID_MAGIC: &[u8; 4] = b"PSVH";
pub const GRID_VERSION: u8 = 1;
pub const GRID_HEADER_LEN: usize = 9;

pub fn write_grid<W: Write>(mut w: W, grid: &VoxelGrid) -> Result<()> {
    w.write_all(GRID_MAGIC)?;
    w.write_all(&[GRID_VERSION])?;
    w.write_all(&(grid.dim() as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(grid.len() * 4);
    for &v in grid.values() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_grid<R: Read>(mut r: R) -> Result<VoxelGrid> {
    let mut header = [0u8; GRID_HEADER_LEN];
    r.read_exact(&mut header).map_err(|_| Error::Format("truncated grid header".into()))?;
    if &header[..4] != GRID_MAGIC {
        return Err(Error::Format("bad magic, expected \"PSVH\"".into()));
    }
    if header[4] != GRID_VERSION {
        return Err(Error::Format(format!("unsupported grid version {}", header[4])));
    }
    let dim = u32::from_le_bytes(header[5..9].try_into().unwrap()) as usize;
    if !(2..=1024).contains(&dim) {
        return Err(Error::Format(format!("implausible grid dimension {dim}")));
    }
    let n = dim * dim * dim;
    let mut payload = vec![0u8; n * 4];
    r.read_exact(&mut payload).map_err(|_| Error::Format(format!("truncated payload, expected {} bytes", n * 4)))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after grid payload".into()));
    }
    let values = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    VoxelGrid::from_values(dim, values).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_grid(path: impl AsRef<Path>, grid: &VoxelGrid) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_grid(&mut w, grid)?;
    w.flush()?;
    Ok(())
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<VoxelGrid> {
    read_grid(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_size_matches_layout() {
        let g = VoxelGrid::zeros(32).unwrap();
        let mut buf = Vec::new();
        write_grid(&mut buf, &g).unwrap();
        assert_eq!(buf.len(), 9 + 4 * 32 * 32 * 32);
        assert_eq!(&buf[..5], b"PSVH\x01");
        assert_eq!(&buf[5..9], &[32, 0, 0, 0]);
    }

    #[test]
    fn bad_magic_rejected() {
        let mut buf = Vec::new();
        write_grid(&mut buf, &VoxelGrid::zeros(2).unwrap()).unwrap();
        buf[0] = b'X';
        assert!(matches!(read_grid(&buf[..]), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload_rejected() {
        let mut buf = Vec::new();
        write_grid(&mut buf, &VoxelGrid::zeros(3).unwrap()).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(matches!(read_grid(&buf[..]), Err(Error::Format(_))));
        assert!(matches!(read_grid(&buf[..4]), Err(Error::Format(_))));
    }

    #[test]
    fn out_of_range_payload_rejected() {
        let mut buf = Vec::new();
        write_grid(&mut buf, &VoxelGrid::zeros(2).unwrap()).unwrap();
        buf[9..13].copy_from_slice(&2.0f32.to_le_bytes());
        assert!(read_grid(&buf[..]).is_err());
    }

    #[test]
    fn round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.grid");
        let g = VoxelGrid::from_fn(5, |i, j, k| ((i * 31 + j * 17 + k * 7) % 11) as f32 as f64 / 10.0)
            .unwrap()
            .map(|v| v as f32 as f64);
        save_grid(&path, &g).unwrap();
        assert_eq!(load_grid(&path).unwrap(), g);
    }
}
