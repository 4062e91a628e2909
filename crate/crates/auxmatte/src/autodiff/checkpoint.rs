//! Checkpoint serialization.
//!
//! Layout: b"CKPT", u32 LE entry count, then per entry a u16 LE name length,
//! the UTF-8 name, a u8 rank, rank u32 LE dims, and the f32 LE payload whose
//! length is the dim product. Round trips are bit-exact.

use crate::error::{Error, Result};
use crate::io::write_atomic;
use std::path::Path;

const MAGIC: &[u8; 4] = b"CKPT";

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn write_checkpoint(path: &Path, entries: &[CheckpointEntry]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    let count = u32::try_from(entries.len())
        .map_err(|_| Error::Format("too many checkpoint entries".into()))?;
    buf.extend_from_slice(&count.to_le_bytes());
    for e in entries {
        let name_len = u16::try_from(e.name.len())
            .map_err(|_| Error::Format(format!("name too long: {}", e.name)))?;
        let rank = u8::try_from(e.dims.len())
            .map_err(|_| Error::Format(format!("rank too high for {}", e.name)))?;
        let numel: usize = e.dims.iter().product();
        if numel != e.data.len() {
            return Err(Error::Format(format!(
                "entry {} has {} values for dims {:?}",
                e.name,
                e.data.len(),
                e.dims
            )));
        }
        buf.extend_from_slice(&name_len.to_le_bytes());
        buf.extend_from_slice(e.name.as_bytes());
        buf.push(rank);
        for &d in &e.dims {
            let d =
                u32::try_from(d).map_err(|_| Error::Format(format!("dim too large: {d}")))?;
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for &v in &e.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &buf)
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<CheckpointEntry>> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    let magic = cur.take(4)?;
    if magic != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let count = cur.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Format("checkpoint name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u32()? as usize);
        }
        let numel: usize = dims.iter().product();
        let raw = cur.take(numel * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push(CheckpointEntry { name, dims, data });
    }
    if cur.pos != buf.len() {
        return Err(Error::Format(format!(
            "trailing bytes in checkpoint: {} unread",
            buf.len() - cur.pos
        )));
    }
    Ok(entries)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample_entries() -> Vec<CheckpointEntry> {
        vec![
            CheckpointEntry {
                name: "enc1.weight".into(),
                dims: vec![2, 3, 3, 3],
                data: (0..54).map(|i| i as f32 * 0.125 - 3.0).collect(),
            },
            CheckpointEntry {
                name: "enc1.bias".into(),
                dims: vec![2],
                data: vec![-0.0, 1.5e-7],
            },
            CheckpointEntry {
                name: "scalar".into(),
                dims: vec![],
                data: vec![42.0],
            },
        ]
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let entries = sample_entries();
        write_checkpoint(&path, &entries).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back.len(), entries.len());
        for (a, b) in entries.iter().zip(&back) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.dims, b.dims);
            assert_eq!(a.data.len(), b.data.len());
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOPE\x00\x00\x00\x00").unwrap();
        assert!(read_checkpoint(&path).is_err());
    }

    #[test]
    fn truncation_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        write_checkpoint(&path, &sample_entries()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_checkpoint(&path).is_err());
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        write_checkpoint(&path, &sample_entries()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_checkpoint(&path).is_err());
    }

    #[test]
    fn mismatched_dims_refuse_to_write() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let bad = vec![CheckpointEntry {
            name: "x".into(),
            dims: vec![2, 2],
            data: vec![1.0; 3],
        }];
        assert!(write_checkpoint(&path, &bad).is_err());
        assert!(!path.exists());
    }
}
