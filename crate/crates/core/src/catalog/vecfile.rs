//! Binary vector file shared by embedding (`EMB1`) and index (`IDX1`) files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes ASCII
//! dim      u32
//! count    u32
//! count × { id_len u32, id UTF-8 bytes, dim × f32 }
//! ```

use std::io::{Read, Write};

use super::CatalogError;

pub const EMBEDDING_MAGIC: [u8; 4] = *b"EMB1";
pub const INDEX_MAGIC: [u8; 4] = *b"IDX1";

/// Decoded contents of a vector file.
#[derive(Debug, Clone, PartialEq)]
pub struct VecFile {
    pub magic: [u8; 4],
    pub dim: usize,
    pub records: Vec<(String, Vec<f32>)>,
}

impl VecFile {
    pub fn encode(&self) -> Result<Vec<u8>, CatalogError> {
        let dim = u32::try_from(self.dim).map_err(|_| CatalogError::Format("dimension exceeds u32".into()))?;
        let count = u32::try_from(self.records.len())
            .map_err(|_| CatalogError::Format("record count exceeds u32".into()))?;
        let mut out = Vec::with_capacity(12 + self.records.len() * (8 + self.dim * 4));
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&dim.to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        for (id, values) in &self.records {
            if values.len() != self.dim {
                return Err(CatalogError::DimensionMismatch {
                    id: id.clone(),
                    expected: self.dim,
                    found: values.len(),
                });
            }
            let id_len = u32::try_from(id.len()).map_err(|_| CatalogError::Format("id too long".into()))?;
            out.extend_from_slice(&id_len.to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), CatalogError> {
        w.write_all(&self.encode()?)?;
        Ok(())
    }

    /// Decodes a vector file, requiring `expected_magic`.
    pub fn decode(bytes: &[u8], expected_magic: [u8; 4]) -> Result<Self, CatalogError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = cur.take(4, "magic")?.try_into().expect("4 bytes");
        if magic != expected_magic {
            return Err(CatalogError::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&magic),
                String::from_utf8_lossy(&expected_magic)
            )));
        }
        let dim = cur.u32("dimension")? as usize;
        let count = cur.u32("count")? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 20));
        for n in 0..count {
            let id_len = cur.u32("id length")? as usize;
            let id = std::str::from_utf8(cur.take(id_len, "id")?)
                .map_err(|_| CatalogError::Format(format!("record {n}: id is not valid UTF-8")))?
                .to_owned();
            let raw = cur.take(dim * 4, "vector")?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            records.push((id, values));
        }
        if cur.pos != bytes.len() {
            return Err(CatalogError::Format(format!(
                "{} trailing bytes after {count} records",
                bytes.len() - cur.pos
            )));
        }
        Ok(Self { magic, dim, records })
    }

    pub fn read_from(mut r: impl Read, expected_magic: [u8; 4]) -> Result<Self, CatalogError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::decode(&buf, expected_magic)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CatalogError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CatalogError::Truncated(format!("{what} at byte offset {}", self.pos))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32, CatalogError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}
