//! Dataset file: "HTVD", version u16, patch size u16, count u32, then per
//! patch the u8 RGB SDR samples followed by u16 RGB HDR samples, all
//! little-endian and row-major. An optional trailer follows:
//! "HTVM", u32 length, JSON (bit depth, metadata, sources, patch origins);
//! then "HTVC", u32 count, per entry u32 source id, u16 side, side²·3 bytes
//! of condition thumbnail.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{ConditionImage, PairedDataset, Patch, SourceInfo};
use crate::error::{Error, Result};
use crate::io_util::write_bytes_atomic;

pub const DATASET_MAGIC: &[u8; 4] = b"HTVD";
pub const DATASET_VERSION: u16 = 1;
const META_MAGIC: &[u8; 4] = b"HTVM";
const COND_MAGIC: &[u8; 4] = b"HTVC";

#[derive(Serialize, Deserialize)]
struct Trailer {
    hdr_bits: u8,
    metadata: serde_json::Value,
    sources: Vec<SourceInfo>,
    origins: Vec<(u32, u32, u32)>,
}

pub fn encode_dataset(ds: &PairedDataset) -> Result<Vec<u8>> {
    let n = ds.patch_size;
    let patch_bytes = n * n * 3 * 3;
    let mut out = Vec::with_capacity(12 + ds.patches.len() * patch_bytes);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    let ps = u16::try_from(n).map_err(|_| Error::Format(format!("patch size {n} exceeds u16")))?;
    out.extend_from_slice(&ps.to_le_bytes());
    let count = u32::try_from(ds.patches.len()).map_err(|_| Error::Format("too many patches".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for p in &ds.patches {
        if p.sdr.len() != n * n * 3 || p.hdr.len() != n * n * 3 {
            return Err(Error::Format(format!("patch of source {} has the wrong sample count", p.source_id)));
        }
        out.extend_from_slice(&p.sdr);
        for v in &p.hdr {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let trailer = Trailer {
        hdr_bits: ds.hdr_bits,
        metadata: ds.metadata.clone(),
        sources: ds.sources.clone(),
        origins: ds.patches.iter().map(|p| (p.source_id, p.x, p.y)).collect(),
    };
    let json = serde_json::to_vec(&trailer).map_err(|e| Error::Format(e.to_string()))?;
    out.extend_from_slice(META_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let conds: Vec<(u32, &ConditionImage)> = ds
        .sources
        .iter()
        .filter_map(|s| s.condition.as_ref().map(|c| (s.id, c)))
        .collect();
    out.extend_from_slice(COND_MAGIC);
    out.extend_from_slice(&(conds.len() as u32).to_le_bytes());
    for (id, c) in conds {
        out.extend_from_slice(&id.to_le_bytes());
        out.extend_from_slice(&(c.side as u16).to_le_bytes());
        out.extend_from_slice(&c.codes);
    }
    Ok(out)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::Io {
                path: self.path.to_path_buf(),
                message: format!("truncated dataset at byte offset {}: needed {n} more bytes", self.pos),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }
}

pub fn decode_dataset(bytes: &[u8], path: &Path) -> Result<PairedDataset> {
    let mut c = Cursor { data: bytes, pos: 0, path };
    if c.take(4)? != DATASET_MAGIC {
        return Err(Error::Format(format!("{}: not a dataset file (bad magic)", path.display())));
    }
    let version = c.u16()?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("{}: unsupported dataset version {version}", path.display())));
    }
    let n = c.u16()? as usize;
    let count = c.u32()? as usize;
    let samples = n * n * 3;
    let mut patches = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let sdr = c.take(samples)?.to_vec();
        let hdr = c
            .take(samples * 2)?
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]))
            .collect();
        patches.push(Patch { source_id: 0, x: 0, y: 0, sdr, hdr });
    }
    let mut ds = PairedDataset {
        patch_size: n,
        hdr_bits: 16,
        patches,
        sources: vec![],
        metadata: serde_json::Value::Null,
    };
    if c.remaining() == 0 {
        // Bare file: one anonymous source, samples taken at face value.
        ds.sources.push(SourceInfo {
            id: 0,
            name: "unknown".into(),
            width: n as u32,
            height: n as u32,
            sdr_tone: None,
            hdr_tone: None,
            condition: None,
        });
        return Ok(ds);
    }
    let at = c.pos;
    if c.take(4)? != META_MAGIC {
        return Err(Error::Format(format!("{}: unexpected bytes after patches at offset {at}", path.display())));
    }
    let len = c.u32()? as usize;
    let trailer: Trailer = serde_json::from_slice(c.take(len)?)
        .map_err(|e| Error::Format(format!("{}: bad metadata: {e}", path.display())))?;
    if trailer.origins.len() != ds.patches.len() {
        return Err(Error::Format(format!("{}: metadata lists {} patches, file has {}", path.display(), trailer.origins.len(), ds.patches.len())));
    }
    for (p, (s, x, y)) in ds.patches.iter_mut().zip(trailer.origins) {
        (p.source_id, p.x, p.y) = (s, x, y);
    }
    ds.hdr_bits = trailer.hdr_bits;
    ds.metadata = trailer.metadata;
    ds.sources = trailer.sources;
    if c.take(4)? != COND_MAGIC {
        return Err(Error::Format(format!("{}: missing condition block", path.display())));
    }
    for _ in 0..c.u32()? {
        let id = c.u32()?;
        let side = c.u16()? as usize;
        let codes = c.take(side * side * 3)?.to_vec();
        let src = ds
            .sources
            .iter_mut()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::Format(format!("{}: condition for unknown source {id}", path.display())))?;
        src.condition = Some(ConditionImage { side, codes });
    }
    if c.remaining() != 0 {
        return Err(Error::Format(format!("{}: {} trailing bytes", path.display(), c.remaining())));
    }
    Ok(ds)
}

pub fn write_dataset(ds: &PairedDataset, path: &Path) -> Result<()> {
    write_bytes_atomic(path, &encode_dataset(ds)?)
}

pub fn read_dataset(path: &Path) -> Result<PairedDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes, path)
}
