//! Patch dataset container and its on-disk format.
//!
//! Layout (little-endian): magic "MDDS", format version, patch size N,
//! neighbor count K, sample count, a provenance string, then the records.
//! Each record is seed face, N face ids, N x 3 noisy normals, a ground-truth
//! flag plus N x 3 rows when set, and the N x K neighbor index. A CRC32 of
//! everything before it closes the file. Records are validated on write and
//! again on read, so a loaded dataset is usable without further checks.

use crate::net::NeighborTable;
use crate::patch::PatchSample;
use crate::{Error, Result};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MDDS";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PatchDataset {
    pub patch_size: usize,
    pub neighbor_count: usize,
    /// Free-form description of where the samples came from (meshes, noise
    /// settings, seeds). Carried verbatim through write and read.
    pub provenance: String,
    pub samples: Vec<PatchSample>,
}

impl PatchDataset {
    pub fn new(
        patch_size: usize,
        neighbor_count: usize,
        provenance: impl Into<String>,
        samples: Vec<PatchSample>,
    ) -> Result<Self> {
        let ds = PatchDataset {
            patch_size,
            neighbor_count,
            provenance: provenance.into(),
            samples,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            s.validate()
                .map_err(|e| Error::DataFormat(format!("sample {i}: {e}")))?;
            if s.n() != self.patch_size {
                return Err(Error::DataFormat(format!(
                    "sample {i} has {} faces, dataset says {}",
                    s.n(),
                    self.patch_size
                )));
            }
            if s.k() != self.neighbor_count {
                return Err(Error::DataFormat(format!(
                    "sample {i} has {} neighbors per face, dataset says {}",
                    s.k(),
                    self.neighbor_count
                )));
            }
        }
        Ok(())
    }
}

fn push_u32(buf: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v: u32 = v
        .try_into()
        .map_err(|_| Error::DataFormat(format!("{what} {v} exceeds the format's 32-bit range")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn write_dataset(path: impl AsRef<Path>, dataset: &PatchDataset) -> Result<()> {
    dataset.validate()?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    push_u32(&mut buf, dataset.patch_size, "patch size")?;
    push_u32(&mut buf, dataset.neighbor_count, "neighbor count")?;
    push_u32(&mut buf, dataset.samples.len(), "sample count")?;
    push_u32(&mut buf, dataset.provenance.len(), "provenance length")?;
    buf.extend_from_slice(dataset.provenance.as_bytes());
    for s in &dataset.samples {
        push_u32(&mut buf, s.seed_face, "seed face")?;
        for &f in &s.face_ids {
            push_u32(&mut buf, f, "face id")?;
        }
        for row in &s.normals {
            for &v in row {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        match &s.gt_normals {
            Some(gt) => {
                buf.push(1);
                for row in gt {
                    for &v in row {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
            None => buf.push(0),
        }
        for &j in s.neighbor_index.rows() {
            push_u32(&mut buf, j, "neighbor row")?;
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    std::fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::DataFormat(format!(
                "dataset truncated at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f32_rows(&mut self, n: usize) -> Result<Vec<[f32; 3]>> {
        let raw = self.take(n * 12)?;
        Ok(raw
            .chunks_exact(12)
            .map(|c| {
                [
                    f32::from_le_bytes(c[0..4].try_into().unwrap()),
                    f32::from_le_bytes(c[4..8].try_into().unwrap()),
                    f32::from_le_bytes(c[8..12].try_into().unwrap()),
                ]
            })
            .collect())
    }
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<PatchDataset> {
    let bytes = std::fs::read(&path)?;
    if bytes.len() < 4 {
        return Err(Error::DataFormat("dataset shorter than its checksum".into()));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::DataFormat(format!(
            "dataset checksum mismatch: stored {stored:#010x}, computed {computed:#010x}"
        )));
    }
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::DataFormat("not a patch dataset (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::DataFormat(format!(
            "unsupported dataset version {version}"
        )));
    }
    let n = r.u32()? as usize;
    let k = r.u32()? as usize;
    let count = r.u32()? as usize;
    let prov_len = r.u32()? as usize;
    let provenance = String::from_utf8(r.take(prov_len)?.to_vec())
        .map_err(|_| Error::DataFormat("provenance is not valid UTF-8".into()))?;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let seed_face = r.u32()? as usize;
        let face_ids: Vec<usize> = r
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let normals = r.f32_rows(n)?;
        let gt_normals = match r.u8()? {
            0 => None,
            1 => Some(r.f32_rows(n)?),
            other => {
                return Err(Error::DataFormat(format!(
                    "ground-truth flag must be 0 or 1, found {other}"
                )))
            }
        };
        let idx: Vec<usize> = r
            .take(n * k * 4)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        samples.push(PatchSample {
            seed_face,
            face_ids,
            normals,
            neighbor_index: NeighborTable::new(n, k, idx)?,
            gt_normals,
        });
    }
    if r.pos != body.len() {
        return Err(Error::DataFormat(format!(
            "{} unread bytes after the last record",
            body.len() - r.pos
        )));
    }
    PatchDataset::new(n, k, provenance, samples)
}
