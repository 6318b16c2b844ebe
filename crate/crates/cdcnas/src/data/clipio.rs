//! The CDCV clip file format.
//!
//! Little-endian layout:
//!
//! ```text
//! magic   4 bytes  "CDCV"
//! version u16      = 1
//! label   u16
//! nmod    u8
//! per modality:
//!   name_len u8, name (ASCII),
//!   extents  4 x u32  (C, T, H, W),
//!   payload  C*T*H*W f32
//! ```

use crate::error::{Error, Result};
use crate::tensor::{Shape5, Tensor};
use std::io::Write;
use std::path::Path;

pub const CLIP_MAGIC: [u8; 4] = *b"CDCV";
pub const CLIP_VERSION: u16 = 1;

/// One labeled multi-modal clip; tensors are (1, C, T, H, W) in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ClipRecord {
    pub label: u16,
    pub modalities: Vec<(String, Tensor<f32>)>,
}

impl ClipRecord {
    pub fn modality(&self, name: &str) -> Result<&Tensor<f32>> {
        self.modalities
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::MissingArtifact(format!("clip has no modality '{name}'")))
    }

    /// Common (T, H, W) extents across modalities.
    pub fn extents(&self) -> Result<(usize, usize, usize)> {
        let first = self
            .modalities
            .first()
            .ok_or_else(|| Error::Corrupt("clip with no modalities".into()))?;
        let s = first.1.shape();
        for (n, t) in &self.modalities {
            let ts = t.shape();
            if (ts.t, ts.h, ts.w) != (s.t, s.h, s.w) {
                return Err(Error::Corrupt(format!(
                    "modality '{n}' extents {} disagree with '{}' {}",
                    ts, first.0, s
                )));
            }
        }
        Ok((s.t, s.h, s.w))
    }
}

pub fn write_clip(path: &Path, clip: &ClipRecord) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(&CLIP_MAGIC);
    buf.extend_from_slice(&CLIP_VERSION.to_le_bytes());
    buf.extend_from_slice(&clip.label.to_le_bytes());
    if clip.modalities.len() > u8::MAX as usize {
        return Err(Error::config("too many modalities for the clip format"));
    }
    buf.push(clip.modalities.len() as u8);
    for (name, tensor) in &clip.modalities {
        if !name.is_ascii() || name.len() > u8::MAX as usize {
            return Err(Error::config(format!("modality name '{name}' not ASCII")));
        }
        let s = tensor.shape();
        if s.n != 1 {
            return Err(Error::shape("clip tensors must have batch extent 1"));
        }
        buf.push(name.len() as u8);
        buf.extend_from_slice(name.as_bytes());
        for v in [s.c, s.t, s.h, s.w] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Corrupt(format!(
                "truncated clip file: wanted {} bytes at offset {}, file has {}",
                n,
                self.pos,
                self.data.len()
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
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

pub fn read_clip(path: &Path) -> Result<ClipRecord> {
    if !path.exists() {
        return Err(Error::MissingArtifact(format!(
            "clip file {} not found",
            path.display()
        )));
    }
    let data = std::fs::read(path)?;
    parse_clip(&data)
}

pub fn parse_clip(data: &[u8]) -> Result<ClipRecord> {
    let mut cur = Cursor { data, pos: 0 };
    let magic = cur.take(4)?;
    if magic != CLIP_MAGIC {
        return Err(Error::Corrupt(format!(
            "bad magic {:02x?}, expected \"CDCV\"",
            magic
        )));
    }
    let version = cur.u16()?;
    if version != CLIP_VERSION {
        return Err(Error::Corrupt(format!("unknown clip version {version}")));
    }
    let label = cur.u16()?;
    let nmod = cur.u8()? as usize;
    let mut modalities = Vec::with_capacity(nmod);
    for _ in 0..nmod {
        let name_len = cur.u8()? as usize;
        let name_bytes = cur.take(name_len)?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::Corrupt("modality name is not valid ASCII".into()))?
            .to_string();
        let c = cur.u32()? as usize;
        let t = cur.u32()? as usize;
        let h = cur.u32()? as usize;
        let w = cur.u32()? as usize;
        let numel = c
            .checked_mul(t)
            .and_then(|v| v.checked_mul(h))
            .and_then(|v| v.checked_mul(w))
            .ok_or_else(|| Error::Corrupt("clip extents overflow".into()))?;
        let payload = cur.take(numel * 4)?;
        let mut values = Vec::with_capacity(numel);
        for chunk in payload.chunks_exact(4) {
            values.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
        }
        modalities.push((name, Tensor::new(Shape5::new(1, c, t, h, w), values)?));
    }
    if cur.pos != data.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes after clip payload",
            data.len() - cur.pos
        )));
    }
    Ok(ClipRecord { label, modalities })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_clip() -> ClipRecord {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        ClipRecord {
            label: 3,
            modalities: vec![
                (
                    "rgb".into(),
                    Tensor::uniform(Shape5::new(1, 3, 4, 5, 6), 0.0, 1.0, &mut rng),
                ),
                (
                    "depth".into(),
                    Tensor::uniform(Shape5::new(1, 1, 4, 5, 6), 0.0, 1.0, &mut rng),
                ),
            ],
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.cdcv");
        let clip = sample_clip();
        write_clip(&path, &clip).unwrap();
        let back = read_clip(&path).unwrap();
        assert_eq!(clip, back);
    }

    #[test]
    fn corrupted_magic_is_distinct_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.cdcv");
        write_clip(&path, &sample_clip()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        let err = parse_clip(&bytes).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn unknown_version_is_distinct_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.cdcv");
        write_clip(&path, &sample_clip()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        let err = parse_clip(&bytes).unwrap_err();
        assert!(err.to_string().contains("unknown clip version"), "{err}");
    }

    #[test]
    fn inflated_extent_reports_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.cdcv");
        write_clip(&path, &sample_clip()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // First extent (C of "rgb") lives right after magic+version+label+nmod+len+name.
        let off = 4 + 2 + 2 + 1 + 1 + 3;
        bytes[off..off + 4].copy_from_slice(&1000u32.to_le_bytes());
        let err = parse_clip(&bytes).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn short_file_reports_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.cdcv");
        write_clip(&path, &sample_clip()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        for cut in [3usize, 6, 10, bytes.len() - 5] {
            let err = parse_clip(&bytes[..cut]).unwrap_err();
            assert!(err.to_string().contains("truncated"), "cut {cut}: {err}");
        }
    }
}
