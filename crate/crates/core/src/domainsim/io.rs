//! Binary dataset files.
//!
//! Layout (little-endian): magic `GDSD`, version `u8`, name length `u16`,
//! UTF-8 name, `u32` samples, `u32` feature dim, `u16` classes, `u8`
//! has-labels, `f32` features row-major, `u16` labels if present, then a
//! CRC32 of every preceding byte.

use std::fs;
use std::path::Path;

use super::dataset::DomainDataset;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GDSD";
pub const FORMAT_VERSION: u8 = 1;

pub fn encode_dataset(d: &DomainDataset) -> Result<Vec<u8>> {
    let name = d.name().as_bytes();
    let name_len = u16::try_from(name.len())
        .map_err(|_| Error::Data(format!("dataset name of {} bytes is too long", name.len())))?;
    let n = u32::try_from(d.len()).map_err(|_| Error::Data("too many samples".into()))?;
    let dim = u32::try_from(d.feature_dim()).map_err(|_| Error::Data("feature dim too large".into()))?;
    let classes = u16::try_from(d.num_classes()).map_err(|_| Error::Data("too many classes".into()))?;
    let labels_len = d.labels().map_or(0, |l| 2 * l.len());
    let mut buf = Vec::with_capacity(4 + 1 + 2 + name.len() + 11 + 4 * d.features().len() + labels_len + 4);
    buf.extend_from_slice(MAGIC);
    buf.push(FORMAT_VERSION);
    buf.extend_from_slice(&name_len.to_le_bytes());
    buf.extend_from_slice(name);
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&dim.to_le_bytes());
    buf.extend_from_slice(&classes.to_le_bytes());
    buf.push(d.labels().is_some() as u8);
    for v in d.features() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(labels) = d.labels() {
        for &y in labels {
            buf.extend_from_slice(&(y as u16).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Parse {
                offset: self.pos,
                msg: format!("unexpected end of file reading {what} ({n} bytes)"),
            }
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Inverse of [`encode_dataset`]. Raster layout and provenance are not part
/// of the format and come back empty.
pub fn decode_dataset(bytes: &[u8]) -> Result<DomainDataset> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            msg: "bad magic, not a dataset file".into(),
        });
    }
    let version = r.u8("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let name_len = r.u16("name length")? as usize;
    let name_offset = r.pos;
    let name = std::str::from_utf8(r.take(name_len, "name")?)
        .map_err(|e| Error::Parse {
            offset: name_offset + e.valid_up_to(),
            msg: "name is not valid UTF-8".into(),
        })?
        .to_string();
    let n = r.u32("sample count")? as usize;
    let dim = r.u32("feature dim")? as usize;
    let classes = r.u16("class count")? as usize;
    let flag_offset = r.pos;
    let has_labels = match r.u8("label flag")? {
        0 => false,
        1 => true,
        other => {
            return Err(Error::Parse {
                offset: flag_offset,
                msg: format!("label flag must be 0 or 1, got {other}"),
            })
        }
    };
    let feat_bytes = n
        .checked_mul(dim)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::Parse {
            offset: r.pos,
            msg: "feature block size overflows".into(),
        })?;
    let features: Vec<f32> = r
        .take(feat_bytes, "features")?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels = if has_labels {
        Some(
            r.take(2 * n, "labels")?
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes(c.try_into().unwrap()) as usize)
                .collect::<Vec<_>>(),
        )
    } else {
        None
    };
    let body_end = r.pos;
    let stored = r.u32("checksum")?;
    if r.pos != bytes.len() {
        return Err(Error::Parse {
            offset: r.pos,
            msg: format!("{} trailing bytes after checksum", bytes.len() - r.pos),
        });
    }
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(Error::Integrity { stored, computed });
    }
    DomainDataset::new(name, features, dim, labels, classes)
}

pub fn save_dataset(d: &DomainDataset, path: &Path) -> Result<()> {
    let bytes = encode_dataset(d)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<DomainDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DomainDataset {
        let feats = vec![0.0, 1.5, -2.25, f32::MIN_POSITIVE, 3.0e7, 0.1];
        DomainDataset::new("dömain", feats, 2, Some(vec![0, 2, 1]), 3).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let d = sample();
        let back = decode_dataset(&encode_dataset(&d).unwrap()).unwrap();
        assert_eq!(back, d);
        let unlabeled = DomainDataset::new("u", vec![0.5; 4], 2, None, 2).unwrap();
        assert_eq!(decode_dataset(&encode_dataset(&unlabeled).unwrap()).unwrap(), unlabeled);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.gdsd");
        save_dataset(&sample(), &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), sample());
        assert!(matches!(load_dataset(&dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn every_truncation_is_a_parse_error() {
        let bytes = encode_dataset(&sample()).unwrap();
        for len in 0..bytes.len() {
            match decode_dataset(&bytes[..len]) {
                Err(Error::Parse { offset, .. }) => assert!(offset <= len),
                other => panic!("length {len}: {other:?}"),
            }
        }
    }

    #[test]
    fn version_and_checksum_checked() {
        let mut bytes = encode_dataset(&sample()).unwrap();
        let mut bumped = bytes.clone();
        bumped[4] = 2;
        assert!(matches!(decode_dataset(&bumped), Err(Error::UnsupportedVersion(2))));
        let last_feature = bytes.len() - 4 - 6 - 1;
        bytes[last_feature] ^= 0x40;
        assert!(matches!(decode_dataset(&bytes), Err(Error::Integrity { .. })));
    }
}
