//! IDX files: big-endian magic `0x00000803` for a 3-D `u8` image tensor and
//! `0x00000801` for a 1-D `u8` label vector.

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| Error::Format {
            offset: self.pos as u64,
            message: format!("truncated header while reading {what}"),
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(Error::Format {
                offset: self.bytes.len() as u64,
                message: format!("truncated {what}: expected {n} bytes, found {available}"),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

fn check_magic(found: u32, expected: u32) -> Result<()> {
    if found != expected {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic 0x{found:08x}, expected 0x{expected:08x}"),
        });
    }
    Ok(())
}

/// Returns `(count, height, width, pixels scaled to [0, 1])`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f64>)> {
    let mut cur = Cursor { bytes, pos: 0 };
    check_magic(cur.u32("magic")?, IMAGES_MAGIC)?;
    let n = cur.u32("image count")? as usize;
    let h = cur.u32("row count")? as usize;
    let w = cur.u32("column count")? as usize;
    let payload = cur.take(n * h * w, "image payload")?;
    Ok((n, h, w, payload.iter().map(|&b| b as f64 / 255.0).collect()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut cur = Cursor { bytes, pos: 0 };
    check_magic(cur.u32("magic")?, LABELS_MAGIC)?;
    let n = cur.u32("label count")? as usize;
    Ok(cur.take(n, "label payload")?.to_vec())
}

pub fn encode_idx_images(n: usize, h: usize, w: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Loads an image/label file pair. The class count is one more than the
/// largest label present.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let (n, h, w, pixels) = parse_idx_images(&std::fs::read(images_path)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels_path)?)?;
    if labels.len() != n {
        return Err(Error::Format {
            offset: 4,
            message: format!("image count {n} does not match label count {}", labels.len()),
        });
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m as usize + 1).max(2);
    let features = Matrix::new(n, h * w, pixels)?;
    let mut ds = Dataset::new(
        features,
        labels.into_iter().map(usize::from).collect(),
        classes,
        format!("idx:{}", images_path.display()),
    )?;
    ds.image_shape = Some((h, w));
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_defines_shape() {
        let pixels: Vec<u8> = (0..10 * 28 * 28).map(|i| (i % 256) as u8).collect();
        let bytes = encode_idx_images(10, 28, 28, &pixels);
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        let (n, h, w, px) = parse_idx_images(&bytes).unwrap();
        assert_eq!((n, h, w), (10, 28, 28));
        assert_eq!(px.len(), 10 * 784);
        assert_eq!(px[255], 1.0);
        assert!(px.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn labels_round_trip() {
        let labels: Vec<u8> = (0..10).map(|i| i % 4).collect();
        let bytes = encode_idx_labels(&labels);
        assert_eq!(&bytes[..4], &[0, 0, 8, 1]);
        assert_eq!(parse_idx_labels(&bytes).unwrap(), labels);
    }

    #[test]
    fn wrong_magic_and_truncation() {
        let mut bytes = encode_idx_labels(&[1, 2, 3]);
        assert!(parse_idx_images(&bytes).is_err());
        bytes.pop();
        match parse_idx_labels(&bytes).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 10),
            e => panic!("{e}"),
        }
        match parse_idx_images(&[0, 0, 8]).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 0),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        std::fs::write(&img, encode_idx_images(10, 2, 2, &[7; 40])).unwrap();
        std::fs::write(&lab, encode_idx_labels(&[0; 9])).unwrap();
        let err = load_idx(&img, &lab).unwrap_err();
        assert!(err.to_string().contains("does not match"), "{err}");

        std::fs::write(&lab, encode_idx_labels(&[0, 1, 2, 3, 0, 1, 2, 3, 0, 1])).unwrap();
        let ds = load_idx(&img, &lab).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.classes(), 4);
        assert_eq!(ds.image_shape, Some((2, 2)));
    }
}
