//! IDX files as used by the MNIST family: big-endian `u32` magic
//! (`0x00000801` labels, `0x00000803` images), big-endian `u32` dimensions,
//! then raw `u8` payload.

use std::fs;
use std::path::Path;

use super::{Dataset, Split};
use crate::error::{MgeError, Result};

const LABEL_MAGIC: u32 = 0x0000_0801;
const IMAGE_MAGIC: u32 = 0x0000_0803;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        let Some(chunk) = self.bytes.get(self.pos..self.pos + 4) else {
            return Err(MgeError::Format {
                offset: self.pos as u64,
                message: format!("truncated while reading {what}"),
            });
        };
        self.pos += 4;
        Ok(u32::from_be_bytes(chunk.try_into().unwrap()))
    }

    fn payload(&mut self, len: usize) -> Result<&[u8]> {
        let end = self.pos + len;
        if end > self.bytes.len() {
            return Err(MgeError::Format {
                offset: self.bytes.len() as u64,
                message: format!(
                    "payload truncated: expected {len} bytes from offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let magic = self.u32("magic")?;
        if magic != expected {
            return Err(MgeError::Format {
                offset: 0,
                message: format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}"),
            });
        }
        Ok(())
    }
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut cur = Cursor { bytes, pos: 0 };
    cur.magic(LABEL_MAGIC)?;
    let count = cur.u32("label count")? as usize;
    Ok(cur.payload(count)?.to_vec())
}

pub fn read_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let mut cur = Cursor { bytes, pos: 0 };
    cur.magic(IMAGE_MAGIC)?;
    let count = cur.u32("image count")? as usize;
    let rows = cur.u32("row count")? as usize;
    let cols = cur.u32("column count")? as usize;
    let pixels = cur.payload(count * rows * cols)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn write_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for d in [images.count, images.rows, images.cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| MgeError::storage(path, e))
}

/// Loads an image/label IDX pair. Pixels are scaled to `[0, 1]` and each
/// example has shape `[1, rows, cols]`. The class count is taken as
/// `max(10, max label + 1)`.
pub fn load_idx(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let imgs = read_idx_images(&read_file(images)?)?;
    let labs = read_idx_labels(&read_file(labels)?)?;
    if imgs.count != labs.len() {
        return Err(MgeError::Format {
            offset: 4,
            message: format!("{} images but {} labels", imgs.count, labs.len()),
        });
    }
    let classes = labs
        .iter()
        .map(|&l| l as usize + 1)
        .max()
        .unwrap_or(0)
        .max(10);
    let features = imgs.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Dataset::new(
        features,
        vec![1, imgs.rows, imgs.cols],
        labs.into_iter().map(usize::from).collect(),
        classes,
        split,
    )
}
