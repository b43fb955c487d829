//! IDX files: big-endian magic `0x00000803` + (count, rows, cols) + pixel
//! bytes for images, `0x00000801` + count + label bytes for labels.

use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Real;

use super::LabeledDataset;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Truncated {
            needed: offset + 4,
            available: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

fn payload(bytes: &[u8], start: usize, len: usize) -> Result<&[u8]> {
    bytes.get(start..start + len).ok_or(Error::Truncated {
        needed: start + len,
        available: bytes.len(),
    })
}

/// Parses image and label buffers; pixels are scaled from `0..=255` to `[0, 1]`.
pub fn parse_idx<T: Real>(image_bytes: &[u8], label_bytes: &[u8]) -> Result<LabeledDataset<T>> {
    check_magic(image_bytes, IMAGE_MAGIC)?;
    let count = read_u32(image_bytes, 4)? as usize;
    let rows = read_u32(image_bytes, 8)? as usize;
    let cols = read_u32(image_bytes, 12)? as usize;
    let pixels = payload(image_bytes, 16, count * rows * cols)?;

    check_magic(label_bytes, LABEL_MAGIC)?;
    let label_count = read_u32(label_bytes, 4)? as usize;
    let labels: Vec<usize> = payload(label_bytes, 8, label_count)?
        .iter()
        .map(|&b| usize::from(b))
        .collect();
    if label_count != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: label_count,
        });
    }

    let scale = T::lit(255.0);
    let data = pixels
        .iter()
        .map(|&p| T::from_count(usize::from(p)) / scale)
        .collect();
    let images = Matrix::from_vec(count, rows * cols, data)?;
    let class_count = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    LabeledDataset::new(images, labels, class_count, rows, cols)
}

pub fn load_idx<T: Real>(
    image_path: impl AsRef<Path>,
    label_path: impl AsRef<Path>,
) -> Result<LabeledDataset<T>> {
    let images = std::fs::read(image_path)?;
    let labels = std::fs::read(label_path)?;
    parse_idx(&images, &labels)
}

/// Encodes `count` images of `rows × cols` bytes.
pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let count = pixels.len().checked_div(rows * cols).unwrap_or(0);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
