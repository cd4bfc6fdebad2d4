use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Dataset, Split};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn format_err(file: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        file: file.to_path_buf(),
        offset: offset as u64,
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, file: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| format_err(file, bytes.len(), "truncated header"))
}

/// Parses an IDX3 image file into `(count, rows, cols, pixels/255)`.
pub fn parse_idx_images(bytes: &[u8], file: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    let magic = be_u32(bytes, 0, file)?;
    if magic != IMAGE_MAGIC {
        return Err(format_err(file, 0, format!("bad image magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, file)? as usize;
    let rows = be_u32(bytes, 8, file)? as usize;
    let cols = be_u32(bytes, 12, file)? as usize;
    let need = 16 + n * rows * cols;
    if bytes.len() < need {
        return Err(format_err(
            file,
            bytes.len(),
            format!("truncated: header promises {n} images of {rows}x{cols} ({need} bytes)"),
        ));
    }
    if bytes.len() > need {
        return Err(format_err(file, need, "trailing bytes after the last image"));
    }
    let pixels = bytes[16..].iter().map(|&p| p as f32 / 255.0).collect();
    Ok((n, rows, cols, pixels))
}

pub fn parse_idx_labels(bytes: &[u8], file: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, file)?;
    if magic != LABEL_MAGIC {
        return Err(format_err(file, 0, format!("bad label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, file)? as usize;
    if bytes.len() != 8 + n {
        return Err(format_err(
            file,
            bytes.len().min(8 + n),
            format!("header promises {n} labels, file holds {}", bytes.len().saturating_sub(8)),
        ));
    }
    if let Some(pos) = bytes[8..].iter().position(|&l| l > 9) {
        return Err(format_err(file, 8 + pos, format!("label {} out of range", bytes[8 + pos])));
    }
    Ok(bytes[8..].to_vec())
}

pub fn load_mnist_idx(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(&std::fs::read(images)?, images)?;
    let labels_v = parse_idx_labels(&std::fs::read(labels)?, labels)?;
    if labels_v.len() != n {
        return Err(format_err(
            labels,
            4,
            format!("{} labels but {} images in {}", labels_v.len(), n, images.display()),
        ));
    }
    Dataset::new(Tensor::from_vec(&[n, 1, rows, cols], pixels)?, labels_v, split)
}

/// Loads the standard file names from `root` (e.g. `$SPARSELAB_DATA/mnist`).
pub fn load_mnist(root: &Path, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    load_mnist_idx(
        &root.join(format!("{prefix}-images-idx3-ubyte")),
        &root.join(format!("{prefix}-labels-idx1-ubyte")),
        split,
    )
}
