use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Dataset, Split};

/// One label byte followed by a 3×32×32 channel-major image.
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;

/// Splits a CIFAR-10 binary batch into labels and `/255`-scaled pixels.
pub fn parse_cifar10_records(bytes: &[u8], file: &Path) -> Result<(Vec<u8>, Vec<f32>)> {
    if bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::Format {
            file: file.to_path_buf(),
            offset: (bytes.len() - bytes.len() % CIFAR_RECORD_BYTES) as u64,
            message: format!(
                "size {} is not a multiple of the {CIFAR_RECORD_BYTES}-byte record",
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD_BYTES - 1));
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        if rec[0] > 9 {
            return Err(Error::Format {
                file: file.to_path_buf(),
                offset: (r * CIFAR_RECORD_BYTES) as u64,
                message: format!("label {} out of range", rec[0]),
            });
        }
        labels.push(rec[0]);
        pixels.extend(rec[1..].iter().map(|&p| p as f32 / 255.0));
    }
    Ok((labels, pixels))
}

pub fn load_cifar10_binary(paths: &[PathBuf], split: Split) -> Result<Dataset> {
    let (mut labels, mut pixels) = (Vec::new(), Vec::new());
    for path in paths {
        let (l, p) = parse_cifar10_records(&std::fs::read(path)?, path)?;
        labels.extend(l);
        pixels.extend(p);
    }
    let n = labels.len();
    Dataset::new(Tensor::from_vec(&[n, 3, 32, 32], pixels)?, labels, split)
}

/// Standard batch files under `root` (e.g. `$SPARSELAB_DATA/cifar-10-batches-bin`).
pub fn load_cifar10(root: &Path, split: Split) -> Result<Dataset> {
    let paths: Vec<PathBuf> = match split {
        Split::Train => (1..=5)
            .map(|k| root.join(format!("data_batch_{k}.bin")))
            .collect(),
        Split::Test => vec![root.join("test_batch.bin")],
    };
    load_cifar10_binary(&paths, split)
}
