//! Dataset loaders and run persistence.

mod checkpoint;
mod cifar;
mod mnist;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use checkpoint::{
    checkpoint_exists, fnv1a64, load_checkpoint, load_masks, read_tensor_file, save_checkpoint, save_masks,
    write_tensor_file, Checkpoint, CheckpointManifest, MaskManifest, TensorEntry,
    CHECKPOINT_VERSION,
};
pub use cifar::{load_cifar10, load_cifar10_binary, parse_cifar10_records, CIFAR_RECORD_BYTES};
pub use mnist::{load_mnist, load_mnist_idx, parse_idx_images, parse_idx_labels};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Images scaled to `[0, 1]`, shape `(N, C, H, W)`, with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<u8>,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<u8>, split: Split) -> Result<Self> {
        if images.shape().is_empty() || images.shape()[0] != labels.len() {
            return Err(Error::Dimension(format!(
                "{} labels for images of shape {:?}",
                labels.len(),
                images.shape()
            )));
        }
        Ok(Dataset {
            images,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Elements per example.
    pub fn example_size(&self) -> usize {
        self.images.shape()[1..].iter().product()
    }

    pub fn example_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// The first `n` examples.
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let mut shape = self.images.shape().to_vec();
        shape[0] = n;
        let size = self.example_size();
        Dataset {
            images: Tensor::from_vec(&shape, self.images.data()[..n * size].to_vec())
                .expect("prefix keeps shape"),
            labels: self.labels[..n].to_vec(),
            split: self.split,
        }
    }

    /// Replaces the plain `/255` scaling with per-dataset standardisation.
    pub fn standardize(&mut self, mean: f32, std: f32) {
        for v in self.images.data_mut() {
            *v = (*v - mean) / std;
        }
    }
}
