use serde::{Deserialize, Serialize};

use crate::arch::ArchitectureSpec;
use crate::error::{Error, Result};

/// Binary keep/prune flags for one weight tensor (1 = kept).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    shape: Vec<usize>,
    bits: Vec<u8>,
}

impl Mask {
    pub fn ones(shape: &[usize]) -> Self {
        Mask {
            shape: shape.to_vec(),
            bits: vec![1; shape.iter().product()],
        }
    }

    pub fn from_bits(shape: &[usize], bits: Vec<u8>) -> Result<Self> {
        if bits.len() != shape.iter().product::<usize>() {
            return Err(Error::Dimension(format!(
                "mask shape {shape:?} needs {} bits, got {}",
                shape.iter().product::<usize>(),
                bits.len()
            )));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Input(format!("mask byte {b:#04x} is not 0 or 1")));
        }
        Ok(Mask {
            shape: shape.to_vec(),
            bits,
        })
    }

    pub fn from_kept(shape: &[usize], kept: impl Fn(usize) -> bool) -> Self {
        let n = shape.iter().product();
        Mask {
            shape: shape.to_vec(),
            bits: (0..n).map(|i| kept(i) as u8).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn is_kept(&self, i: usize) -> bool {
        self.bits[i] != 0
    }

    pub fn prune(&mut self, i: usize) {
        self.bits[i] = 0;
    }

    pub fn kept_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    pub fn pruned_count(&self) -> usize {
        self.len() - self.kept_count()
    }

    pub fn density(&self) -> f64 {
        self.kept_count() as f64 / self.len() as f64
    }

    /// Number of input slices (axis 1) and the flat indices of slice `c`.
    pub fn input_slices(&self) -> usize {
        self.shape[1]
    }

    pub fn slice_indices(&self, c: usize) -> impl Iterator<Item = usize> + '_ {
        slice_indices(&self.shape, c)
    }

    pub fn slice_alive(&self, c: usize) -> bool {
        self.slice_indices(c).any(|i| self.is_kept(i))
    }

    /// True when every pruned bit of `earlier` is also pruned here.
    pub fn nested_in(&self, earlier: &Mask) -> bool {
        self.shape == earlier.shape
            && self
                .bits
                .iter()
                .zip(&earlier.bits)
                .all(|(&now, &before)| now <= before)
    }
}

/// Flat indices of input slice `c` of a weight tensor shaped
/// `(out, in, ...)`: every element `w[o, c, ...]`.
pub fn slice_indices(shape: &[usize], c: usize) -> impl Iterator<Item = usize> {
    let out = shape[0];
    let inputs = shape[1];
    let inner: usize = shape[2..].iter().product();
    (0..out).flat_map(move |o| {
        let base = (o * inputs + c) * inner;
        base..base + inner
    })
}

/// One mask per prunable layer of an architecture, tagged with the pruning
/// iteration that produced it (0 = dense).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSet {
    pub iteration: usize,
    pub names: Vec<String>,
    pub masks: Vec<Mask>,
}

impl MaskSet {
    pub fn dense(arch: &ArchitectureSpec) -> Self {
        let masks = arch
            .prunable_layers()
            .into_iter()
            .map(|i| Mask::ones(&arch.layers[i].weight_shape().unwrap()))
            .collect();
        MaskSet {
            iteration: 0,
            names: arch.prunable_names(),
            masks,
        }
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn check_against(&self, arch: &ArchitectureSpec) -> Result<()> {
        let shapes: Vec<Vec<usize>> = arch
            .prunable_layers()
            .into_iter()
            .map(|i| arch.layers[i].weight_shape().unwrap())
            .collect();
        if shapes.len() != self.masks.len()
            || shapes.iter().zip(&self.masks).any(|(s, m)| s.as_slice() != m.shape())
        {
            return Err(Error::State(format!(
                "mask set does not match architecture `{}`",
                arch.name
            )));
        }
        Ok(())
    }

    pub fn nested_in(&self, earlier: &MaskSet) -> bool {
        self.masks.len() == earlier.masks.len()
            && self.masks.iter().zip(&earlier.masks).all(|(a, b)| a.nested_in(b))
    }

    pub fn kept_count(&self) -> usize {
        self.masks.iter().map(Mask::kept_count).sum()
    }

    pub fn total(&self) -> usize {
        self.masks.iter().map(Mask::len).sum()
    }
}
