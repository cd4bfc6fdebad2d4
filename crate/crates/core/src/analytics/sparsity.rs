//! Explicit and effective (dead-unit aware) sparsity.
//!
//! A weight is implicitly pruned when it is kept by its mask but its
//! destination unit (linear output or conv output channel) can no longer
//! reach the network output through kept weights. Liveness is propagated
//! backwards from the output; unit-to-feature correspondence through
//! activations, pooling and flatten is tracked per channel.

use serde::{Deserialize, Serialize};

use crate::arch::{ArchitectureSpec, LayerSpec};
use crate::error::{Error, Result};
use crate::mask::{Mask, MaskSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub layer: String,
    pub total: usize,
    pub explicit_pruned: usize,
    pub implicit_pruned: usize,
}

impl LayerSparsity {
    pub fn explicit_fraction(&self) -> f64 {
        self.explicit_pruned as f64 / self.total as f64
    }

    pub fn effective_fraction(&self) -> f64 {
        (self.explicit_pruned + self.implicit_pruned) as f64 / self.total as f64
    }
}

/// Per-layer flags of implicitly pruned weights (1 = kept but dead).
pub fn implicit_masks(masks: &MaskSet, arch: &ArchitectureSpec) -> Result<Vec<Mask>> {
    masks.check_against(arch)?;
    let shapes = arch.shapes()?;
    let slots = arch.prunable_layers();
    let mut out: Vec<Option<Mask>> = vec![None; slots.len()];

    // Liveness of the units of the activation entering layer `i + 1`.
    let last = shapes.last().unwrap();
    let mut live = vec![true; units(last)];
    for i in (0..arch.layers.len()).rev() {
        let in_shape = &shapes[i];
        live = match &arch.layers[i] {
            LayerSpec::Relu | LayerSpec::Tanh | LayerSpec::MaxPool2d { .. } => live,
            LayerSpec::Flatten => {
                let per = in_shape[1..].iter().product::<usize>();
                (0..in_shape[0])
                    .map(|c| live[c * per..(c + 1) * per].iter().any(|&l| l))
                    .collect()
            }
            LayerSpec::Conv2d { .. } | LayerSpec::Linear { .. } => {
                let slot = slots.iter().position(|&s| s == i).unwrap();
                let mask = &masks.masks[slot];
                let shape = mask.shape();
                let (outs, ins) = (shape[0], shape[1]);
                if live.len() != outs || units(in_shape) != ins {
                    return Err(Error::Unsupported(format!(
                        "layer {i}: unit correspondence is not sequential"
                    )));
                }
                let inner: usize = shape[2..].iter().product();
                let mut live_in = vec![false; ins];
                let mut dead = vec![0u8; mask.len()];
                for o in 0..outs {
                    for c in 0..ins {
                        let base = (o * ins + c) * inner;
                        for j in base..base + inner {
                            if mask.is_kept(j) {
                                if live[o] {
                                    live_in[c] = true;
                                } else {
                                    dead[j] = 1;
                                }
                            }
                        }
                    }
                }
                out[slot] = Some(Mask::from_bits(shape, dead)?);
                live_in
            }
        };
    }
    Ok(out.into_iter().map(Option::unwrap).collect())
}

/// Number of units of an activation: channels for `(C, H, W)`, features
/// for flat vectors.
fn units(shape: &[usize]) -> usize {
    shape[0]
}

pub fn effective_sparsity(masks: &MaskSet, arch: &ArchitectureSpec) -> Result<Vec<LayerSparsity>> {
    let implicit = implicit_masks(masks, arch)?;
    Ok(masks
        .names
        .iter()
        .zip(&masks.masks)
        .zip(&implicit)
        .map(|((name, m), imp)| LayerSparsity {
            layer: name.clone(),
            total: m.len(),
            explicit_pruned: m.pruned_count(),
            implicit_pruned: imp.kept_count(),
        })
        .collect())
}

/// Whole-network totals over all prunable layers.
pub fn aggregate(layers: &[LayerSparsity]) -> LayerSparsity {
    LayerSparsity {
        layer: "all".into(),
        total: layers.iter().map(|l| l.total).sum(),
        explicit_pruned: layers.iter().map(|l| l.explicit_pruned).sum(),
        implicit_pruned: layers.iter().map(|l| l.implicit_pruned).sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo;

    #[test]
    fn dense_has_no_implicit() {
        let arch = zoo::lenet();
        let s = effective_sparsity(&MaskSet::dense(&arch), &arch).unwrap();
        assert!(s.iter().all(|l| l.implicit_pruned == 0 && l.explicit_pruned == 0));
        assert_eq!(aggregate(&s).total, arch.weight_count());
    }

    #[test]
    fn dead_hidden_unit() {
        let arch = ArchitectureSpec::new(
            "mlp",
            &[2],
            vec![LayerSpec::linear(2, 3), LayerSpec::Relu, LayerSpec::linear(3, 2)],
        )
        .unwrap();
        let mut masks = MaskSet::dense(&arch);
        // second layer weight (o, c) at o * 3 + c; cut hidden unit 2
        masks.masks[1].prune(2);
        masks.masks[1].prune(5);
        let s = effective_sparsity(&masks, &arch).unwrap();
        assert_eq!(s[0].implicit_pruned, 2);
        assert!((s[0].effective_fraction() - 2.0 / 6.0).abs() < 1e-12);
        assert_eq!(s[1].implicit_pruned, 0);
    }

    #[test]
    fn conv_channel_killed_by_next_layer() {
        let arch = zoo::lenet();
        let mut masks = MaskSet::dense(&arch);
        let conv2 = &mut masks.masks[1];
        let idx: Vec<usize> = conv2.slice_indices(4).collect();
        for i in idx {
            conv2.prune(i);
        }
        let imp = implicit_masks(&masks, &arch).unwrap();
        assert_eq!(imp[0].kept_count(), 9);
        assert!((36..45).all(|j| imp[0].is_kept(j)));
    }
}
