//! Distances between masks and how "structured" a mask looks.

use crate::error::{Error, Result};
use crate::mask::Mask;

fn same_shape(a: &Mask, b: &Mask) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Input(format!(
            "mask shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `1 - |kept(a) ∩ kept(b)| / |kept(a) ∪ kept(b)|`; zero when both masks
/// keep nothing.
pub fn jaccard_distance(a: &Mask, b: &Mask) -> Result<f64> {
    same_shape(a, b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x & y) as usize;
        union += (x | y) as usize;
    }
    if union == 0 {
        return Ok(0.0);
    }
    Ok(1.0 - inter as f64 / union as f64)
}

/// Fraction of coordinates whose bits differ.
pub fn hamming_distance(a: &Mask, b: &Mask) -> Result<f64> {
    same_shape(a, b)?;
    let diff = a.bits().iter().zip(b.bits()).filter(|(x, y)| x != y).count();
    Ok(diff as f64 / a.len() as f64)
}

/// Fraction of input slices (conv input channels, linear columns) whose
/// bits are all zero.
pub fn structuredness(mask: &Mask) -> f64 {
    crate::pruning::dead_slice_fraction(mask)
}

/// Expected number of all-zero input slices if the same number of kept
/// weights were placed uniformly at random, approximated as independent
/// coordinates: `slices * (1 - density)^slice_size`.
pub fn random_dead_slices(mask: &Mask) -> f64 {
    let slices = mask.input_slices();
    let slice_size = mask.len() / slices;
    slices as f64 * (1.0 - mask.density()).powi(slice_size as i32)
}
