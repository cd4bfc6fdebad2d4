//! Weight trajectories across pruning iterations.

use std::path::Path;

use crate::arch::ArchitectureSpec;
use crate::data::load_checkpoint;
use crate::error::{Error, Result};
use crate::harness::iter_dir;
use crate::mask::{Mask, MaskSet};
use crate::tensor::Tensor;

/// Final trained weights and masks of consecutive iterations of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub layer_names: Vec<String>,
    pub iterations: Vec<usize>,
    /// `weights[i][l]`: layer `l` at the end of iteration `iterations[i]`.
    pub weights: Vec<Vec<Tensor<f32>>>,
    pub masks: Vec<MaskSet>,
}

impl TrajectoryRecord {
    pub fn new(weights: Vec<Vec<Tensor<f32>>>, masks: Vec<MaskSet>) -> Result<Self> {
        if weights.len() != masks.len() || masks.is_empty() {
            return Err(Error::Input("trajectory needs one mask set per weight snapshot".into()));
        }
        for (ws, ms) in weights.iter().zip(&masks) {
            if ws.len() != ms.masks.len() {
                return Err(Error::Input("layer count differs between weights and masks".into()));
            }
            for (w, m) in ws.iter().zip(&ms.masks) {
                if w.shape() != m.shape() {
                    return Err(Error::Input("weight and mask shapes differ".into()));
                }
                if w.data().iter().zip(m.bits()).any(|(&v, &b)| b == 0 && v != 0.0) {
                    return Err(Error::Input("masked coordinate holds a nonzero weight".into()));
                }
            }
        }
        Ok(TrajectoryRecord {
            layer_names: masks[0].names.clone(),
            iterations: masks.iter().map(|m| m.iteration).collect(),
            weights,
            masks,
        })
    }

    /// Reads `iter_0 ..= iter_last` of a run directory.
    pub fn load(run_dir: &Path, arch: &ArchitectureSpec, last: usize) -> Result<Self> {
        let mut weights = Vec::new();
        let mut masks = Vec::new();
        for k in 0..=last {
            let ckpt = load_checkpoint(&iter_dir(run_dir, k), "final", arch)?;
            let m = ckpt
                .masks
                .ok_or_else(|| Error::State(format!("iteration {k} checkpoint has no masks")))?;
            weights.push(ckpt.net.params().iter().map(|p| p.weight.clone()).collect());
            masks.push(m);
        }
        Self::new(weights, masks)
    }
}

/// Per layer: mean of `|w_i - w_{i-1}|` pooled over consecutive iteration
/// pairs and the coordinates kept at iteration `i`. Lower is more stable.
pub fn stability_score(t: &TrajectoryRecord) -> Result<Vec<f64>> {
    if t.weights.len() < 2 {
        return Err(Error::Input("stability needs at least two iterations".into()));
    }
    let layers = t.layer_names.len();
    let mut out = Vec::with_capacity(layers);
    for l in 0..layers {
        let (mut sum, mut n) = (0.0f64, 0usize);
        for i in 1..t.weights.len() {
            let cur = t.weights[i][l].data();
            let prev = t.weights[i - 1][l].data();
            for ((&a, &b), &bit) in cur.iter().zip(prev).zip(t.masks[i].masks[l].bits()) {
                if bit == 1 {
                    sum += (a as f64 - b as f64).abs();
                    n += 1;
                }
            }
        }
        out.push(if n == 0 { 0.0 } else { sum / n as f64 });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuartileMovement {
    /// Fraction of kept weights whose magnitude quartile changed.
    pub fraction: f64,
    /// `transitions[qa][qb]`: weights moving from quartile `qa` to `qb`.
    pub transitions: [[usize; 4]; 4],
}

/// Magnitude quartile (0 = smallest) of each kept coordinate, by rank
/// `floor(4 * rank / n)`; equal magnitudes are ranked by index.
fn quartiles(w: &[f32], kept: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..kept.len()).collect();
    order.sort_by(|&x, &y| {
        w[kept[x]]
            .abs()
            .total_cmp(&w[kept[y]].abs())
            .then(kept[x].cmp(&kept[y]))
    });
    let n = kept.len();
    let mut q = vec![0; n];
    for (rank, &j) in order.iter().enumerate() {
        q[j] = 4 * rank / n;
    }
    q
}

/// Compares magnitude quartiles of the kept weights of one layer at two
/// points in training.
pub fn quartile_movement(a: &[f32], b: &[f32], mask: &Mask) -> Result<QuartileMovement> {
    if a.len() != mask.len() || b.len() != mask.len() {
        return Err(Error::Input("weights and mask differ in length".into()));
    }
    let kept: Vec<usize> = (0..mask.len()).filter(|&i| mask.is_kept(i)).collect();
    if kept.len() < 4 {
        return Err(Error::Input(format!(
            "quartiles need at least 4 kept weights, found {}",
            kept.len()
        )));
    }
    let (qa, qb) = (quartiles(a, &kept), quartiles(b, &kept));
    let mut transitions = [[0usize; 4]; 4];
    let mut moved = 0;
    for (&x, &y) in qa.iter().zip(&qb) {
        transitions[x][y] += 1;
        moved += (x != y) as usize;
    }
    Ok(QuartileMovement {
        fraction: moved as f64 / kept.len() as f64,
        transitions,
    })
}
