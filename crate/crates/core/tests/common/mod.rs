#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sparselab::analytics::implicit_masks;
use sparselab::nn::Network;
use sparselab::tensor::Tensor as TensorOf;
use sparselab::{ArchitectureSpec, LayerSpec, Mask, MaskSet, RngStream, StreamId, Tensor};

/// Masks with whole input slices removed (probability `kill`) and the rest
/// thinned coordinate-wise, so that dead units appear in every layer.
pub fn slice_killing_masks(arch: &ArchitectureSpec, seed: u64, kill: f64, keep: f64) -> MaskSet {
    let mut rng = RngStream::new(seed, StreamId::Aux(2));
    let mut set = MaskSet::dense(arch);
    for m in &mut set.masks {
        let shape = m.shape().to_vec();
        let (outs, ins) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let dead_in: Vec<bool> = (0..ins).map(|_| ins > 1 && rng.gen_bool(kill)).collect();
        let mut bits = vec![0u8; m.len()];
        for o in 0..outs {
            for c in 0..ins {
                for j in 0..inner {
                    let keep_it = !dead_in[c] && rng.gen_bool(keep);
                    bits[(o * ins + c) * inner + j] = keep_it as u8;
                }
            }
        }
        *m = Mask::from_bits(&shape, bits).unwrap();
    }
    set
}

/// Forward reachability: a unit is live when some kept weight connects it
/// to a live unit of the previous activation. Returns, per prunable layer,
/// the liveness of its input units.
fn forward_live_inputs(arch: &ArchitectureSpec, masks: &MaskSet) -> Vec<Vec<bool>> {
    let shapes = arch.shapes().unwrap();
    let mut live = vec![true; shapes[0][0]];
    let mut out = Vec::new();
    let mut slot = 0;
    for (i, layer) in arch.layers.iter().enumerate() {
        match layer {
            LayerSpec::Flatten => {
                let per: usize = shapes[i][1..].iter().product();
                live = live.iter().flat_map(|&l| std::iter::repeat(l).take(per)).collect();
            }
            LayerSpec::Conv2d { .. } | LayerSpec::Linear { .. } => {
                let m = &masks.masks[slot];
                let (outs, ins) = (m.shape()[0], m.shape()[1]);
                let inner = m.len() / (outs * ins);
                let next = (0..outs)
                    .map(|o| {
                        (0..ins).any(|c| live[c] && (0..inner).any(|j| m.is_kept((o * ins + c) * inner + j)))
                    })
                    .collect();
                out.push(live);
                live = next;
                slot += 1;
            }
            _ => {}
        }
    }
    out
}

/// Checks implicit-pruning flags against gradients of a bias-free tanh
/// copy of `arch` on random inputs: every implicitly pruned weight must get
/// exactly zero gradient on every batch, and every kept weight that is
/// neither implicit nor fed by a dead unit must get a nonzero gradient on
/// some batch. Returns the number of (implicit, live) weights probed.
pub fn gradient_probe(arch: &ArchitectureSpec, masks: &MaskSet, seed: u64) -> Result<(usize, usize), String> {
    let mut tanh_arch = arch.clone();
    for l in &mut tanh_arch.layers {
        if *l == LayerSpec::Relu {
            *l = LayerSpec::Tanh;
        }
    }
    let mut net = Network::<f32>::init(&tanh_arch, &mut RngStream::new(seed, StreamId::Init)).unwrap();
    for p in net.params_mut() {
        p.bias.data_mut().fill(0.0);
    }
    net.apply_mask(masks).unwrap();

    let implicit = implicit_masks(masks, arch).map_err(|e| e.to_string())?;
    let sources = forward_live_inputs(arch, masks);
    let mut seen_nonzero: Vec<Vec<bool>> = masks.masks.iter().map(|m| vec![false; m.len()]).collect();

    let mut rng = RngStream::new(seed, StreamId::Aux(3));
    let input = arch.shapes().unwrap()[0].clone();
    let per: usize = input.iter().product();
    let batch = 8;
    let mut shape = vec![batch];
    shape.extend(&input);
    for _ in 0..10 {
        let x: Vec<f32> = (0..batch * per).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..net.num_classes())).collect();
        let (grads, _) = net.backward(&Tensor::from_vec(&shape, x).unwrap(), &labels).unwrap();
        for (l, g) in grads.weights.iter().enumerate() {
            for (i, &v) in g.data().iter().enumerate() {
                if implicit[l].is_kept(i) && v != 0.0 {
                    return Err(format!("{}[{i}] is implicit but has gradient {v}", masks.names[l]));
                }
                seen_nonzero[l][i] |= v != 0.0;
            }
        }
    }

    let (mut n_implicit, mut n_live) = (0, 0);
    for (l, m) in masks.masks.iter().enumerate() {
        let (outs, ins) = (m.shape()[0], m.shape()[1]);
        let inner = m.len() / (outs * ins);
        for i in 0..m.len() {
            if !m.is_kept(i) {
                continue;
            }
            if implicit[l].is_kept(i) {
                n_implicit += 1;
                continue;
            }
            let c = (i / inner) % ins;
            if !sources[l][c] {
                continue;
            }
            n_live += 1;
            if !seen_nonzero[l][i] {
                return Err(format!("{}[{i}] is live but never received a gradient", masks.names[l]));
            }
        }
    }
    Ok((n_implicit, n_live))
}

pub fn random_batch(rng: &mut ChaCha8Rng, shape: &[usize]) -> TensorOf<f64> {
    let n: usize = shape.iter().product();
    TensorOf::from_vec(shape, (0..n).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

pub fn loss(net: &Network<f64>, x: &TensorOf<f64>, y: &[usize]) -> f64 {
    net.backward(x, y).unwrap().1
}

/// Central-difference check of 20 random parameters. Returns how many
/// probes straddled a non-differentiable point (ReLU or max-pool switch);
/// those are verified at a much smaller step instead.
pub fn check_gradients(net: &Network<f64>, x: &TensorOf<f64>, y: &[usize], seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (grads, _) = net.backward(x, y).unwrap();
    let mut kinks = 0;
    for probe in 0..20 {
        let slot = probe % net.params().len();
        let bias = probe % 4 == 3;
        let len = if bias {
            net.params()[slot].bias.len()
        } else {
            net.params()[slot].weight.len()
        };
        let i = rng.gen_range(0..len);
        let analytic = if bias {
            grads.biases[slot].data()[i]
        } else {
            grads.weights[slot].data()[i]
        };
        let at = |delta: f64| {
            let mut n = net.clone();
            let p = &mut n.params_mut()[slot];
            let t = if bias { &mut p.bias } else { &mut p.weight };
            t.data_mut()[i] += delta;
            loss(&n, x, y)
        };
        let central = |eps: f64| (at(eps) - at(-eps)) / (2.0 * eps);
        let rel = |numeric: f64| {
            (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
        };
        let (coarse, fine) = (central(1e-3), central(1e-4));
        let eps = if rel(coarse) >= 1e-3 && (coarse - fine).abs() > 1e-3 * fine.abs().max(1e-6) {
            kinks += 1;
            1e-6
        } else {
            1e-3
        };
        let numeric = central(eps);
        assert!(
            rel(numeric) < 1e-3,
            "slot {slot} bias={bias} index {i} (eps {eps}): analytic {analytic}, numeric {numeric}"
        );
    }
    kinks
}
