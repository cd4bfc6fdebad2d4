mod common;

use proptest::prelude::*;

use sparselab::analytics::{
    aggregate, effective_sparsity, ensemble_average, hamming_distance, jaccard_distance, quartile_movement,
    stability_score, structuredness, PredictionSet, TrajectoryRecord,
};
use sparselab::tensor::Tensor;
use sparselab::{zoo, Mask, MaskSet};

fn bits_strategy(n: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..2, n)
}

fn mask(bits: Vec<u8>) -> Mask {
    Mask::from_bits(&[bits.len()], bits).unwrap()
}

fn count(bits: &[u8]) -> usize {
    bits.iter().map(|&b| b as usize).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn jaccard_is_a_metric(a in bits_strategy(24), b in bits_strategy(24), c in bits_strategy(24)) {
        let (ma, mb, mc) = (mask(a.clone()), mask(b.clone()), mask(c));
        let ab = jaccard_distance(&ma, &mb).unwrap();
        prop_assert_eq!(ab, jaccard_distance(&mb, &ma).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab == 0.0, a == b || (count(&a) == 0 && count(&b) == 0));
        prop_assert_eq!(jaccard_distance(&ma, &ma).unwrap(), 0.0);
        let ac = jaccard_distance(&ma, &mc).unwrap();
        let bc = jaccard_distance(&mb, &mc).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn hamming_counts_symmetric_difference(a in bits_strategy(30), b in bits_strategy(30)) {
        let inter: usize = a.iter().zip(&b).map(|(&x, &y)| (x & y) as usize).sum();
        let expect = (count(&a) + count(&b) - 2 * inter) as f64 / 30.0;
        let got = hamming_distance(&mask(a), &mask(b)).unwrap();
        prop_assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn effective_sparsity_dominates_explicit(seed in 0u64..1000, kill in 0.0f64..0.6, keep in 0.2f64..1.0) {
        let arch = zoo::lenet();
        let masks = common::slice_killing_masks(&arch, seed, kill, keep);
        let layers = effective_sparsity(&masks, &arch).unwrap();
        for l in &layers {
            prop_assert!(l.effective_fraction() >= l.explicit_fraction());
            prop_assert!(l.explicit_pruned + l.implicit_pruned <= l.total);
        }
        let all = aggregate(&layers);
        prop_assert_eq!(all.total, masks.total());
        prop_assert_eq!(all.explicit_pruned, masks.total() - masks.kept_count());
    }

    #[test]
    fn ensemble_ignores_member_order(
        raw in prop::collection::vec(prop::collection::vec(0.01f32..1.0, 12), 2..6),
        rot in 0usize..6,
    ) {
        let norm: Vec<Vec<f32>> = raw
            .iter()
            .map(|p| {
                p.chunks(3)
                    .flat_map(|r| {
                        let s: f32 = r.iter().sum();
                        let mut row: Vec<f32> = r.iter().map(|v| v / s).collect();
                        let drift: f32 = 1.0 - row.iter().sum::<f32>();
                        row[0] += drift;
                        row
                    })
                    .collect()
            })
            .collect();
        let names: Vec<String> = (0..norm.len()).map(|i| format!("m{i}")).collect();
        let set = PredictionSet::new(names.clone(), 3, norm.clone()).unwrap();
        let mut order: Vec<usize> = (0..norm.len()).collect();
        order.rotate_left(rot % norm.len());
        order.swap(0, norm.len() - 1);
        let permuted = PredictionSet::new(
            order.iter().map(|&i| names[i].clone()).collect(),
            3,
            order.iter().map(|&i| norm[i].clone()).collect(),
        )
        .unwrap();
        let labels = [0u8, 1, 2, 0];
        prop_assert_eq!(ensemble_average(&set, &labels).unwrap(), ensemble_average(&permuted, &labels).unwrap());
    }

    #[test]
    fn quartile_partition(w in prop::collection::vec(-3.0f32..3.0, 4..60), scale in 0.1f32..10.0) {
        let n = w.len();
        let m = Mask::ones(&[n]);
        let same = quartile_movement(&w, &w, &m).unwrap();
        prop_assert_eq!(same.fraction, 0.0);
        let total: usize = same.transitions.iter().flatten().sum();
        prop_assert_eq!(total, n);
        for q in 0..4 {
            // ranks r with floor(4r/n) == q
            let size = (0..n).filter(|r| 4 * r / n == q).count();
            prop_assert_eq!(same.transitions[q][q], size);
        }
        let scaled: Vec<f32> = w.iter().map(|v| -v * scale).collect();
        let moved = quartile_movement(&w, &scaled, &m).unwrap();
        // scaling preserves the magnitude order except where rounding creates ties
        let distinct = {
            let mut a: Vec<f32> = w.iter().map(|v| v.abs()).collect();
            a.sort_by(f32::total_cmp);
            a.windows(2).all(|p| p[1] > p[0] * 1.0001)
        };
        if distinct {
            prop_assert_eq!(moved.fraction, 0.0);
        }
    }
}

#[test]
fn implicit_pruning_matches_gradient_probe() {
    let arch = zoo::lenet();
    let (mut implicit, mut live) = (0, 0);
    for seed in 0..8 {
        let masks = common::slice_killing_masks(&arch, seed, 0.35, 0.7);
        let (i, l) = common::gradient_probe(&arch, &masks, seed).unwrap();
        implicit += i;
        live += l;
    }
    assert!(implicit > 0 && live > 0);
}

#[test]
fn structuredness_counts_dead_columns() {
    let bits = vec![1, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0];
    // shape (3, 4): columns 1 and 2 never kept
    let m = Mask::from_bits(&[3, 4], bits).unwrap();
    assert_eq!(structuredness(&m), 0.5);
}

fn trajectory(values: &[[f32; 4]], masks: &[[u8; 4]]) -> TrajectoryRecord {
    let weights = values
        .iter()
        .map(|v| vec![Tensor::from_vec(&[2, 2], v.to_vec()).unwrap()])
        .collect();
    let sets = masks
        .iter()
        .enumerate()
        .map(|(k, b)| MaskSet {
            iteration: k,
            names: vec!["fc".into()],
            masks: vec![Mask::from_bits(&[2, 2], b.to_vec()).unwrap()],
        })
        .collect();
    TrajectoryRecord::new(weights, sets).unwrap()
}

#[test]
fn stability_pools_pairs_over_kept_coordinates() {
    let t = trajectory(
        &[[1.0, 2.0, 3.0, 4.0], [1.5, 0.0, 2.0, 4.0], [1.5, 0.0, 0.0, 3.0]],
        &[[1, 1, 1, 1], [1, 0, 1, 1], [1, 0, 0, 1]],
    );
    // pair (0,1): |0.5|, |1|, |0| over 3 kept; pair (1,2): |0|, |1| over 2 kept
    let s = stability_score(&t).unwrap();
    assert!((s[0] - 2.5 / 5.0).abs() < 1e-12);

    // repeating the last snapshot adds zero movement on its kept coordinates
    let longer = trajectory(
        &[[1.0, 2.0, 3.0, 4.0], [1.5, 0.0, 2.0, 4.0], [1.5, 0.0, 0.0, 3.0], [1.5, 0.0, 0.0, 3.0]],
        &[[1, 1, 1, 1], [1, 0, 1, 1], [1, 0, 0, 1], [1, 0, 0, 1]],
    );
    let s2 = stability_score(&longer).unwrap();
    assert!((s2[0] - 2.5 / 7.0).abs() < 1e-12);
}

#[test]
fn trajectory_rejects_weights_under_pruned_coordinates() {
    let weights = vec![vec![Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap()]];
    let masks = vec![MaskSet {
        iteration: 0,
        names: vec!["fc".into()],
        masks: vec![Mask::from_bits(&[2], vec![1, 0]).unwrap()],
    }];
    assert!(TrajectoryRecord::new(weights, masks).is_err());
}
