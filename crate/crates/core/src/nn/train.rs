use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mask::MaskSet;
use crate::rng::RngStream;
use crate::scalar::Scalar;

use super::engine::Engine;
use super::network::{Gradients, Network};

const EVAL_CHUNK: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr: 0.01,
            batch_size: 32,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Test accuracy in percent at the end of each epoch (empty without an
    /// evaluation set).
    pub epoch_accuracy: Vec<f64>,
    /// Mean training loss over each epoch's batches.
    pub epoch_loss: Vec<f64>,
}

/// Plain SGD: `w ← w − lr·g`. Masked-out weights end the step at exactly
/// zero; biases are never masked.
pub fn sgd_step<T: Scalar>(
    net: &mut Network<T>,
    grads: &Gradients<T>,
    lr: T,
    masks: Option<&MaskSet>,
) {
    for (slot, p) in net.params_mut().iter_mut().enumerate() {
        let gw = grads.weights[slot].data();
        match masks.map(|m| m.masks[slot].bits()) {
            Some(bits) => {
                for ((w, &g), &bit) in p.weight.data_mut().iter_mut().zip(gw).zip(bits) {
                    *w = if bit == 0 { T::zero() } else { *w - lr * g };
                }
            }
            None => {
                for (w, &g) in p.weight.data_mut().iter_mut().zip(gw) {
                    *w -= lr * g;
                }
            }
        }
        for (b, &g) in p.bias.data_mut().iter_mut().zip(grads.biases[slot].data()) {
            *b -= lr * g;
        }
    }
}

fn gather<T: Scalar>(data: &Dataset, order: &[u32], out: &mut Vec<T>, labels: &mut Vec<usize>) {
    let size = data.example_size();
    let pixels = data.images.data();
    out.clear();
    labels.clear();
    for &i in order {
        let i = i as usize;
        out.extend(
            pixels[i * size..(i + 1) * size]
                .iter()
                .map(|&v| T::from_f32(v).unwrap()),
        );
        labels.push(data.labels[i] as usize);
    }
}

fn check_dataset<T: Scalar>(net: &Network<T>, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Input("dataset is empty".into()));
    }
    if data.images.shape()[1..] != net.input_shape()[..] {
        return Err(Error::Dimension(format!(
            "dataset examples {:?} do not match network input {:?}",
            &data.images.shape()[1..],
            net.input_shape()
        )));
    }
    Ok(())
}

/// Mini-batch SGD for `cfg.epochs` epochs. Each epoch draws one fresh
/// permutation from `shuffle`; the trailing partial batch is kept. When a
/// mask set is given the weights are masked before the first step and stay
/// masked throughout.
pub fn train<T: Scalar>(
    net: &mut Network<T>,
    masks: Option<&MaskSet>,
    train_set: &Dataset,
    eval_set: Option<&Dataset>,
    cfg: &TrainConfig,
    shuffle: &mut RngStream,
) -> Result<TrainReport> {
    if cfg.epochs == 0 {
        return Err(Error::Input("epochs must be at least 1".into()));
    }
    if cfg.batch_size == 0 || cfg.lr.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Input("batch size and learning rate must be positive".into()));
    }
    check_dataset(net, train_set)?;
    if let Some(e) = eval_set {
        check_dataset(net, e)?;
    }
    if let Some(m) = masks {
        net.apply_mask(m)?;
    }
    let lr = T::from_f64(cfg.lr).unwrap();
    let mut engine = Engine::new(net, cfg.batch_size);
    let mut grads = Gradients::zeros_like(net);
    let mut order: Vec<u32> = (0..train_set.len() as u32).collect();
    let (mut batch, mut labels) = (Vec::new(), Vec::new());
    let mut report = TrainReport::default();
    for _ in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(shuffle);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            gather(train_set, chunk, &mut batch, &mut labels);
            let loss = engine.loss_and_gradients(net, &batch, &labels, &mut grads);
            sgd_step(net, &grads, lr, masks);
            loss_sum += loss.to_f64().unwrap();
            batches += 1;
        }
        report.epoch_loss.push(loss_sum / batches as f64);
        if let Some(e) = eval_set {
            report.epoch_accuracy.push(evaluate(net, e)?);
        }
    }
    Ok(report)
}

/// Arg-max of each row; ties go to the lowest class index.
pub(crate) fn argmax_rows<T: PartialOrd + Copy>(rows: &[T], classes: usize) -> Vec<usize> {
    rows.chunks_exact(classes)
        .map(|row| {
            let mut best = 0;
            for k in 1..classes {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Classification accuracy in percent.
pub fn evaluate<T: Scalar>(net: &Network<T>, data: &Dataset) -> Result<f64> {
    check_dataset(net, data)?;
    let classes = net.num_classes();
    let mut engine = Engine::new(net, EVAL_CHUNK.min(data.len()));
    let (mut batch, mut labels) = (Vec::new(), Vec::new());
    let order: Vec<u32> = (0..data.len() as u32).collect();
    let mut correct = 0usize;
    for chunk in order.chunks(engine.capacity()) {
        gather(data, chunk, &mut batch, &mut labels);
        let logits = engine.forward(net, &batch, chunk.len());
        correct += argmax_rows(logits, classes)
            .iter()
            .zip(&labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(100.0 * correct as f64 / data.len() as f64)
}

/// Softmax class probabilities, `(N, classes)` row-major, in dataset order.
pub fn predict_proba<T: Scalar>(net: &Network<T>, data: &Dataset) -> Result<Vec<f32>> {
    check_dataset(net, data)?;
    let classes = net.num_classes();
    let mut engine = Engine::new(net, EVAL_CHUNK.min(data.len()));
    let (mut batch, mut labels) = (Vec::new(), Vec::new());
    let order: Vec<u32> = (0..data.len() as u32).collect();
    let mut out = Vec::with_capacity(data.len() * classes);
    for chunk in order.chunks(engine.capacity()) {
        gather(data, chunk, &mut batch, &mut labels);
        engine.forward(net, &batch, chunk.len());
        out.extend(
            engine
                .probabilities(net, chunk.len())
                .iter()
                .map(|v| v.to_f32().unwrap()),
        );
    }
    Ok(out)
}
