use crate::arch::ArchitectureSpec;
use crate::error::{Error, Result};
use crate::mask::MaskSet;
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::engine::Engine;

/// Weight and bias of one conv2d or linear layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    /// Index into the architecture's layer list.
    pub layer: usize,
    pub name: String,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    arch: ArchitectureSpec,
    shapes: Vec<Vec<usize>>,
    params: Vec<LayerParams<T>>,
}

/// Per-parameter gradients, aligned with [`Network::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Tensor<T>>,
    pub biases: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        Gradients {
            weights: net.params.iter().map(|p| Tensor::zeros(p.weight.shape())).collect(),
            biases: net.params.iter().map(|p| Tensor::zeros(p.bias.shape())).collect(),
        }
    }

    pub(crate) fn clear(&mut self) {
        for t in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            t.data_mut().fill(T::zero());
        }
    }
}

impl<T: Scalar> Network<T> {
    /// All weights and biases zero.
    pub fn zeros(arch: &ArchitectureSpec) -> Result<Self> {
        let shapes = arch.shapes()?;
        arch.validate()?;
        let names = arch.prunable_names();
        let params = arch
            .prunable_layers()
            .into_iter()
            .zip(names)
            .map(|(layer, name)| {
                let ws = arch.layers[layer].weight_shape().unwrap();
                LayerParams {
                    layer,
                    name,
                    bias: Tensor::zeros(&[ws[0]]),
                    weight: Tensor::zeros(&ws),
                }
            })
            .collect();
        Ok(Network {
            arch: arch.clone(),
            shapes,
            params,
        })
    }

    /// Every weight and bias drawn i.i.d. uniform on `[-1/sqrt(fan_in),
    /// +1/sqrt(fan_in)]`, layer by layer, weights before biases, row-major.
    pub fn init(arch: &ArchitectureSpec, rng: &mut RngStream) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        for p in &mut net.params {
            let fan_in = arch.layers[p.layer].fan_in().unwrap();
            let bound = T::one() / T::from_usize(fan_in).unwrap().sqrt();
            let two = T::lit(2.0);
            for v in p.weight.data_mut().iter_mut().chain(p.bias.data_mut()) {
                let u = T::from_f32(rng.unit_f32()).unwrap();
                *v = bound * (two * u - T::one());
            }
        }
        Ok(net)
    }

    pub fn arch(&self) -> &ArchitectureSpec {
        &self.arch
    }

    /// Per-example activation shapes, input first.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().unwrap()[0]
    }

    pub fn params(&self) -> &[LayerParams<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.params
    }

    /// Index into `params` for an architecture layer index.
    pub(crate) fn param_slot(&self, layer: usize) -> Option<usize> {
        self.params.iter().position(|p| p.layer == layer)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.weight.len() + p.bias.len()).sum()
    }

    /// Forces every masked-out weight to exactly zero.
    pub fn apply_mask(&mut self, masks: &MaskSet) -> Result<()> {
        masks.check_against(&self.arch)?;
        for (p, m) in self.params.iter_mut().zip(&masks.masks) {
            for (w, &bit) in p.weight.data_mut().iter_mut().zip(m.bits()) {
                if bit == 0 {
                    *w = T::zero();
                }
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.weight.is_finite() && p.bias.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            arch: self.arch.clone(),
            shapes: self.shapes.clone(),
            params: self
                .params
                .iter()
                .map(|p| LayerParams {
                    layer: p.layer,
                    name: p.name.clone(),
                    weight: p.weight.cast(),
                    bias: p.bias.cast(),
                })
                .collect(),
        }
    }

    /// Checks a batch tensor against the input shape; returns the batch size.
    pub(crate) fn batch_size_of(&self, batch: &Tensor<T>) -> Result<usize> {
        let s = batch.shape();
        if s.len() != self.shapes[0].len() + 1 || s[1..] != self.shapes[0][..] {
            return Err(Error::Dimension(format!(
                "batch shape {s:?} does not match (B, {:?})",
                self.shapes[0]
            )));
        }
        Ok(s[0])
    }

    /// Logits of shape `(B, classes)`.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let b = self.batch_size_of(batch)?;
        let mut engine = Engine::new(self, b);
        let logits = engine.forward(self, batch.data(), b).to_vec();
        Tensor::from_vec(&[b, self.num_classes()], logits)
    }

    /// Gradients of the mean softmax cross-entropy, and the loss itself.
    pub fn backward(&self, batch: &Tensor<T>, labels: &[usize]) -> Result<(Gradients<T>, T)> {
        let b = self.batch_size_of(batch)?;
        self.check_labels(labels, b)?;
        let mut engine = Engine::new(self, b);
        let mut grads = Gradients::zeros_like(self);
        let loss = engine.loss_and_gradients(self, batch.data(), labels, &mut grads);
        Ok((grads, loss))
    }

    pub(crate) fn check_labels(&self, labels: &[usize], b: usize) -> Result<()> {
        if labels.len() != b {
            return Err(Error::Input(format!(
                "{} labels for a batch of {b}",
                labels.len()
            )));
        }
        let classes = self.num_classes();
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Input(format!("label {bad} outside [0, {classes})")));
        }
        Ok(())
    }
}
