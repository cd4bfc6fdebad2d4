//! What happens to surviving weights after a pruning step.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::MaskSet;
use crate::nn::Network;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Handling {
    /// Reset survivors and biases to their captured values.
    #[default]
    Rewind,
    /// Keep trained values.
    Finetune,
    /// Survivors become `sigma_L * sign(w_init)`.
    SignSigma,
    /// Survivors become `sign(w_init)`.
    SignOnly,
}

impl Handling {
    pub const ALL: [Handling; 4] = [
        Handling::Rewind,
        Handling::Finetune,
        Handling::SignSigma,
        Handling::SignOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Handling::Rewind => "rewind",
            Handling::Finetune => "finetune",
            Handling::SignSigma => "sign_sigma",
            Handling::SignOnly => "sign_only",
        }
    }
}

impl fmt::Display for Handling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Handling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Handling::ALL
            .into_iter()
            .find(|h| h.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown weight handling `{s}`")))
    }
}

/// Parameters captured at (or shortly after) initialization.
#[derive(Clone, Debug, PartialEq)]
pub struct InitCheckpoint<T> {
    pub weights: Vec<Tensor<T>>,
    pub biases: Vec<Tensor<T>>,
    /// Population standard deviation of each layer's captured weights.
    pub sigma: Vec<T>,
}

fn population_std<T: Scalar>(xs: &[T]) -> T {
    let n = T::from_usize(xs.len()).unwrap();
    let mean = xs.iter().copied().sum::<T>() / n;
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    var.sqrt()
}

impl<T: Scalar> InitCheckpoint<T> {
    pub fn capture(net: &Network<T>) -> Self {
        let weights: Vec<Tensor<T>> = net.params().iter().map(|p| p.weight.clone()).collect();
        let sigma = weights.iter().map(|w| population_std(w.data())).collect();
        InitCheckpoint {
            weights,
            biases: net.params().iter().map(|p| p.bias.clone()).collect(),
            sigma,
        }
    }

    fn check(&self, net: &Network<T>, masks: &MaskSet) -> Result<()> {
        masks.check_against(net.arch())?;
        let ok = self.weights.len() == net.params().len()
            && net.params().iter().enumerate().all(|(i, p)| {
                self.weights[i].shape() == p.weight.shape() && self.biases[i].shape() == p.bias.shape()
            });
        if ok {
            Ok(())
        } else {
            Err(Error::State("checkpoint shapes do not match network".into()))
        }
    }

    /// Resets weights through `f(initial, sigma)` on kept coordinates, zero
    /// on pruned ones, and restores every bias.
    fn reset(&self, net: &mut Network<T>, masks: &MaskSet, f: impl Fn(T, T) -> T) -> Result<()> {
        self.check(net, masks)?;
        for (i, p) in net.params_mut().iter_mut().enumerate() {
            let sigma = self.sigma[i];
            let bits = masks.masks[i].bits();
            for ((w, &w0), &bit) in p.weight.data_mut().iter_mut().zip(self.weights[i].data()).zip(bits) {
                *w = if bit == 1 { f(w0, sigma) } else { T::zero() };
            }
            p.bias.data_mut().copy_from_slice(self.biases[i].data());
        }
        Ok(())
    }
}

fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

pub fn rewind<T: Scalar>(net: &mut Network<T>, ckpt: &InitCheckpoint<T>, masks: &MaskSet) -> Result<()> {
    ckpt.reset(net, masks, |w0, _| w0)
}

pub fn finetune_carryover<T: Scalar>(net: &mut Network<T>, masks: &MaskSet) -> Result<()> {
    net.apply_mask(masks)
}

pub fn sign_sigma_reinit<T: Scalar>(
    net: &mut Network<T>,
    ckpt: &InitCheckpoint<T>,
    masks: &MaskSet,
) -> Result<()> {
    ckpt.reset(net, masks, |w0, s| s * sign(w0))
}

pub fn sign_reinit<T: Scalar>(net: &mut Network<T>, ckpt: &InitCheckpoint<T>, masks: &MaskSet) -> Result<()> {
    ckpt.reset(net, masks, |w0, _| sign(w0))
}

pub fn apply<T: Scalar>(
    handling: Handling,
    net: &mut Network<T>,
    ckpt: &InitCheckpoint<T>,
    masks: &MaskSet,
) -> Result<()> {
    match handling {
        Handling::Rewind => rewind(net, ckpt, masks),
        Handling::Finetune => finetune_carryover(net, masks),
        Handling::SignSigma => sign_sigma_reinit(net, ckpt, masks),
        Handling::SignOnly => sign_reinit(net, ckpt, masks),
    }
}
