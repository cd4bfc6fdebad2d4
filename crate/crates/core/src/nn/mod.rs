//! Minimal deterministic feed-forward engine.

mod engine;
mod network;
mod train;

pub use engine::{softmax_rows, Engine};
pub use network::{Gradients, LayerParams, Network};
pub use train::{evaluate, predict_proba, sgd_step, train, TrainConfig, TrainReport};
