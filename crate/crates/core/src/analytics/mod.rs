//! Post-hoc analysis of masks, weights and predictions.

pub mod ensemble;
pub mod similarity;
pub mod sparsity;
pub mod stability;

pub use ensemble::{
    accuracy, agreement_matrix, ensemble_average, model_predictions, EnsembleResult, PredictionSet,
};
pub use similarity::{hamming_distance, jaccard_distance, random_dead_slices, structuredness};
pub use sparsity::{aggregate, effective_sparsity, implicit_masks, LayerSparsity};
pub use stability::{quartile_movement, stability_score, QuartileMovement, TrajectoryRecord};
