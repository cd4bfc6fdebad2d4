//! Prediction averaging across sub-networks and pairwise agreement.

use std::path::Path;

use crate::data::read_tensor_file;
use crate::error::{Error, Result};

/// Class-probability rows of several models over one shared test ordering.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    pub models: Vec<String>,
    pub classes: usize,
    /// `probs[m]` is `(examples, classes)` row-major.
    pub probs: Vec<Vec<f32>>,
}

impl PredictionSet {
    pub fn new(models: Vec<String>, classes: usize, probs: Vec<Vec<f32>>) -> Result<Self> {
        if classes == 0 || models.len() != probs.len() {
            return Err(Error::Input("one probability table per model is required".into()));
        }
        let len = probs.first().map_or(0, Vec::len);
        if len % classes != 0 || probs.iter().any(|p| p.len() != len) {
            return Err(Error::Input("prediction tables are ragged".into()));
        }
        for (name, p) in models.iter().zip(&probs) {
            for (i, row) in p.chunks_exact(classes).enumerate() {
                let s: f64 = row.iter().map(|&v| v as f64).sum();
                if (s - 1.0).abs() > 1e-5 {
                    return Err(Error::Input(format!("{name}: row {i} sums to {s}")));
                }
            }
        }
        Ok(PredictionSet {
            models,
            classes,
            probs,
        })
    }

    /// Reads `test_probs.f32` files written by the harness.
    pub fn from_files(models: Vec<String>, paths: &[&Path], classes: usize) -> Result<Self> {
        let probs = paths
            .iter()
            .map(|p| read_tensor_file::<f32>(p))
            .collect::<Result<Vec<_>>>()?;
        Self::new(models, classes, probs)
    }

    pub fn examples(&self) -> usize {
        self.probs.first().map_or(0, |p| p.len() / self.classes)
    }

    pub fn subset(&self, names: &[&str]) -> Result<Self> {
        let mut models = Vec::new();
        let mut probs = Vec::new();
        for &n in names {
            let i = self
                .models
                .iter()
                .position(|m| m == n)
                .ok_or_else(|| Error::Selection(format!("no model named `{n}`")))?;
            models.push(self.models[i].clone());
            probs.push(self.probs[i].clone());
        }
        Ok(PredictionSet {
            models,
            classes: self.classes,
            probs,
        })
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..row.len() {
        if row[k] > row[best] {
            best = k;
        }
    }
    best
}

/// Arg-max class of each model's rows.
pub fn model_predictions(set: &PredictionSet) -> Vec<Vec<usize>> {
    set.probs
        .iter()
        .map(|p| {
            p.chunks_exact(set.classes)
                .map(|row| argmax(&row.iter().map(|&v| v as f64).collect::<Vec<_>>()))
                .collect()
        })
        .collect()
}

pub fn accuracy(predictions: &[usize], labels: &[u8]) -> f64 {
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(&p, &l)| p == l as usize)
        .count();
    100.0 * correct as f64 / labels.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleResult {
    pub predictions: Vec<usize>,
    /// Percent.
    pub accuracy: f64,
}

/// Averages probability rows over models and takes the arg-max (ties to
/// the lowest class). Each mean is summed in sorted order so the result
/// does not depend on the order of the models.
pub fn ensemble_average(set: &PredictionSet, labels: &[u8]) -> Result<EnsembleResult> {
    if set.models.len() < 2 {
        return Err(Error::Input("an ensemble needs at least two models".into()));
    }
    let n = set.examples();
    if labels.len() != n {
        return Err(Error::Input(format!("{} labels for {n} examples", labels.len())));
    }
    let m = set.models.len() as f64;
    let mut vals = Vec::with_capacity(set.models.len());
    let mut row = vec![0.0f64; set.classes];
    let mut predictions = Vec::with_capacity(n);
    for e in 0..n {
        for (k, slot) in row.iter_mut().enumerate() {
            vals.clear();
            vals.extend(set.probs.iter().map(|p| p[e * set.classes + k]));
            vals.sort_by(f32::total_cmp);
            *slot = vals.iter().map(|&v| v as f64).sum::<f64>() / m;
        }
        predictions.push(argmax(&row));
    }
    let accuracy = accuracy(&predictions, labels);
    Ok(EnsembleResult {
        predictions,
        accuracy,
    })
}

/// `M[p][q]`: examples on which models `p` and `q` predict the same class.
pub fn agreement_matrix(set: &PredictionSet) -> Vec<Vec<usize>> {
    let preds = model_predictions(set);
    let m = preds.len();
    let mut out = vec![vec![0; m]; m];
    for p in 0..m {
        for q in p..m {
            let c = preds[p].iter().zip(&preds[q]).filter(|(a, b)| a == b).count();
            out[p][q] = c;
            out[q][p] = c;
        }
    }
    out
}
