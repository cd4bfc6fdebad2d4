//! Grids of experiments executed cell by cell.
//!
//! A grid file is JSON:
//!
//! ```json
//! {
//!   "base":  { "iterations": 10, "seeds": [0, 1] },
//!   "axes":  { "method": ["l1_unstructured", "hybrid"] },
//!   "cells": [ { "method": "l1_unstructured", "handling": "finetune" } ]
//! }
//! ```
//!
//! Every combination of `axes` values is laid over `base`; each entry of
//! `cells` is an extra override of `base`. Multi-seed configs expand to one
//! cell per seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::{error, info};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::Value;

use crate::data::{load_cifar10, load_mnist, Split};
use crate::error::{Error, Result};

use super::config::{merge_json, ExperimentConfig};
use super::run::{run_experiment, Data, RunRecord};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default)]
    pub base: Value,
    /// Field name to list of values; combined as a Cartesian product.
    #[serde(default)]
    pub axes: BTreeMap<String, Vec<Value>>,
    #[serde(default)]
    pub cells: Vec<Value>,
}

impl Grid {
    pub fn from_file(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Single-seed configs, in a stable order.
    pub fn expand(&self) -> Result<Vec<ExperimentConfig>> {
        let base = match &self.base {
            Value::Null => Value::Object(Default::default()),
            v => v.clone(),
        };
        let mut combos = vec![base.clone()];
        for (field, values) in &self.axes {
            if values.is_empty() {
                return Err(Error::Input(format!("grid axis `{field}` has no values")));
            }
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    values.iter().map(move |v| {
                        let mut c = c.clone();
                        merge_json(&mut c, Value::Object([(field.clone(), v.clone())].into_iter().collect()));
                        c
                    })
                })
                .collect();
        }
        if self.axes.is_empty() && !self.cells.is_empty() {
            combos.clear();
        }
        for cell in &self.cells {
            let mut c = base.clone();
            merge_json(&mut c, cell.clone());
            combos.push(c);
        }
        let mut out = Vec::new();
        for c in combos {
            out.extend(ExperimentConfig::from_value(c)?.per_seed());
        }
        Ok(out)
    }
}

/// Dataset root: `$SPARSELAB_DATA`, else `./data`.
pub fn data_root() -> std::path::PathBuf {
    std::env::var_os("SPARSELAB_DATA")
        .map(Into::into)
        .unwrap_or_else(|| "data".into())
}

/// Loads `mnist` from `<root>/mnist` or `cifar10` from `<root>/cifar10`.
pub fn load_data(name: &str, root: &Path) -> Result<Data> {
    let dir = root.join(name);
    if !dir.is_dir() {
        return Err(Error::Input(format!(
            "dataset directory {} not found (set SPARSELAB_DATA)",
            dir.display()
        )));
    }
    let load = |split| match name {
        "mnist" => load_mnist(&dir, split),
        "cifar10" => load_cifar10(&dir, split),
        other => Err(Error::Input(format!("unknown dataset `{other}`"))),
    };
    Ok(Data {
        train: load(Split::Train)?,
        test: load(Split::Test)?,
    })
}

/// Outcome of one sweep cell.
#[derive(Debug)]
pub struct CellResult {
    pub config: ExperimentConfig,
    pub outcome: Result<RunRecord>,
}

/// Runs every cell on a pool of `jobs` threads. Each cell is itself
/// single-threaded; a failing cell does not stop the others.
pub fn run_sweep(configs: &[ExperimentConfig], root: &Path, jobs: usize) -> Result<Vec<CellResult>> {
    let mut datasets = BTreeMap::new();
    for c in configs {
        if !datasets.contains_key(&c.dataset) {
            datasets.insert(c.dataset.clone(), load_data(&c.dataset, root)?);
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Input(format!("thread pool: {e}")))?;
    let results = pool.install(|| {
        configs
            .par_iter()
            .map(|c| {
                let outcome = run_experiment(c, &datasets[&c.dataset]);
                match &outcome {
                    Ok(r) => info!("cell {} done", r.run_id),
                    Err(e) => error!("cell {:?} failed: {e}", c.run_id()),
                }
                CellResult {
                    config: c.clone(),
                    outcome,
                }
            })
            .collect()
    });
    Ok(results)
}
