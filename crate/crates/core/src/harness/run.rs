//! Single-seed iterative pruning runs with on-disk persistence.
//!
//! Layout of a run directory:
//!
//! ```text
//! <run_id>/config.json
//! <run_id>/init.ckpt/            captured reset point
//! <run_id>/iter_<k>/final.ckpt/  trained weights, mask k, RNG states
//! <run_id>/iter_<k>/masks/       mask k on its own
//! <run_id>/iter_<k>/metrics.csv  per-layer sparsity and test accuracy
//! <run_id>/iter_<k>/train_log.csv
//! <run_id>/iter_<k>/test_probs.f32
//! <run_id>/iter_<k>/summary.json
//! <run_id>/record.json           written once every iteration is done
//! ```
//!
//! Iteration 0 trains the dense network; iteration k trains under the mask
//! obtained after k pruning steps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::analytics::{aggregate, effective_sparsity, LayerSparsity};
use crate::data::{
    load_checkpoint, save_checkpoint, save_masks, write_tensor_file, Checkpoint, Dataset,
};
use crate::error::{Error, Result};
use crate::handling::{self, InitCheckpoint};
use crate::mask::MaskSet;
use crate::nn::{evaluate, predict_proba, train, Network, TrainConfig};
use crate::pruning::prune_step;
use crate::rng::{RngStream, StreamId};

use super::config::ExperimentConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Test accuracy (percent) after the last epoch of this iteration.
    pub test_accuracy: f64,
    pub explicit_sparsity: f64,
    pub effective_sparsity: f64,
    pub layers: Vec<LayerSparsity>,
    /// Paths relative to the run directory.
    pub checkpoint: String,
    pub masks: String,
    pub test_probs: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub iterations: Vec<IterationRecord>,
}

impl RunRecord {
    pub fn load(run_dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(run_dir.join("record.json"))?)?)
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.test_accuracy).collect()
    }
}

/// Train and test sets for a run.
#[derive(Clone, Debug)]
pub struct Data {
    pub train: Dataset,
    pub test: Dataset,
}

impl Data {
    /// Applies a config's limits and standardisation.
    pub fn prepared(&self, cfg: &ExperimentConfig) -> Data {
        let mut train = match cfg.train_limit {
            Some(n) => self.train.head(n),
            None => self.train.clone(),
        };
        let mut test = match cfg.test_limit {
            Some(n) => self.test.head(n),
            None => self.test.clone(),
        };
        if let Some((mean, std)) = cfg.standardize {
            train.standardize(mean, std);
            test.standardize(mean, std);
        }
        Data { train, test }
    }
}

pub fn iter_dir(run_dir: &Path, k: usize) -> PathBuf {
    run_dir.join(format!("iter_{k}"))
}

fn rel(k: usize, name: &str) -> String {
    format!("iter_{k}/{name}")
}

/// Per-layer metrics table of one iteration. Every value is a function of
/// the persisted final checkpoint and the test set.
pub fn metrics_csv(iteration: usize, layers: &[LayerSparsity], test_accuracy: f64) -> String {
    let mut out = String::from(
        "iteration,layer,total,explicit_pruned,implicit_pruned,explicit_fraction,effective_fraction,test_accuracy\n",
    );
    let all = aggregate(layers);
    for l in layers.iter().chain(std::iter::once(&all)) {
        writeln!(
            out,
            "{iteration},{},{},{},{},{},{},{test_accuracy}",
            l.layer,
            l.total,
            l.explicit_pruned,
            l.implicit_pruned,
            l.explicit_fraction(),
            l.effective_fraction()
        )
        .unwrap();
    }
    out
}

/// Rebuilds `iter_<k>/metrics.csv` from the saved checkpoint.
pub fn regenerate_metrics(run_dir: &Path, k: usize, test: &Dataset) -> Result<String> {
    let cfg: ExperimentConfig =
        serde_json::from_str(&fs::read_to_string(run_dir.join("config.json"))?)?;
    let arch = cfg.architecture()?;
    let ckpt = load_checkpoint(&iter_dir(run_dir, k), "final", &arch)?;
    let masks = ckpt
        .masks
        .ok_or_else(|| Error::State("final checkpoint has no masks".into()))?;
    let layers = effective_sparsity(&masks, &arch)?;
    let acc = evaluate(&ckpt.net, test)?;
    Ok(metrics_csv(k, &layers, acc))
}

fn train_log(report: &crate::nn::TrainReport, first_epoch: usize) -> String {
    let mut out = String::from("epoch,train_loss\n");
    for (e, loss) in report.epoch_loss.iter().enumerate() {
        writeln!(out, "{},{loss}", first_epoch + e + 1).unwrap();
    }
    out
}

fn rng_map(shuffle: &RngStream, prune: &RngStream) -> BTreeMap<String, crate::rng::RngState> {
    BTreeMap::from([
        ("shuffle".to_string(), shuffle.state()),
        ("prune".to_string(), prune.state()),
    ])
}

fn rng_from(ckpt: &Checkpoint, key: &str) -> Result<RngStream> {
    let state = ckpt
        .rng
        .get(key)
        .ok_or_else(|| Error::State(format!("checkpoint lacks `{key}` RNG state")))?;
    RngStream::from_state(state)
}

/// Highest iteration whose summary was written.
fn last_complete(run_dir: &Path, iterations: usize) -> Option<usize> {
    (0..=iterations)
        .take_while(|&k| iter_dir(run_dir, k).join("summary.json").is_file())
        .last()
}

/// Runs (or resumes) one single-seed experiment; a finished run with the
/// same config hash is returned from disk untouched.
pub fn run_experiment(cfg: &ExperimentConfig, data: &Data) -> Result<RunRecord> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let run_id = cfg.run_id()?;
    let hash = cfg.hash()?;
    let run_dir = cfg.run_dir()?;
    let arch = cfg.architecture()?;
    let data = data.prepared(cfg);

    if let Ok(rec) = RunRecord::load(&run_dir) {
        if rec.config_hash == hash {
            info!("{run_id}: already complete");
            return Ok(rec);
        }
    }
    fs::create_dir_all(&run_dir)?;
    let cfg_path = run_dir.join("config.json");
    if cfg_path.is_file() {
        let stored: ExperimentConfig = serde_json::from_str(&fs::read_to_string(&cfg_path)?)?;
        if stored.hash()? != hash {
            return Err(Error::State(format!(
                "{} holds a run with a different configuration",
                run_dir.display()
            )));
        }
    } else {
        fs::write(&cfg_path, serde_json::to_string_pretty(cfg)?)?;
    }

    let tc = cfg.train_config();
    let spec = cfg.prune_spec();
    let mut records = Vec::new();

    let (mut net, mut masks, mut shuffle, mut prune_rng, init, start);
    match last_complete(&run_dir, cfg.iterations) {
        Some(k) => {
            for j in 0..=k {
                let text = fs::read_to_string(iter_dir(&run_dir, j).join("summary.json"))?;
                records.push(serde_json::from_str::<IterationRecord>(&text)?);
            }
            let ckpt = load_checkpoint(&iter_dir(&run_dir, k), "final", &arch)?;
            shuffle = rng_from(&ckpt, "shuffle")?;
            prune_rng = rng_from(&ckpt, "prune")?;
            masks = ckpt
                .masks
                .ok_or_else(|| Error::State("final checkpoint has no masks".into()))?;
            net = ckpt.net;
            init = InitCheckpoint::capture(&load_checkpoint(&run_dir, "init", &arch)?.net);
            start = k + 1;
            info!("{run_id}: resuming after iteration {k}");
        }
        None => {
            let mut init_rng = RngStream::new(seed, StreamId::Init);
            net = Network::<f32>::init(&arch, &mut init_rng)?;
            shuffle = RngStream::new(seed, StreamId::Shuffle);
            prune_rng = RngStream::new(seed, StreamId::PruneRandom);
            masks = MaskSet::dense(&arch);
            let mut log = String::from("epoch,train_loss\n");
            let capture = cfg.checkpoint_capture_epoch;
            if capture > 0 {
                let pre = TrainConfig { epochs: capture, ..tc };
                let report = train(&mut net, None, &data.train, None, &pre, &mut shuffle)?;
                log = train_log(&report, 0);
            }
            init = InitCheckpoint::capture(&net);
            let init_ckpt = Checkpoint {
                net: net.clone(),
                masks: None,
                rng: rng_map(&shuffle, &prune_rng),
            };
            save_checkpoint(&run_dir, "init", &init_ckpt)?;
            let rest = TrainConfig {
                epochs: tc.epochs - capture,
                ..tc
            };
            let report = train(&mut net, Some(&masks), &data.train, None, &rest, &mut shuffle)?;
            log.push_str(train_log(&report, capture).trim_start_matches("epoch,train_loss\n"));
            records.push(finish_iteration(
                &run_dir, 0, &net, &masks, &shuffle, &prune_rng, &data.test, &log,
            )?);
            info!("{run_id}: iteration 0 accuracy {:.2}", records[0].test_accuracy);
            start = 1;
        }
    }

    for k in start..=cfg.iterations {
        masks = prune_step(&net, &masks, &spec, &mut prune_rng)?;
        handling::apply(cfg.handling, &mut net, &init, &masks)?;
        let report = train(&mut net, Some(&masks), &data.train, None, &tc, &mut shuffle)?;
        let rec = finish_iteration(
            &run_dir,
            k,
            &net,
            &masks,
            &shuffle,
            &prune_rng,
            &data.test,
            &train_log(&report, 0),
        )?;
        info!(
            "{run_id}: iteration {k} accuracy {:.2} sparsity {:.4}",
            rec.test_accuracy, rec.explicit_sparsity
        );
        records.push(rec);
    }

    let record = RunRecord {
        run_id,
        config_hash: hash,
        config: cfg.clone(),
        iterations: records,
    };
    fs::write(run_dir.join("record.json"), serde_json::to_string_pretty(&record)?)?;
    Ok(record)
}

#[allow(clippy::too_many_arguments)]
fn finish_iteration(
    run_dir: &Path,
    k: usize,
    net: &Network<f32>,
    masks: &MaskSet,
    shuffle: &RngStream,
    prune_rng: &RngStream,
    test: &Dataset,
    log: &str,
) -> Result<IterationRecord> {
    let dir = iter_dir(run_dir, k);
    fs::create_dir_all(&dir)?;
    let ckpt = Checkpoint {
        net: net.clone(),
        masks: Some(masks.clone()),
        rng: rng_map(shuffle, prune_rng),
    };
    save_checkpoint(&dir, "final", &ckpt)?;
    save_masks(&dir.join("masks"), masks)?;
    write_tensor_file(&dir.join("test_probs.f32"), &predict_proba(net, test)?)?;
    let acc = evaluate(net, test)?;
    let layers = effective_sparsity(masks, net.arch())?;
    fs::write(dir.join("metrics.csv"), metrics_csv(k, &layers, acc))?;
    fs::write(dir.join("train_log.csv"), log)?;
    let all = aggregate(&layers);
    let rec = IterationRecord {
        iteration: k,
        test_accuracy: acc,
        explicit_sparsity: all.explicit_fraction(),
        effective_sparsity: all.effective_fraction(),
        layers,
        checkpoint: rel(k, "final.ckpt"),
        masks: rel(k, "masks"),
        test_probs: rel(k, "test_probs.f32"),
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&rec)?)?;
    Ok(rec)
}
