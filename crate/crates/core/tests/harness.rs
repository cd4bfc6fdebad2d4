use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde_json::json;

use sparselab::data::{Dataset, Split};
use sparselab::harness::{
    iter_dir, load_data, regenerate_metrics, run_experiment, run_sweep, Data, ExperimentConfig, RunRecord,
};
use sparselab::tensor::Tensor;
use sparselab::{Error, RngStream, StreamId};

/// Images whose bright row band encodes the label.
fn synthetic(n: usize, seed: u64, split: Split) -> Dataset {
    let mut rng = RngStream::new(seed, StreamId::Aux(7));
    let mut pixels = Vec::with_capacity(n * 784);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let label = rng.gen_range(0..10u8);
        for r in 0..28 {
            for _ in 0..28 {
                let bright = (r * 10 / 28) as u8 == label;
                pixels.push(if bright { 0.9 } else { rng.gen_range(0.0..0.2) });
            }
        }
        labels.push(label);
    }
    Dataset::new(Tensor::from_vec(&[n, 1, 28, 28], pixels).unwrap(), labels, split).unwrap()
}

fn data() -> Data {
    Data {
        train: synthetic(96, 1, Split::Train),
        test: synthetic(40, 2, Split::Test),
    }
}

fn config(out: &Path, method: &str, handling: &str) -> ExperimentConfig {
    ExperimentConfig::from_value(json!({
        "seeds": [3],
        "epochs_per_iteration": 2,
        "batch_size": 16,
        "lr": 0.05,
        "iterations": 2,
        "fraction": 0.3,
        "method": method,
        "handling": handling,
        "output_dir": out,
    }))
    .unwrap()
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// Every file except the two that embed the output directory.
fn assert_same_tree(a: &Path, b: &Path) {
    let (fa, fb) = (files_under(a), files_under(b));
    assert_eq!(fa, fb);
    for f in fa {
        if f == Path::new("config.json") || f == Path::new("record.json") {
            continue;
        }
        assert!(fs::read(a.join(&f)).unwrap() == fs::read(b.join(&f)).unwrap(), "{} differs", f.display());
    }
}

#[test]
fn identical_configs_give_identical_runs() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let data = data();
    let (c1, c2) = (config(d1.path(), "random_unstructured", "rewind"), config(d2.path(), "random_unstructured", "rewind"));
    let r1 = run_experiment(&c1, &data).unwrap();
    let r2 = run_experiment(&c2, &data).unwrap();
    assert_eq!(r1.iterations, r2.iterations);
    assert_eq!(r1.run_id, r2.run_id);
    assert_same_tree(&c1.run_dir().unwrap(), &c2.run_dir().unwrap());
    assert_eq!(r1.iterations.len(), 3);
    assert!((r1.iterations[2].explicit_sparsity - 0.51).abs() < 0.01);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let data = data();
    let full = config(d1.path(), "l1_structured", "sign_sigma");
    let rec = run_experiment(&full, &data).unwrap();

    // simulate a crash after iteration 1 finished and iteration 2 saved its checkpoint
    let partial = config(d2.path(), "l1_structured", "sign_sigma");
    let (src, dst) = (full.run_dir().unwrap(), partial.run_dir().unwrap());
    fs::create_dir_all(&dst).unwrap();
    for f in files_under(&src) {
        fs::create_dir_all(dst.join(&f).parent().unwrap()).unwrap();
        fs::copy(src.join(&f), dst.join(&f)).unwrap();
    }
    fs::remove_file(dst.join("record.json")).unwrap();
    fs::remove_file(iter_dir(&dst, 2).join("summary.json")).unwrap();
    fs::remove_file(iter_dir(&dst, 2).join("metrics.csv")).unwrap();

    let resumed = run_experiment(&partial, &data).unwrap();
    assert_eq!(resumed.iterations, rec.iterations);
    assert_same_tree(&src, &dst);
}

#[test]
fn finished_run_is_not_recomputed() {
    let dir = tempfile::tempdir().unwrap();
    let data = data();
    let cfg = config(dir.path(), "l1_unstructured", "finetune");
    let first = run_experiment(&cfg, &data).unwrap();
    let record = cfg.run_dir().unwrap().join("record.json");
    let stamp = fs::metadata(&record).unwrap().modified().unwrap();
    let again = run_experiment(&cfg, &data).unwrap();
    assert_eq!(first, again);
    assert_eq!(fs::metadata(&record).unwrap().modified().unwrap(), stamp);
    assert_eq!(RunRecord::load(&cfg.run_dir().unwrap()).unwrap(), first);
}

#[test]
fn metrics_regenerate_from_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let data = data();
    let cfg = config(dir.path(), "hybrid", "rewind");
    let rec = run_experiment(&cfg, &data).unwrap();
    let run_dir = cfg.run_dir().unwrap();
    for it in &rec.iterations {
        let stored = fs::read_to_string(iter_dir(&run_dir, it.iteration).join("metrics.csv")).unwrap();
        assert_eq!(regenerate_metrics(&run_dir, it.iteration, &data.test).unwrap(), stored);
    }
}

#[test]
fn foreign_config_in_run_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "l1_unstructured", "rewind");
    let run_dir = cfg.run_dir().unwrap();
    fs::create_dir_all(&run_dir).unwrap();
    let other = config(dir.path(), "l2_structured", "rewind");
    fs::write(run_dir.join("config.json"), serde_json::to_string(&other).unwrap()).unwrap();
    assert!(matches!(run_experiment(&cfg, &data()).unwrap_err(), Error::State(_)));
}

fn write_idx(dir: &Path, prefix: &str, ds: &Dataset) {
    let n = ds.len() as u32;
    let mut img = Vec::new();
    for v in [0x0803u32, n, 28, 28] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(ds.images.data().iter().map(|&p| (p * 255.0).round() as u8));
    let mut lab = Vec::new();
    for v in [0x0801u32, n] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(&ds.labels);
    fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), img).unwrap();
    fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), lab).unwrap();
}

#[test]
fn sweep_isolates_failing_cells() {
    let root = tempfile::tempdir().unwrap();
    let mnist = root.path().join("mnist");
    fs::create_dir_all(&mnist).unwrap();
    let d = data();
    write_idx(&mnist, "train", &d.train);
    write_idx(&mnist, "t10k", &d.test);
    assert_eq!(load_data("mnist", root.path()).unwrap().test.len(), 40);

    let out = root.path().join("runs");
    let good = config(&out, "fc_only", "sign_only");
    let mut bad = config(&out, "fc_only", "rewind");
    bad.arch = root.path().join("missing.json").display().to_string();
    let results = run_sweep(&[bad, good.clone()], root.path(), 2).unwrap();
    assert!(results[0].outcome.is_err());
    let rec = results[1].outcome.as_ref().unwrap();
    assert_eq!(rec.iterations.len(), 3);
    assert!(good.run_dir().unwrap().join("record.json").is_file());
}
