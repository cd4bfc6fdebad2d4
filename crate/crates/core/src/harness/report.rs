//! CSV reports over completed runs.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::analytics::{
    agreement_matrix, ensemble_average, hamming_distance, jaccard_distance, random_dead_slices,
    stability_score, structuredness, PredictionSet, TrajectoryRecord,
};
use crate::arch::LayerSpec;
use crate::data::{load_masks, Dataset};
use crate::error::{Error, Result};
use crate::handling::Handling;
use crate::mask::MaskSet;
use crate::pruning::Method;

use super::config::ExperimentConfig;
use super::run::{iter_dir, RunRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportKind {
    Accuracy,
    Jaccard,
    Hamming,
    Stability,
    Structuredness,
    Ensemble,
    Agreement,
    Trajectories,
}

impl ReportKind {
    pub const ALL: [ReportKind; 8] = [
        ReportKind::Accuracy,
        ReportKind::Jaccard,
        ReportKind::Hamming,
        ReportKind::Stability,
        ReportKind::Structuredness,
        ReportKind::Ensemble,
        ReportKind::Agreement,
        ReportKind::Trajectories,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReportKind::Accuracy => "accuracy",
            ReportKind::Jaccard => "jaccard",
            ReportKind::Hamming => "hamming",
            ReportKind::Stability => "stability",
            ReportKind::Structuredness => "structuredness",
            ReportKind::Ensemble => "ensemble",
            ReportKind::Agreement => "agreement",
            ReportKind::Trajectories => "trajectories",
        }
    }
}

impl fmt::Display for ReportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ReportKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown report kind `{s}`")))
    }
}

/// A completed run loaded from disk.
#[derive(Clone, Debug)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub record: RunRecord,
}

impl LoadedRun {
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(LoadedRun {
            dir: dir.to_path_buf(),
            record: RunRecord::load(dir)?,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.record.config
    }

    pub fn method(&self) -> Method {
        self.config().method
    }

    pub fn handling(&self) -> Handling {
        self.config().handling
    }

    pub fn seed(&self) -> u64 {
        self.config().seeds[0]
    }

    /// `method/handling`.
    pub fn label(&self) -> String {
        format!("{}/{}", self.method(), self.handling())
    }

    pub fn last_iteration(&self) -> usize {
        self.record.iterations.len() - 1
    }

    pub fn masks(&self, k: usize) -> Result<MaskSet> {
        load_masks(&iter_dir(&self.dir, k).join("masks"))
    }

    pub fn probs_path(&self, k: usize) -> PathBuf {
        iter_dir(&self.dir, k).join("test_probs.f32")
    }

    pub fn trajectory(&self) -> Result<TrajectoryRecord> {
        TrajectoryRecord::load(&self.dir, &self.config().architecture()?, self.last_iteration())
    }
}

/// Completed runs whose directories match `pattern`, sorted by path.
/// Directories without a `record.json` are skipped.
pub fn select_runs(pattern: &str) -> Result<Vec<LoadedRun>> {
    let paths = glob::glob(pattern).map_err(|e| Error::Selection(format!("bad glob: {e}")))?;
    let mut runs = Vec::new();
    for p in paths {
        let p = p.map_err(|e| Error::Selection(e.to_string()))?;
        if p.join("record.json").is_file() {
            runs.push(LoadedRun::load(&p)?);
        }
    }
    if runs.is_empty() {
        return Err(Error::Selection(format!("no completed runs match `{pattern}`")));
    }
    runs.sort_by(|a, b| a.dir.cmp(&b.dir));
    Ok(runs)
}

/// Options shared by the report kinds; unused fields are ignored.
#[derive(Clone, Debug, Default)]
pub struct ReportOptions {
    /// `method` or `method/handling` of the comparison reference.
    pub reference: Option<String>,
    /// Ensemble members by `method` or `method/handling`; all when empty.
    pub members: Vec<String>,
    /// Restrict to one iteration.
    pub iteration: Option<usize>,
    /// Restrict to one layer.
    pub layer: Option<String>,
    /// Test labels for ensembles.
    pub labels: Option<Vec<u8>>,
}

struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    fn new(header: &[&str]) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header)?;
        Ok(Table { writer })
    }

    fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        Ok(self.writer.write_record(fields)?)
    }

    fn finish(self) -> Result<String> {
        let bytes = self
            .writer
            .into_inner()
            .map_err(|e| Error::Input(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Shortest round-trip form; exponent notation for very small or large
/// magnitudes.
fn num(v: impl Into<f64>) -> String {
    format!("{:?}", v.into())
}

fn matches(run: &LoadedRun, selector: &str) -> bool {
    selector == run.method().name() || selector == run.label()
}

fn check_same_arch(runs: &[&LoadedRun]) -> Result<()> {
    let first = &runs[0].config().arch;
    if let Some(r) = runs.iter().find(|r| &r.config().arch != first) {
        return Err(Error::Selection(format!(
            "runs compare different architectures: `{first}` and `{}`",
            r.config().arch
        )));
    }
    Ok(())
}

fn iterations_of<'a>(opts: &ReportOptions, run: &'a LoadedRun) -> impl Iterator<Item = usize> + 'a {
    let only = opts.iteration;
    (0..=run.last_iteration()).filter(move |k| only.is_none_or(|o| o == *k))
}

pub fn report(kind: ReportKind, runs: &[LoadedRun], opts: &ReportOptions) -> Result<String> {
    if runs.is_empty() {
        return Err(Error::Selection("no runs selected".into()));
    }
    match kind {
        ReportKind::Accuracy => accuracy_report(runs, opts),
        ReportKind::Jaccard => mask_distance_report(runs, opts, jaccard_distance),
        ReportKind::Hamming => mask_distance_report(runs, opts, hamming_distance),
        ReportKind::Stability => stability_report(runs, opts),
        ReportKind::Structuredness => structuredness_report(runs, opts),
        ReportKind::Ensemble => ensemble_report(runs, opts),
        ReportKind::Agreement => agreement_report(runs, opts),
        ReportKind::Trajectories => trajectory_report(runs, opts),
    }
}

fn accuracy_report(runs: &[LoadedRun], opts: &ReportOptions) -> Result<String> {
    let mut t = Table::new(&[
        "run_id",
        "method",
        "handling",
        "seed",
        "iteration",
        "explicit_sparsity",
        "effective_sparsity",
        "test_accuracy",
    ])?;
    for r in runs {
        for it in &r.record.iterations {
            if opts.iteration.is_some_and(|k| k != it.iteration) {
                continue;
            }
            t.row([
                r.record.run_id.clone(),
                r.method().to_string(),
                r.handling().to_string(),
                r.seed().to_string(),
                it.iteration.to_string(),
                num(it.explicit_sparsity),
                num(it.effective_sparsity),
                num(it.test_accuracy),
            ])?;
        }
    }
    t.finish()
}

/// Pairs every non-reference run with the reference run of the same seed.
fn reference_pairs<'a>(
    runs: &'a [LoadedRun],
    opts: &ReportOptions,
) -> Result<Vec<(&'a LoadedRun, &'a LoadedRun)>> {
    let selector = opts
        .reference
        .as_deref()
        .ok_or_else(|| Error::Selection("a reference method is required".into()))?;
    let refs: Vec<&LoadedRun> = runs.iter().filter(|r| matches(r, selector)).collect();
    if refs.is_empty() {
        return Err(Error::Selection(format!("no run matches reference `{selector}`")));
    }
    let mut by_seed: BTreeMap<u64, &LoadedRun> = BTreeMap::new();
    for r in &refs {
        if by_seed.insert(r.seed(), r).is_some() {
            return Err(Error::Selection(format!(
                "reference `{selector}` is ambiguous for seed {}; use method/handling",
                r.seed()
            )));
        }
    }
    let mut pairs = Vec::new();
    for r in runs.iter().filter(|r| !matches(r, selector)) {
        let reference = by_seed.get(&r.seed()).ok_or_else(|| {
            Error::Selection(format!(
                "{} has seed {} but no reference run shares it",
                r.record.run_id,
                r.seed()
            ))
        })?;
        check_same_arch(&[reference, r])?;
        pairs.push((*reference, r));
    }
    Ok(pairs)
}

fn mask_distance_report(
    runs: &[LoadedRun],
    opts: &ReportOptions,
    distance: fn(&crate::Mask, &crate::Mask) -> Result<f64>,
) -> Result<String> {
    let mut t = Table::new(&["seed", "reference", "other", "iteration", "layer", "distance"])?;
    for (reference, other) in reference_pairs(runs, opts)? {
        let last = reference.last_iteration().min(other.last_iteration());
        for k in iterations_of(opts, reference).filter(|&k| k <= last) {
            let (a, b) = (reference.masks(k)?, other.masks(k)?);
            for ((name, ma), mb) in a.names.iter().zip(&a.masks).zip(&b.masks) {
                if opts.layer.as_ref().is_some_and(|l| l != name) {
                    continue;
                }
                t.row([
                    other.seed().to_string(),
                    reference.label(),
                    other.label(),
                    k.to_string(),
                    name.clone(),
                    num(distance(ma, mb)?),
                ])?;
            }
        }
    }
    t.finish()
}

fn stability_report(runs: &[LoadedRun], opts: &ReportOptions) -> Result<String> {
    let mut t = Table::new(&["run_id", "method", "handling", "seed", "layer", "stability"])?;
    for r in runs {
        let traj = r.trajectory()?;
        let scores = stability_score(&traj)?;
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let rows = traj
            .layer_names
            .iter()
            .cloned()
            .zip(scores)
            .chain(std::iter::once(("mean".to_string(), mean)));
        for (layer, s) in rows {
            if opts.layer.as_ref().is_some_and(|l| *l != layer) {
                continue;
            }
            t.row([
                r.record.run_id.clone(),
                r.method().to_string(),
                r.handling().to_string(),
                r.seed().to_string(),
                layer,
                num(s),
            ])?;
        }
    }
    t.finish()
}

fn structuredness_report(runs: &[LoadedRun], opts: &ReportOptions) -> Result<String> {
    let mut t = Table::new(&[
        "run_id",
        "method",
        "handling",
        "seed",
        "iteration",
        "layer",
        "density",
        "dead_slice_fraction",
        "random_dead_slice_fraction",
    ])?;
    for r in runs {
        let arch = r.config().architecture()?;
        let convs: Vec<bool> = arch
            .prunable_layers()
            .into_iter()
            .map(|i| matches!(arch.layers[i], LayerSpec::Conv2d { .. }))
            .collect();
        for k in iterations_of(opts, r) {
            let masks = r.masks(k)?;
            for ((name, m), &conv) in masks.names.iter().zip(&masks.masks).zip(&convs) {
                if !conv || opts.layer.as_ref().is_some_and(|l| l != name) {
                    continue;
                }
                t.row([
                    r.record.run_id.clone(),
                    r.method().to_string(),
                    r.handling().to_string(),
                    r.seed().to_string(),
                    k.to_string(),
                    name.clone(),
                    num(m.density()),
                    num(structuredness(m)),
                    num(random_dead_slices(m) / m.input_slices() as f64),
                ])?;
            }
        }
    }
    t.finish()
}

/// Runs grouped by seed, filtered to the requested members.
fn members_by_seed<'a>(
    runs: &'a [LoadedRun],
    opts: &ReportOptions,
) -> Result<BTreeMap<u64, Vec<&'a LoadedRun>>> {
    let mut out: BTreeMap<u64, Vec<&LoadedRun>> = BTreeMap::new();
    for r in runs {
        if opts.members.is_empty() || opts.members.iter().any(|m| matches(r, m)) {
            out.entry(r.seed()).or_default().push(r);
        }
    }
    for (seed, group) in &out {
        check_same_arch(group)?;
        if !opts.members.is_empty() {
            for m in &opts.members {
                if !group.iter().any(|r| matches(r, m)) {
                    return Err(Error::Selection(format!("seed {seed} has no run for `{m}`")));
                }
            }
        }
    }
    Ok(out)
}

fn prediction_set(group: &[&LoadedRun], k: usize) -> Result<PredictionSet> {
    let classes = group[0].config().architecture()?.output_size()?;
    let names = group.iter().map(|r| r.label()).collect();
    let paths: Vec<PathBuf> = group.iter().map(|r| r.probs_path(k)).collect();
    let refs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
    PredictionSet::from_files(names, &refs, classes)
}

fn common_last(group: &[&LoadedRun]) -> usize {
    group.iter().map(|r| r.last_iteration()).min().unwrap_or(0)
}

fn ensemble_report(runs: &[LoadedRun], opts: &ReportOptions) -> Result<String> {
    let labels = opts
        .labels
        .as_ref()
        .ok_or_else(|| Error::Input("ensemble report needs test labels".into()))?;
    let mut t = Table::new(&[
        "seed",
        "iteration",
        "members",
        "ensemble_accuracy",
        "best_member",
        "best_member_accuracy",
        "mean_member_accuracy",
    ])?;
    for (seed, group) in members_by_seed(runs, opts)? {
        if group.len() < 2 {
            return Err(Error::Selection(format!("seed {seed} has fewer than two members")));
        }
        let names: Vec<String> = group.iter().map(|r| r.label()).collect();
        for k in (0..=common_last(&group)).filter(|k| opts.iteration.is_none_or(|o| o == *k)) {
            let set = prediction_set(&group, k)?;
            let ens = ensemble_average(&set, labels)?;
            let accs: Vec<f64> = group.iter().map(|r| r.record.iterations[k].test_accuracy).collect();
            let best = (0..accs.len())
                .max_by(|&a, &b| accs[a].total_cmp(&accs[b]).then(b.cmp(&a)))
                .unwrap();
            t.row([
                seed.to_string(),
                k.to_string(),
                names.join("+"),
                num(ens.accuracy),
                names[best].clone(),
                num(accs[best]),
                num(accs.iter().sum::<f64>() / accs.len() as f64),
            ])?;
        }
    }
    t.finish()
}

fn agreement_report(runs: &[LoadedRun], opts: &ReportOptions) -> Result<String> {
    let mut t = Table::new(&["seed", "iteration", "model_p", "model_q", "agreement"])?;
    for (seed, group) in members_by_seed(runs, opts)? {
        let last = common_last(&group);
        let k = opts.iteration.unwrap_or(last);
        if k > last {
            return Err(Error::Selection(format!("iteration {k} not reached by every run")));
        }
        let set = prediction_set(&group, k)?;
        let m = agreement_matrix(&set);
        for (p, row) in m.iter().enumerate() {
            for (q, c) in row.iter().enumerate() {
                t.row([
                    seed.to_string(),
                    k.to_string(),
                    set.models[p].clone(),
                    set.models[q].clone(),
                    c.to_string(),
                ])?;
            }
        }
    }
    t.finish()
}

fn trajectory_report(runs: &[LoadedRun], opts: &ReportOptions) -> Result<String> {
    let mut t = Table::new(&["run_id", "layer", "index", "iteration", "weight", "kept"])?;
    for r in runs {
        let traj = r.trajectory()?;
        for (l, name) in traj.layer_names.iter().enumerate() {
            if opts.layer.as_ref().is_some_and(|x| x != name) {
                continue;
            }
            let n = traj.weights[0][l].len();
            for i in 0..n {
                for (s, &k) in traj.iterations.iter().enumerate() {
                    if opts.iteration.is_some_and(|o| o != k) {
                        continue;
                    }
                    let kept = traj.masks[s].masks[l].is_kept(i);
                    t.row([
                        r.record.run_id.clone(),
                        name.clone(),
                        i.to_string(),
                        k.to_string(),
                        num(traj.weights[s][l].data()[i]),
                        (kept as u8).to_string(),
                    ])?;
                }
            }
        }
    }
    t.finish()
}

/// Test labels matching the runs' test ordering (honours `test_limit`).
pub fn test_labels(runs: &[LoadedRun], test: &Dataset) -> Result<Vec<u8>> {
    let limit = runs[0].config().test_limit;
    if runs.iter().any(|r| r.config().test_limit != limit || r.config().dataset != runs[0].config().dataset) {
        return Err(Error::Selection("runs were evaluated on different test sets".into()));
    }
    let n = limit.unwrap_or(test.len()).min(test.len());
    Ok(test.labels[..n].to_vec())
}

/// One layer's weights or mask bits as a grid: one row per output unit,
/// one column per `(input, ky, kx)` position.
pub fn inspect_mask(run_dir: &Path, iteration: usize, layer: &str, weights: bool) -> Result<String> {
    let run = LoadedRun::load(run_dir).or_else(|_| -> Result<LoadedRun> {
        // unfinished runs have no record yet
        let cfg: ExperimentConfig =
            serde_json::from_str(&std::fs::read_to_string(run_dir.join("config.json"))?)?;
        Ok(LoadedRun {
            dir: run_dir.to_path_buf(),
            record: RunRecord {
                run_id: cfg.run_id()?,
                config_hash: cfg.hash()?,
                config: cfg,
                iterations: Vec::new(),
            },
        })
    })?;
    let arch = run.config().architecture()?;
    let ckpt = crate::data::load_checkpoint(&iter_dir(run_dir, iteration), "final", &arch)?;
    let masks = ckpt
        .masks
        .ok_or_else(|| Error::State("checkpoint has no masks".into()))?;
    let slot = masks
        .names
        .iter()
        .position(|n| n == layer)
        .ok_or_else(|| Error::Selection(format!("no prunable layer `{layer}`")))?;
    let mask = &masks.masks[slot];
    let w = ckpt.net.params()[slot].weight.data();
    let shape = mask.shape();
    let cols = mask.len() / shape[0];
    let inner = cols / shape[1];
    let mut header = vec!["unit".to_string()];
    for c in 0..shape[1] {
        for j in 0..inner {
            header.push(if inner == 1 { format!("in{c}") } else { format!("in{c}_{j}") });
        }
    }
    let mut t = Table::new(&header.iter().map(String::as_str).collect::<Vec<_>>())?;
    for o in 0..shape[0] {
        let mut row = vec![o.to_string()];
        for i in o * cols..(o + 1) * cols {
            row.push(if weights {
                w[i].to_string()
            } else {
                mask.bits()[i].to_string()
            });
        }
        t.row(row)?;
    }
    t.finish()
}
