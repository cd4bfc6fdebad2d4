use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::arch::ArchitectureSpec;
use crate::data::fnv1a64;
use crate::error::{Error, Result};
use crate::handling::Handling;
use crate::nn::TrainConfig;
use crate::pruning::{Direction, Method, PruneSpec, Scope};
use crate::zoo;

fn default_arch() -> String {
    "lenet".into()
}
fn default_dataset() -> String {
    "mnist".into()
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_epochs() -> usize {
    30
}
fn default_lr() -> f64 {
    0.01
}
fn default_batch() -> usize {
    32
}
fn default_iterations() -> usize {
    20
}
fn default_fraction() -> f64 {
    0.2
}
fn default_method() -> Method {
    Method::L1Unstructured
}
fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

/// One experiment: a method/handling pair applied to one or more seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Zoo name (`lenet`, `vgg11_cifar10`, ...) or path to a JSON spec.
    #[serde(default = "default_arch")]
    pub arch: String,
    /// `mnist` or `cifar10`.
    #[serde(default = "default_dataset")]
    pub dataset: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_epochs")]
    pub epochs_per_iteration: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Number of prune-and-retrain rounds after the dense stint.
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub scope: Scope,
    #[serde(default)]
    pub direction: Direction,
    #[serde(default)]
    pub handling: Handling,
    /// Epoch of the dense stint whose weights are kept for resetting.
    #[serde(default)]
    pub checkpoint_capture_epoch: usize,
    /// Optional `(mean, std)` standardisation after `/255` scaling.
    #[serde(default)]
    pub standardize: Option<(f32, f32)>,
    /// Use only the first N training / test examples.
    #[serde(default)]
    pub train_limit: Option<usize>,
    #[serde(default)]
    pub test_limit: Option<usize>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl ExperimentConfig {
    pub fn from_value(v: Value) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_value(v).map_err(|e| Error::config(None, format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_value(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs_per_iteration", self.epochs_per_iteration),
            ("batch_size", self.batch_size),
            ("iterations", self.iterations),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(None, format!("{name} must be positive")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(None, format!("lr must be positive, got {}", self.lr)));
        }
        if self.seeds.is_empty() {
            return Err(Error::config(None, "at least one seed is required"));
        }
        if self.checkpoint_capture_epoch >= self.epochs_per_iteration {
            return Err(Error::config(
                None,
                "checkpoint_capture_epoch must be smaller than epochs_per_iteration",
            ));
        }
        if matches!(self.train_limit, Some(0)) || matches!(self.test_limit, Some(0)) {
            return Err(Error::config(None, "dataset limits must be positive"));
        }
        if let Some((_, std)) = self.standardize {
            if !(std > 0.0) {
                return Err(Error::config(None, "standardisation std must be positive"));
            }
        }
        self.prune_spec().validate()?;
        self.architecture()?;
        Ok(())
    }

    pub fn architecture(&self) -> Result<ArchitectureSpec> {
        if let Some(spec) = zoo::by_name(&self.arch) {
            return Ok(spec);
        }
        let path = Path::new(&self.arch);
        if path.is_file() {
            return ArchitectureSpec::from_json(&fs::read_to_string(path)?);
        }
        Err(Error::config(None, format!("unknown architecture `{}`", self.arch)))
    }

    pub fn prune_spec(&self) -> PruneSpec {
        PruneSpec {
            method: self.method,
            scope: self.scope,
            direction: self.direction,
            fraction: self.fraction,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs_per_iteration,
            lr: self.lr,
            batch_size: self.batch_size,
        }
    }

    /// One config per seed.
    pub fn per_seed(&self) -> Vec<ExperimentConfig> {
        self.seeds
            .iter()
            .map(|&s| ExperimentConfig {
                seeds: vec![s],
                ..self.clone()
            })
            .collect()
    }

    pub fn seed(&self) -> Result<u64> {
        match self.seeds.as_slice() {
            [s] => Ok(*s),
            _ => Err(Error::Input("expected a single-seed config".into())),
        }
    }

    /// Stable key of everything that affects a run's results: the config
    /// minus its output location, with the architecture resolved.
    pub fn hash(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        let obj = v.as_object_mut().unwrap();
        obj.remove("output_dir");
        obj.insert("arch".into(), serde_json::to_value(self.architecture()?)?);
        Ok(format!("{:016x}", fnv1a64(serde_json::to_string(&v)?.as_bytes())))
    }

    /// Directory name of a single-seed run.
    pub fn run_id(&self) -> Result<String> {
        Ok(format!(
            "{}-{}-{}-s{}-{}",
            self.arch_label(),
            self.method,
            self.handling,
            self.seed()?,
            &self.hash()?[..10]
        ))
    }

    fn arch_label(&self) -> String {
        Path::new(&self.arch)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.arch.clone())
    }

    pub fn run_dir(&self) -> Result<PathBuf> {
        Ok(self.output_dir.join(self.run_id()?))
    }
}

/// Overlays `top` onto `base` key by key (objects merge recursively).
pub fn merge_json(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                merge_json(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, t) => *b = t,
    }
}
