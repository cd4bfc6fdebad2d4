//! On-disk checkpoints: a JSON manifest next to raw little-endian tensor
//! files and one-byte-per-bit mask files, each guarded by an FNV-1a
//! checksum.

use std::collections::BTreeMap;
use std::fs;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::arch::ArchitectureSpec;
use crate::error::{Error, Result};
use crate::mask::{Mask, MaskSet};
use crate::nn::Network;
use crate::rng::RngState;
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
    /// FNV-1a 64 of the file contents, lower-case hex.
    pub checksum: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub arch: ArchitectureSpec,
    pub tensors: Vec<TensorEntry>,
    pub has_masks: bool,
    pub rng: BTreeMap<String, RngState>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskManifest {
    pub version: u32,
    pub iteration: usize,
    pub layers: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub net: Network<f32>,
    pub masks: Option<MaskSet>,
    pub rng: BTreeMap<String, RngState>,
}

fn write_checked(dir: &Path, file: &str, bytes: &[u8]) -> Result<String> {
    fs::write(dir.join(file), bytes)?;
    Ok(format!("{:016x}", fnv1a64(bytes)))
}

fn read_checked(dir: &Path, entry: &TensorEntry) -> Result<Vec<u8>> {
    let bytes = fs::read(dir.join(&entry.file))?;
    let sum = format!("{:016x}", fnv1a64(&bytes));
    if sum != entry.checksum {
        return Err(Error::Persistence(format!(
            "checksum mismatch for {}: manifest {}, file {sum}",
            dir.join(&entry.file).display(),
            entry.checksum
        )));
    }
    Ok(bytes)
}

/// Writes a tensor as raw little-endian elements; returns its checksum.
pub fn write_tensor_file<T: Scalar>(path: &Path, data: &[T]) -> Result<String> {
    let mut bytes = Vec::with_capacity(data.len() * T::BYTES);
    for &v in data {
        v.write_le(&mut bytes);
    }
    fs::write(path, &bytes)?;
    Ok(format!("{:016x}", fnv1a64(&bytes)))
}

pub fn read_tensor_file<T: Scalar>(path: &Path) -> Result<Vec<T>> {
    let bytes = fs::read(path)?;
    if bytes.len() % T::BYTES != 0 {
        return Err(Error::Persistence(format!(
            "{} is not a whole number of {}-byte elements",
            path.display(),
            T::BYTES
        )));
    }
    Ok(bytes.chunks_exact(T::BYTES).map(T::read_le).collect())
}

/// Writes `dir` atomically: contents go to a sibling temp dir first.
fn write_dir_atomic(dir: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let parent = dir.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let name = dir
        .file_name()
        .ok_or_else(|| Error::Persistence(format!("bad directory {}", dir.display())))?;
    let tmp: PathBuf = parent.join(format!(".{}.tmp", name.to_string_lossy()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    fill(&tmp)?;
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&tmp, dir)?;
    Ok(())
}

fn write_masks_into(dir: &Path, masks: &MaskSet) -> Result<MaskManifest> {
    let layers = masks
        .names
        .iter()
        .zip(&masks.masks)
        .map(|(name, m)| {
            let file = format!("{name}.mask");
            Ok(TensorEntry {
                name: name.clone(),
                shape: m.shape().to_vec(),
                checksum: write_checked(dir, &file, m.bits())?,
                file,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = MaskManifest {
        version: CHECKPOINT_VERSION,
        iteration: masks.iteration,
        layers,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Saves a mask set as a directory of `<layer>.mask` files plus
/// `manifest.json`.
pub fn save_masks(dir: &Path, masks: &MaskSet) -> Result<()> {
    write_dir_atomic(dir, |tmp| write_masks_into(tmp, masks).map(|_| ()))
}

pub fn load_masks(dir: &Path) -> Result<MaskSet> {
    let manifest: MaskManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Persistence(format!(
            "mask format version {} (expected {CHECKPOINT_VERSION})",
            manifest.version
        )));
    }
    let mut names = Vec::new();
    let mut masks = Vec::new();
    for entry in &manifest.layers {
        let bytes = read_checked(dir, entry)?;
        masks.push(
            Mask::from_bits(&entry.shape, bytes)
                .map_err(|e| Error::Persistence(format!("{}: {e}", entry.file)))?,
        );
        names.push(entry.name.clone());
    }
    Ok(MaskSet {
        iteration: manifest.iteration,
        names,
        masks,
    })
}

fn ckpt_dir(run_dir: &Path, tag: &str) -> PathBuf {
    run_dir.join(format!("{tag}.ckpt"))
}

/// Saves weights, biases, optional masks, and RNG states under
/// `run_dir/<tag>.ckpt/`.
pub fn save_checkpoint(run_dir: &Path, tag: &str, ckpt: &Checkpoint) -> Result<()> {
    write_dir_atomic(&ckpt_dir(run_dir, tag), |dir| {
        let mut tensors = Vec::new();
        for p in ckpt.net.params() {
            for (kind, t) in [("weight", &p.weight), ("bias", &p.bias)] {
                let file = format!("{}.{kind}.f32", p.name);
                let checksum = write_tensor_file(&dir.join(&file), t.data())?;
                tensors.push(TensorEntry {
                    name: format!("{}.{kind}", p.name),
                    shape: t.shape().to_vec(),
                    file,
                    checksum,
                });
            }
        }
        if let Some(masks) = &ckpt.masks {
            let mdir = dir.join("masks");
            fs::create_dir_all(&mdir)?;
            write_masks_into(&mdir, masks)?;
        }
        let manifest = CheckpointManifest {
            version: CHECKPOINT_VERSION,
            arch: ckpt.net.arch().clone(),
            tensors,
            has_masks: ckpt.masks.is_some(),
            rng: ckpt.rng.clone(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    })
}

pub fn checkpoint_exists(run_dir: &Path, tag: &str) -> bool {
    ckpt_dir(run_dir, tag).join("manifest.json").is_file()
}

/// Loads a checkpoint, refusing one saved for a different architecture.
pub fn load_checkpoint(run_dir: &Path, tag: &str, arch: &ArchitectureSpec) -> Result<Checkpoint> {
    let dir = ckpt_dir(run_dir, tag);
    let manifest: CheckpointManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Persistence(format!(
            "checkpoint version {} (expected {CHECKPOINT_VERSION})",
            manifest.version
        )));
    }
    if manifest.arch != *arch {
        return Err(Error::State(format!(
            "checkpoint {} was saved for architecture `{}`, not `{}`",
            dir.display(),
            manifest.arch.name,
            arch.name
        )));
    }
    let mut net = Network::<f32>::zeros(arch)?;
    let by_name: BTreeMap<&str, &TensorEntry> =
        manifest.tensors.iter().map(|e| (e.name.as_str(), e)).collect();
    for p in net.params_mut() {
        for (kind, t) in [("weight", &mut p.weight), ("bias", &mut p.bias)] {
            let key = format!("{}.{kind}", p.name);
            let entry = by_name
                .get(key.as_str())
                .ok_or_else(|| Error::State(format!("checkpoint lacks tensor {key}")))?;
            if entry.shape != t.shape() {
                return Err(Error::State(format!(
                    "{key}: stored shape {:?}, expected {:?}",
                    entry.shape,
                    t.shape()
                )));
            }
            let bytes = read_checked(&dir, entry)?;
            if bytes.len() != t.len() * 4 {
                return Err(Error::Persistence(format!("{key}: wrong byte length")));
            }
            for (dst, chunk) in t.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
                *dst = f32::read_le(chunk);
            }
        }
    }
    let masks = if manifest.has_masks {
        let m = load_masks(&dir.join("masks"))?;
        m.check_against(arch)?;
        Some(m)
    } else {
        None
    };
    Ok(Checkpoint {
        net,
        masks,
        rng: manifest.rng,
    })
}
