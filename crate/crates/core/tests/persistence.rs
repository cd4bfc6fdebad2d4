use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::RngCore;

use sparselab::data::{
    load_checkpoint, load_cifar10_binary, load_masks, load_mnist, load_mnist_idx, save_checkpoint, save_masks,
    Checkpoint, Split, CIFAR_RECORD_BYTES,
};
use sparselab::nn::Network;
use sparselab::pruning::{prune_step, Method, PruneSpec};
use sparselab::{zoo, Error, MaskSet, RngStream, StreamId};

fn sample_checkpoint() -> (Checkpoint, RngStream) {
    let arch = zoo::lenet();
    let net = Network::<f32>::init(&arch, &mut RngStream::new(5, StreamId::Init)).unwrap();
    let mut prune_rng = RngStream::new(5, StreamId::PruneRandom);
    let masks = prune_step(&net, &MaskSet::dense(&arch), &PruneSpec::local(Method::RandomStructured, 0.3), &mut prune_rng)
        .unwrap();
    let mut shuffle = RngStream::new(5, StreamId::Shuffle);
    for _ in 0..1234 {
        shuffle.next_u32();
    }
    let mut rng = BTreeMap::new();
    rng.insert("shuffle".to_string(), shuffle.state());
    rng.insert("prune".to_string(), prune_rng.state());
    (
        Checkpoint {
            net,
            masks: Some(masks),
            rng,
        },
        shuffle,
    )
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, mut shuffle) = sample_checkpoint();
    save_checkpoint(dir.path(), "final", &ckpt).unwrap();
    let back = load_checkpoint(dir.path(), "final", &zoo::lenet()).unwrap();
    for (a, b) in ckpt.net.params().iter().zip(back.net.params()) {
        let bits = |t: &[f32]| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.weight.data()), bits(b.weight.data()));
        assert_eq!(bits(a.bias.data()), bits(b.bias.data()));
    }
    assert_eq!(ckpt, back);

    // the restored stream continues where the saved one stopped
    let mut resumed = RngStream::from_state(&back.rng["shuffle"]).unwrap();
    for _ in 0..50 {
        assert_eq!(resumed.next_u32(), shuffle.next_u32());
    }
}

#[test]
fn loading_into_another_architecture_is_a_state_error() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, _) = sample_checkpoint();
    save_checkpoint(dir.path(), "final", &ckpt).unwrap();
    let err = load_checkpoint(dir.path(), "final", &zoo::lenet_tanh()).unwrap_err();
    assert!(matches!(err, Error::State(_)), "{err}");
}

#[test]
fn corrupted_tensor_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, _) = sample_checkpoint();
    save_checkpoint(dir.path(), "final", &ckpt).unwrap();
    let file = dir.path().join("final.ckpt").join("fc2.weight.f32");
    let mut bytes = fs::read(&file).unwrap();
    bytes[17] ^= 0x40;
    fs::write(&file, bytes).unwrap();
    let err = load_checkpoint(dir.path(), "final", &zoo::lenet()).unwrap_err();
    assert!(matches!(err, Error::Persistence(_)), "{err}");
}

fn bump_version(manifest: &Path) {
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(manifest).unwrap()).unwrap();
    v["version"] = serde_json::json!(99);
    fs::write(manifest, v.to_string()).unwrap();
}

#[test]
fn unknown_format_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, _) = sample_checkpoint();
    save_checkpoint(dir.path(), "final", &ckpt).unwrap();
    bump_version(&dir.path().join("final.ckpt/manifest.json"));
    let err = load_checkpoint(dir.path(), "final", &zoo::lenet()).unwrap_err();
    assert!(matches!(err, Error::Persistence(_)), "{err}");

    let mdir = dir.path().join("masks");
    save_masks(&mdir, ckpt.masks.as_ref().unwrap()).unwrap();
    assert_eq!(&load_masks(&mdir).unwrap(), ckpt.masks.as_ref().unwrap());
    bump_version(&mdir.join("manifest.json"));
    assert!(matches!(load_masks(&mdir).unwrap_err(), Error::Persistence(_)));
}

#[test]
fn corrupted_mask_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, _) = sample_checkpoint();
    save_masks(dir.path(), ckpt.masks.as_ref().unwrap()).unwrap();
    let file = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "mask"))
        .unwrap();
    let mut bytes = fs::read(&file).unwrap();
    bytes[0] ^= 1;
    fs::write(&file, bytes).unwrap();
    assert!(matches!(load_masks(dir.path()).unwrap_err(), Error::Persistence(_)));
}

fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut b = Vec::new();
    for v in [0x0803u32, n, rows, cols] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    b.extend_from_slice(pixels);
    b
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut b = Vec::new();
    for v in [0x0801u32, labels.len() as u32] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    b.extend_from_slice(labels);
    b
}

#[test]
fn synthetic_idx_files_load() {
    let dir = tempfile::tempdir().unwrap();
    let pixels: Vec<u8> = (0..3 * 4 * 5).map(|i| (i * 4) as u8).collect();
    let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
    fs::write(&img, idx_images(3, 4, 5, &pixels)).unwrap();
    fs::write(&lab, idx_labels(&[7, 0, 9])).unwrap();
    let ds = load_mnist_idx(&img, &lab, Split::Train).unwrap();
    assert_eq!(ds.images.shape(), &[3, 1, 4, 5]);
    assert_eq!(ds.labels, vec![7, 0, 9]);
    assert_eq!(ds.images.data()[5], 20.0 / 255.0);

    fs::write(&lab, idx_labels(&[7, 0])).unwrap();
    assert!(matches!(load_mnist_idx(&img, &lab, Split::Train).unwrap_err(), Error::Format { .. }));
    fs::write(&img, &idx_images(3, 4, 5, &pixels)[..50]).unwrap();
    fs::write(&lab, idx_labels(&[7, 0, 9])).unwrap();
    assert!(matches!(load_mnist_idx(&img, &lab, Split::Train).unwrap_err(), Error::Format { .. }));
}

#[test]
fn synthetic_cifar_batches_load() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = vec![0u8; 2 * CIFAR_RECORD_BYTES];
    bytes[0] = 3;
    bytes[1] = 255;
    bytes[CIFAR_RECORD_BYTES] = 8;
    let path = dir.path().join("test_batch.bin");
    fs::write(&path, &bytes).unwrap();
    let ds = load_cifar10_binary(&[path.clone()], Split::Test).unwrap();
    assert_eq!(ds.images.shape(), &[2, 3, 32, 32]);
    assert_eq!(ds.labels, vec![3, 8]);
    assert_eq!(ds.images.data()[0], 1.0);

    fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
    assert!(matches!(load_cifar10_binary(&[path], Split::Test).unwrap_err(), Error::Format { .. }));
}

fn mnist_root() -> PathBuf {
    std::env::var_os("SPARSELAB_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
        .join("mnist")
}

#[test]
fn mnist_headers_match_standard_counts() {
    let root = mnist_root();
    if !root.join("t10k-labels-idx1-ubyte").is_file() {
        eprintln!("MNIST not found under {}; skipping", root.display());
        return;
    }
    let test = load_mnist(&root, Split::Test).unwrap();
    assert_eq!(test.images.shape(), &[10_000, 1, 28, 28]);
    let train = load_mnist(&root, Split::Train).unwrap();
    assert_eq!(train.len(), 60_000);
    let mut counts = [0usize; 10];
    for &l in &test.labels {
        counts[l as usize] += 1;
    }
    assert_eq!(counts, [980, 1135, 1032, 1010, 982, 892, 958, 1028, 974, 1009]);
}
