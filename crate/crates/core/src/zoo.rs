//! Built-in architectures.
//!
//! LeNet is the reference model for every experiment. Its dimensions are a
//! reconstruction: conv2 is fixed at 6→16 channels with 3×3 filters and the
//! total is about 60k parameters; 3×3 for conv1 and a 400–120–84–10 head are
//! the natural completion. The AlexNet and VGG-11 definitions follow the
//! common ImageNet layouts (224×224 inputs, 1000 classes), which are the
//! models whose parameter counts are usually quoted, plus 10-class variants
//! sized for MNIST and CIFAR-10.

use crate::arch::{ArchitectureSpec, LayerSpec};

pub fn lenet() -> ArchitectureSpec {
    ArchitectureSpec::new(
        "lenet",
        &[1, 28, 28],
        vec![
            LayerSpec::conv(1, 6, 3),
            LayerSpec::Relu,
            LayerSpec::pool(2, 2),
            LayerSpec::conv(6, 16, 3),
            LayerSpec::Relu,
            LayerSpec::pool(2, 2),
            LayerSpec::Flatten,
            LayerSpec::linear(400, 120),
            LayerSpec::Relu,
            LayerSpec::linear(120, 84),
            LayerSpec::Relu,
            LayerSpec::linear(84, 10),
        ],
    )
    .expect("lenet is shape consistent")
}

/// LeNet with tanh activations in place of ReLU.
pub fn lenet_tanh() -> ArchitectureSpec {
    let mut spec = lenet();
    spec.name = "lenet_tanh".into();
    for layer in &mut spec.layers {
        if *layer == LayerSpec::Relu {
            *layer = LayerSpec::Tanh;
        }
    }
    spec
}

fn alexnet_features(in_channels: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv_padded(in_channels, 64, 11, 4, 2),
        LayerSpec::Relu,
        LayerSpec::pool(3, 2),
        LayerSpec::conv_padded(64, 192, 5, 1, 2),
        LayerSpec::Relu,
        LayerSpec::pool(3, 2),
        LayerSpec::conv_padded(192, 384, 3, 1, 1),
        LayerSpec::Relu,
        LayerSpec::conv_padded(384, 256, 3, 1, 1),
        LayerSpec::Relu,
        LayerSpec::conv_padded(256, 256, 3, 1, 1),
        LayerSpec::Relu,
        LayerSpec::pool(3, 2),
    ]
}

fn classifier(features: usize, hidden: usize, classes: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Flatten,
        LayerSpec::linear(features, hidden),
        LayerSpec::Relu,
        LayerSpec::linear(hidden, hidden),
        LayerSpec::Relu,
        LayerSpec::linear(hidden, classes),
    ]
}

pub fn alexnet_imagenet() -> ArchitectureSpec {
    let mut layers = alexnet_features(3);
    layers.extend(classifier(256 * 6 * 6, 4096, 1000));
    ArchitectureSpec::new("alexnet_imagenet", &[3, 224, 224], layers).expect("alexnet shapes")
}

fn vgg11_features(in_channels: usize) -> Vec<LayerSpec> {
    let plan: [Option<usize>; 13] = [
        Some(64),
        None,
        Some(128),
        None,
        Some(256),
        Some(256),
        None,
        Some(512),
        Some(512),
        None,
        Some(512),
        Some(512),
        None,
    ];
    let mut layers = Vec::new();
    let mut c = in_channels;
    for step in plan {
        match step {
            Some(out) => {
                layers.push(LayerSpec::conv_padded(c, out, 3, 1, 1));
                layers.push(LayerSpec::Relu);
                c = out;
            }
            None => layers.push(LayerSpec::pool(2, 2)),
        }
    }
    layers
}

pub fn vgg11_imagenet() -> ArchitectureSpec {
    let mut layers = vgg11_features(3);
    layers.extend(classifier(512 * 7 * 7, 4096, 1000));
    ArchitectureSpec::new("vgg11_imagenet", &[3, 224, 224], layers).expect("vgg shapes")
}

/// VGG-11 for 32×32 CIFAR-10 images.
pub fn vgg11_cifar10() -> ArchitectureSpec {
    let mut layers = vgg11_features(3);
    layers.extend(classifier(512, 512, 10));
    ArchitectureSpec::new("vgg11_cifar10", &[3, 32, 32], layers).expect("vgg shapes")
}

/// AlexNet-style network for small images: five 3×3 convolutions.
pub fn alexnet_small(in_channels: usize, side: usize) -> ArchitectureSpec {
    let mut layers = vec![
        LayerSpec::conv_padded(in_channels, 64, 3, 1, 1),
        LayerSpec::Relu,
        LayerSpec::pool(2, 2),
        LayerSpec::conv_padded(64, 192, 3, 1, 1),
        LayerSpec::Relu,
        LayerSpec::pool(2, 2),
        LayerSpec::conv_padded(192, 384, 3, 1, 1),
        LayerSpec::Relu,
        LayerSpec::conv_padded(384, 256, 3, 1, 1),
        LayerSpec::Relu,
        LayerSpec::conv_padded(256, 256, 3, 1, 1),
        LayerSpec::Relu,
        LayerSpec::pool(2, 2),
    ];
    let s = side / 8;
    layers.extend(classifier(256 * s * s, 1024, 10));
    let name = if in_channels == 1 { "alexnet_mnist" } else { "alexnet_cifar10" };
    ArchitectureSpec::new(name, &[in_channels, side, side], layers).expect("alexnet shapes")
}

pub fn by_name(name: &str) -> Option<ArchitectureSpec> {
    Some(match name {
        "lenet" => lenet(),
        "lenet_tanh" => lenet_tanh(),
        "alexnet_imagenet" => alexnet_imagenet(),
        "alexnet_mnist" => alexnet_small(1, 28),
        "alexnet_cifar10" => alexnet_small(3, 32),
        "vgg11_imagenet" => vgg11_imagenet(),
        "vgg11_cifar10" => vgg11_cifar10(),
        _ => return None,
    })
}

/// Parameters left (in thousands) when a fraction of a model's parameters
/// is pruned, rounded as in a printed table: whole thousands, or one decimal
/// below one thousand.
pub fn remaining_thousands(total: usize, pruned_fraction: f64) -> f64 {
    let k = total as f64 * (1.0 - pruned_fraction) / 1000.0;
    if k < 1.0 {
        (k * 10.0).round() / 10.0
    } else {
        k.round()
    }
}
