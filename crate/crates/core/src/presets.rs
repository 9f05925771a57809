//! Built-in network descriptors.

use crate::network::{Activation, LayerDescriptor, NetworkDescriptor, Pool};

/// Five-layer CNN for 16x16 single-channel inputs and 8 classes.
pub fn desk_cnn() -> NetworkDescriptor {
    NetworkDescriptor {
        name: "desk-cnn".into(),
        input: [16, 16, 1],
        classes: 8,
        layers: vec![
            LayerDescriptor::conv(0, 1, 8, 3, 1, 1, 16).with_pool(Pool::Max2),
            LayerDescriptor::conv(1, 8, 16, 3, 1, 1, 8).with_pool(Pool::Max2),
            LayerDescriptor::conv(2, 16, 16, 3, 1, 1, 4),
            LayerDescriptor::fc(3, 256, 32),
            LayerDescriptor::fc(4, 32, 8).with_activation(Activation::None),
        ],
    }
}

/// Fully connected ReLU network; `widths` lists input features, hidden widths
/// and the class count, so it has `widths.len() - 1` layers.
pub fn mlp(name: &str, input: [usize; 3], widths: &[usize]) -> NetworkDescriptor {
    assert!(widths.len() >= 2, "an MLP needs at least one layer");
    assert_eq!(widths[0], input.iter().product::<usize>());
    let n = widths.len() - 1;
    NetworkDescriptor {
        name: name.into(),
        input,
        classes: widths[n],
        layers: (0..n)
            .map(|i| {
                let l = LayerDescriptor::fc(i, widths[i], widths[i + 1]);
                if i + 1 == n {
                    l.with_activation(Activation::None)
                } else {
                    l
                }
            })
            .collect(),
    }
}

/// Six-layer MLP over 8x8 inputs (64 exhaustive mappings).
pub fn desk_mlp6() -> NetworkDescriptor {
    mlp("desk-mlp6", [8, 8, 1], &[64, 48, 40, 32, 24, 16, 8])
}

/// Ten-layer MLP over 8x8 inputs.
pub fn desk_mlp10() -> NetworkDescriptor {
    mlp(
        "desk-mlp10",
        [8, 8, 1],
        &[64, 60, 56, 52, 48, 44, 40, 32, 24, 16, 8],
    )
}

fn conv_chain(specs: &[(usize, usize, usize, bool)], input: [usize; 3]) -> (Vec<LayerDescriptor>, [usize; 3]) {
    // (filters, kernel, padding, pool_after)
    let [mut size, _, mut channels] = input;
    let mut layers = Vec::new();
    for (i, &(filters, kernel, padding, pool)) in specs.iter().enumerate() {
        let mut l = LayerDescriptor::conv(i, channels, filters, kernel, 1, padding, size);
        size = crate::tensor::conv_out_extent(size, kernel, 1, padding).expect("conv extent");
        if pool {
            l = l.with_pool(Pool::Max2);
            size /= 2;
        }
        channels = filters;
        layers.push(l);
    }
    (layers, [size, size, channels])
}

/// VGG-16 for 32x32x3 inputs: 13 CONV layers and one classifier (14 mappable).
pub fn vgg16_cifar(classes: usize) -> NetworkDescriptor {
    let spec = [
        (64, 3, 1, false),
        (64, 3, 1, true),
        (128, 3, 1, false),
        (128, 3, 1, true),
        (256, 3, 1, false),
        (256, 3, 1, false),
        (256, 3, 1, true),
        (512, 3, 1, false),
        (512, 3, 1, false),
        (512, 3, 1, true),
        (512, 3, 1, false),
        (512, 3, 1, false),
        (512, 3, 1, true),
    ];
    let (mut layers, [h, w, c]) = conv_chain(&spec, [32, 32, 3]);
    let id = layers.len();
    layers.push(LayerDescriptor::fc(id, h * w * c, classes).with_activation(Activation::None));
    NetworkDescriptor {
        name: "vgg16-cifar".into(),
        input: [32, 32, 3],
        classes,
        layers,
    }
}

/// AlexNet-style network for 32x32x3 inputs: 5 CONV layers and one classifier.
pub fn alexnet_cifar(classes: usize) -> NetworkDescriptor {
    let spec = [
        (64, 5, 2, true),
        (192, 5, 2, true),
        (256, 3, 1, false),
        (256, 3, 1, false),
        (128, 3, 1, true),
    ];
    let (mut layers, [h, w, c]) = conv_chain(&spec, [32, 32, 3]);
    layers.push(LayerDescriptor::fc(5, h * w * c, classes).with_activation(Activation::None));
    NetworkDescriptor {
        name: "alexnet-cifar".into(),
        input: [32, 32, 3],
        classes,
        layers,
    }
}

/// Inverted-residual network for 32x32x3 inputs (residual adds omitted): a stem
/// CONV, then blocks of 1x1 expansion, 3x3 per-channel filtering
/// (depthwise-like) and 1x1 linear projection, and a 1x1 head.
pub fn depthwise_cifar(classes: usize) -> NetworkDescriptor {
    let mut layers = vec![LayerDescriptor::conv(0, 3, 32, 3, 1, 1, 32)];
    let (mut size, mut channels) = (32usize, 32usize);
    // (output channels, expansion, downsample after the depthwise stage)
    let blocks = [
        (16, 1, false),
        (24, 6, true),
        (24, 6, false),
        (32, 6, true),
        (32, 6, false),
        (64, 6, true),
        (64, 6, false),
        (96, 6, false),
        (160, 6, true),
        (320, 6, false),
    ];
    for &(out, expansion, pool) in &blocks {
        let hidden = channels * expansion;
        if expansion != 1 {
            let id = layers.len();
            layers.push(LayerDescriptor::conv(id, channels, hidden, 1, 1, 0, size));
        }
        let id = layers.len();
        let mut dw = LayerDescriptor::conv(id, 1, hidden, 3, 1, 1, size).with_depthwise_like(true);
        if pool {
            dw = dw.with_pool(Pool::Max2);
            size /= 2;
        }
        layers.push(dw);
        let id = layers.len();
        layers.push(
            LayerDescriptor::conv(id, hidden, out, 1, 1, 0, size).with_activation(Activation::None),
        );
        channels = out;
    }
    let id = layers.len();
    layers.push(LayerDescriptor::conv(id, channels, 1280, 1, 1, 0, size));
    let id = layers.len();
    layers.push(
        LayerDescriptor::fc(id, size * size * 1280, classes).with_activation(Activation::None),
    );
    NetworkDescriptor {
        name: "depthwise-cifar".into(),
        input: [32, 32, 3],
        classes,
        layers,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for net in [
            desk_cnn(),
            desk_mlp6(),
            desk_mlp10(),
            vgg16_cifar(10),
            alexnet_cifar(10),
            depthwise_cifar(10),
        ] {
            net.validate().unwrap_or_else(|e| panic!("{}: {e}", net.name));
        }
        assert_eq!(desk_mlp6().mappable_count(), 6);
        assert_eq!(desk_mlp10().mappable_count(), 10);
        assert_eq!(vgg16_cifar(10).mappable_count(), 14);
        assert_eq!(alexnet_cifar(10).mappable_count(), 6);
    }
}
