//! Layer tables for exact parameter counting of convolutional backbones.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    Conv2D {
        inputs: usize,
        outputs: usize,
        kernel: [usize; 2],
        stride: usize,
        bias: bool,
    },
    Conv3D {
        inputs: usize,
        outputs: usize,
        kernel: [usize; 3],
        stride: usize,
        bias: bool,
    },
    Dense {
        inputs: usize,
        outputs: usize,
        bias: bool,
    },
    BatchNorm {
        features: usize,
    },
    Relu,
    MaxPool,
    GlobalAvgPool,
    /// `main` and `shortcut` see the same input and their outputs are summed.
    /// An empty shortcut is the identity.
    Residual {
        main: Vec<Layer>,
        shortcut: Vec<Layer>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimensionality {
    TwoD,
    ThreeD,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ArchDescriptor {
    pub name: String,
    pub layers: Vec<Layer>,
}

impl ArchDescriptor {
    pub fn concat(&self, other: &ArchDescriptor) -> ArchDescriptor {
        ArchDescriptor {
            name: format!("{}+{}", self.name, other.name),
            layers: self.layers.iter().chain(&other.layers).cloned().collect(),
        }
    }

    /// Number of layers with their own kernel, counting inside residual blocks.
    pub fn layer_count(&self) -> usize {
        fn walk(layers: &[Layer]) -> usize {
            layers
                .iter()
                .map(|l| match l {
                    Layer::Residual { main, shortcut } => walk(main) + walk(shortcut),
                    _ => 1,
                })
                .sum()
        }
        walk(&self.layers)
    }

    pub fn contains_dense(&self) -> bool {
        fn walk(layers: &[Layer]) -> bool {
            layers.iter().any(|l| match l {
                Layer::Dense { .. } => true,
                Layer::Residual { main, shortcut } => walk(main) || walk(shortcut),
                _ => false,
            })
        }
        walk(&self.layers)
    }
}

fn own_parameters(layer: &Layer) -> usize {
    let b = |bias: bool, out: usize| if bias { out } else { 0 };
    match *layer {
        Layer::Conv2D { inputs, outputs, kernel, bias, .. } => {
            outputs * inputs * kernel[0] * kernel[1] + b(bias, outputs)
        }
        Layer::Conv3D { inputs, outputs, kernel, bias, .. } => {
            outputs * inputs * kernel[0] * kernel[1] * kernel[2] + b(bias, outputs)
        }
        Layer::Dense { inputs, outputs, bias } => outputs * inputs + b(bias, outputs),
        Layer::BatchNorm { features } => 2 * features,
        _ => 0,
    }
}

struct Counter {
    position: usize,
}

impl Counter {
    /// Returns (parameters, output channels) for a chain fed `channels`.
    fn chain(&mut self, layers: &[Layer], mut channels: Option<usize>) -> Result<(usize, Option<usize>)> {
        let mut total = 0;
        for layer in layers {
            let (needs, gives) = match *layer {
                Layer::Conv2D { inputs, outputs, .. }
                | Layer::Conv3D { inputs, outputs, .. }
                | Layer::Dense { inputs, outputs, .. } => (Some(inputs), Some(outputs)),
                Layer::BatchNorm { features } => (Some(features), Some(features)),
                Layer::Relu | Layer::MaxPool | Layer::GlobalAvgPool => (None, channels),
                Layer::Residual { ref main, ref shortcut } => {
                    let position = self.position;
                    let (pm, out_main) = self.chain(main, channels)?;
                    let (ps, out_short) = self.chain(shortcut, channels)?;
                    if let (Some(a), Some(b)) = (out_main, out_short) {
                        if a != b {
                            return Err(Error::InconsistentChannels {
                                layer: position,
                                expected: a,
                                found: b,
                            });
                        }
                    }
                    total += pm + ps;
                    channels = out_main.or(out_short);
                    continue;
                }
            };
            if let (Some(need), Some(have)) = (needs, channels) {
                if need != have {
                    return Err(Error::InconsistentChannels {
                        layer: self.position,
                        expected: have,
                        found: need,
                    });
                }
            }
            total += own_parameters(layer);
            channels = gives;
            self.position += 1;
        }
        Ok((total, channels))
    }
}

/// Learnable parameter count. Batch norm contributes its scale and shift only.
pub fn count_parameters(arch: &ArchDescriptor) -> Result<usize> {
    Counter { position: 0 }.chain(&arch.layers, None).map(|(n, _)| n)
}

fn conv(dims: Dimensionality, inputs: usize, outputs: usize, k: usize, stride: usize) -> Layer {
    match dims {
        Dimensionality::TwoD => Layer::Conv2D {
            inputs,
            outputs,
            kernel: [k; 2],
            stride,
            bias: false,
        },
        Dimensionality::ThreeD => Layer::Conv3D {
            inputs,
            outputs,
            kernel: [k; 3],
            stride,
            bias: false,
        },
    }
}

fn basic_block(dims: Dimensionality, inputs: usize, outputs: usize, stride: usize) -> Layer {
    let main = vec![
        conv(dims, inputs, outputs, 3, stride),
        Layer::BatchNorm { features: outputs },
        Layer::Relu,
        conv(dims, outputs, outputs, 3, 1),
        Layer::BatchNorm { features: outputs },
    ];
    let shortcut = if stride != 1 || inputs != outputs {
        vec![conv(dims, inputs, outputs, 1, stride), Layer::BatchNorm { features: outputs }]
    } else {
        Vec::new()
    };
    Layer::Residual { main, shortcut }
}

/// The standard 18-layer residual network with bias-free convolutions, a
/// 7-wide stem and four stages of two basic blocks.
pub fn resnet18_descriptor(dims: Dimensionality, in_channels: usize, include_fc: bool) -> ArchDescriptor {
    let mut layers = vec![
        conv(dims, in_channels, 64, 7, 2),
        Layer::BatchNorm { features: 64 },
        Layer::Relu,
        Layer::MaxPool,
    ];
    let mut width = 64;
    for (stage, out) in [64, 128, 256, 512].into_iter().enumerate() {
        let stride = if stage == 0 { 1 } else { 2 };
        layers.push(basic_block(dims, width, out, stride));
        layers.push(Layer::Relu);
        layers.push(basic_block(dims, out, out, 1));
        layers.push(Layer::Relu);
        width = out;
    }
    layers.push(Layer::GlobalAvgPool);
    if include_fc {
        layers.push(Layer::Dense {
            inputs: 512,
            outputs: 1000,
            bias: true,
        });
    }
    let name = match dims {
        Dimensionality::TwoD => "resnet18-2d",
        Dimensionality::ThreeD => "resnet18-3d",
    };
    ArchDescriptor {
        name: name.into(),
        layers,
    }
}

/// `1 - p2d / p3d`.
pub fn reduction_ratio(p2d: usize, p3d: usize) -> f64 {
    1.0 - p2d as f64 / p3d as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(layer: Layer) -> ArchDescriptor {
        ArchDescriptor {
            name: "t".into(),
            layers: vec![layer],
        }
    }

    #[test]
    fn layer_formulas() {
        let dense = single(Layer::Dense { inputs: 4, outputs: 3, bias: true });
        assert_eq!(count_parameters(&dense).unwrap(), 15);
        let c2 = single(Layer::Conv2D { inputs: 3, outputs: 64, kernel: [3, 3], stride: 1, bias: true });
        assert_eq!(count_parameters(&c2).unwrap(), 1792);
        let c3 = single(Layer::Conv3D { inputs: 3, outputs: 64, kernel: [3, 3, 3], stride: 1, bias: true });
        assert_eq!(count_parameters(&c3).unwrap(), 5248);
        assert_eq!(count_parameters(&single(Layer::BatchNorm { features: 10 })).unwrap(), 20);
        assert_eq!(count_parameters(&single(Layer::Relu)).unwrap(), 0);
    }

    #[test]
    fn resnet18_counts() {
        let two = resnet18_descriptor(Dimensionality::TwoD, 1, false);
        let three = resnet18_descriptor(Dimensionality::ThreeD, 1, false);
        let p2 = count_parameters(&two).unwrap();
        let p3 = count_parameters(&three).unwrap();
        assert_eq!(p2, 11_170_240);
        assert_eq!(two.layer_count(), three.layer_count());
        assert!(!two.contains_dense());
        let r = reduction_ratio(p2, p3);
        assert!((0.60..=0.72).contains(&r), "{r}");
        let fc = resnet18_descriptor(Dimensionality::TwoD, 3, true);
        assert_eq!(count_parameters(&fc).unwrap(), 11_689_512);
    }

    #[test]
    fn additive_over_concatenation() {
        let a = resnet18_descriptor(Dimensionality::TwoD, 1, false);
        let b = single(Layer::Dense { inputs: 512, outputs: 2, bias: true });
        let ab = a.concat(&b);
        assert_eq!(
            count_parameters(&ab).unwrap(),
            count_parameters(&a).unwrap() + count_parameters(&b).unwrap()
        );
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let arch = ArchDescriptor {
            name: "bad".into(),
            layers: vec![
                Layer::Dense { inputs: 4, outputs: 3, bias: true },
                Layer::BatchNorm { features: 5 },
            ],
        };
        assert!(matches!(
            count_parameters(&arch),
            Err(Error::InconsistentChannels { layer: 1, expected: 3, found: 5 })
        ));
        let residual = single(Layer::Residual {
            main: vec![Layer::Dense { inputs: 4, outputs: 3, bias: false }],
            shortcut: vec![Layer::Dense { inputs: 4, outputs: 2, bias: false }],
        });
        assert!(matches!(count_parameters(&residual), Err(Error::InconsistentChannels { .. })));
    }
}
