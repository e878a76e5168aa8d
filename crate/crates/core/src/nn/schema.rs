use std::collections::HashSet;

use super::{NnError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu {
        size: usize,
    },
    /// Same-padding 3x3 convolution, stride 1, CHW layout.
    Conv3x3 {
        in_channels: usize,
        out_channels: usize,
        height: usize,
        width: usize,
    },
    /// 2x2 max pooling with stride 2.
    MaxPool2 {
        channels: usize,
        height: usize,
        width: usize,
    },
    /// Logits pass through unchanged; the loss applies softmax cross-entropy.
    SoftmaxXent {
        classes: usize,
    },
}

impl LayerKind {
    pub fn input_size(&self) -> usize {
        match *self {
            LayerKind::Dense { inputs, .. } => inputs,
            LayerKind::Relu { size } => size,
            LayerKind::Conv3x3 {
                in_channels,
                height,
                width,
                ..
            } => in_channels * height * width,
            LayerKind::MaxPool2 {
                channels,
                height,
                width,
            } => channels * height * width,
            LayerKind::SoftmaxXent { classes } => classes,
        }
    }

    pub fn output_size(&self) -> usize {
        match *self {
            LayerKind::Dense { outputs, .. } => outputs,
            LayerKind::Relu { size } => size,
            LayerKind::Conv3x3 {
                out_channels,
                height,
                width,
                ..
            } => out_channels * height * width,
            LayerKind::MaxPool2 {
                channels,
                height,
                width,
            } => channels * (height / 2) * (width / 2),
            LayerKind::SoftmaxXent { classes } => classes,
        }
    }

    /// Shapes of the trainable tensors (weights, then bias).
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerKind::Dense { inputs, outputs } => vec![vec![outputs, inputs], vec![outputs]],
            LayerKind::Conv3x3 {
                in_channels,
                out_channels,
                ..
            } => vec![vec![out_channels, in_channels, 3, 3], vec![out_channels]],
            _ => vec![],
        }
    }

    pub(crate) fn tag(&self) -> u8 {
        match self {
            LayerKind::Dense { .. } => 0,
            LayerKind::Relu { .. } => 1,
            LayerKind::Conv3x3 { .. } => 2,
            LayerKind::MaxPool2 { .. } => 3,
            LayerKind::SoftmaxXent { .. } => 4,
        }
    }

    pub(crate) fn dims(&self) -> Vec<usize> {
        match *self {
            LayerKind::Dense { inputs, outputs } => vec![inputs, outputs],
            LayerKind::Relu { size } => vec![size],
            LayerKind::Conv3x3 {
                in_channels,
                out_channels,
                height,
                width,
            } => vec![in_channels, out_channels, height, width],
            LayerKind::MaxPool2 {
                channels,
                height,
                width,
            } => vec![channels, height, width],
            LayerKind::SoftmaxXent { classes } => vec![classes],
        }
    }

    pub(crate) fn from_tag(tag: u8, dims: &[usize]) -> Option<Self> {
        Some(match (tag, dims) {
            (0, &[inputs, outputs]) => LayerKind::Dense { inputs, outputs },
            (1, &[size]) => LayerKind::Relu { size },
            (2, &[in_channels, out_channels, height, width]) => LayerKind::Conv3x3 {
                in_channels,
                out_channels,
                height,
                width,
            },
            (3, &[channels, height, width]) => LayerKind::MaxPool2 {
                channels,
                height,
                width,
            },
            (4, &[classes]) => LayerKind::SoftmaxXent { classes },
            _ => return None,
        })
    }

    pub(crate) fn dim_count(tag: u8) -> Option<usize> {
        match tag {
            0 => Some(2),
            1 | 4 => Some(1),
            2 => Some(4),
            3 => Some(3),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

/// Ordered layer list ending in a softmax cross-entropy head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSchema {
    layers: Vec<LayerSpec>,
}

impl ModelSchema {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(NnError::Schema("no layers".into()));
        }
        let mut names = HashSet::new();
        for (i, layer) in layers.iter().enumerate() {
            if !names.insert(layer.name.as_str()) {
                return Err(NnError::Schema(format!(
                    "duplicate layer name {:?}",
                    layer.name
                )));
            }
            if layer.kind.input_size() == 0 || layer.kind.output_size() == 0 {
                return Err(NnError::Schema(format!("layer {:?} is empty", layer.name)));
            }
            if let LayerKind::MaxPool2 { height, width, .. } = layer.kind {
                if height % 2 != 0 || width % 2 != 0 {
                    return Err(NnError::Schema(format!(
                        "pooling layer {:?} needs even spatial dims",
                        layer.name
                    )));
                }
            }
            let is_head = matches!(layer.kind, LayerKind::SoftmaxXent { .. });
            if is_head != (i == layers.len() - 1) {
                return Err(NnError::Schema(
                    "exactly one softmax head, in last position".into(),
                ));
            }
            if i > 0 {
                let prev = &layers[i - 1];
                if prev.kind.output_size() != layer.kind.input_size() {
                    return Err(NnError::Schema(format!(
                        "{:?} emits {} values but {:?} expects {}",
                        prev.name,
                        prev.kind.output_size(),
                        layer.name,
                        layer.kind.input_size()
                    )));
                }
            }
        }
        Ok(Self { layers })
    }

    /// Dense/ReLU stack with a softmax head, e.g. `[784, 128, 10]`.
    pub fn mlp(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(NnError::Schema("an MLP needs at least two sizes".into()));
        }
        let mut layers = Vec::new();
        for (i, w) in sizes.windows(2).enumerate() {
            layers.push(LayerSpec {
                name: format!("fc{}", i + 1),
                kind: LayerKind::Dense {
                    inputs: w[0],
                    outputs: w[1],
                },
            });
            if i + 2 < sizes.len() {
                layers.push(LayerSpec {
                    name: format!("relu{}", i + 1),
                    kind: LayerKind::Relu { size: w[1] },
                });
            }
        }
        layers.push(LayerSpec {
            name: "head".into(),
            kind: LayerKind::SoftmaxXent {
                classes: *sizes.last().unwrap(),
            },
        });
        Self::new(layers)
    }

    /// Two 3x3 convolutions with pooling, then a dense classifier.
    ///
    /// Input is one `side x side` channel; `side` must be divisible by 4.
    pub fn tiny_conv(side: usize, channels: usize, classes: usize) -> Result<Self> {
        let half = side / 2;
        let quarter = side / 4;
        let spec = |name: &str, kind| LayerSpec {
            name: name.into(),
            kind,
        };
        Self::new(vec![
            spec(
                "conv1",
                LayerKind::Conv3x3 {
                    in_channels: 1,
                    out_channels: channels,
                    height: side,
                    width: side,
                },
            ),
            spec(
                "relu1",
                LayerKind::Relu {
                    size: channels * side * side,
                },
            ),
            spec(
                "pool1",
                LayerKind::MaxPool2 {
                    channels,
                    height: side,
                    width: side,
                },
            ),
            spec(
                "conv2",
                LayerKind::Conv3x3 {
                    in_channels: channels,
                    out_channels: channels,
                    height: half,
                    width: half,
                },
            ),
            spec(
                "relu2",
                LayerKind::Relu {
                    size: channels * half * half,
                },
            ),
            spec(
                "pool2",
                LayerKind::MaxPool2 {
                    channels,
                    height: half,
                    width: half,
                },
            ),
            spec(
                "fc",
                LayerKind::Dense {
                    inputs: channels * quarter * quarter,
                    outputs: classes,
                },
            ),
            spec("head", LayerKind::SoftmaxXent { classes }),
        ])
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].kind.input_size()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().unwrap().kind.output_size()
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers
            .iter()
            .flat_map(|l| l.kind.param_shapes())
            .collect()
    }

    /// Dense layers followed directly by the head: no hidden nonlinearity.
    pub fn is_linear(&self) -> bool {
        self.layers.len() == 2 && matches!(self.layers[0].kind, LayerKind::Dense { .. })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_shapes() {
        let s = ModelSchema::mlp(&[784, 128, 10]).unwrap();
        assert_eq!(s.layers().len(), 4);
        assert_eq!(
            s.param_shapes(),
            vec![vec![128, 784], vec![128], vec![10, 128], vec![10]]
        );
        assert_eq!(s.input_size(), 784);
        assert_eq!(s.classes(), 10);
    }

    #[test]
    fn tiny_conv_composes() {
        let s = ModelSchema::tiny_conv(8, 4, 10).unwrap();
        assert_eq!(s.input_size(), 64);
        assert_eq!(s.param_shapes()[0], vec![4, 1, 3, 3]);
        assert_eq!(s.param_shapes()[4], vec![10, 16]);
    }

    #[test]
    fn rejects_bad_schemas() {
        let dense = |name: &str, i, o| LayerSpec {
            name: name.into(),
            kind: LayerKind::Dense {
                inputs: i,
                outputs: o,
            },
        };
        let head = |c| LayerSpec {
            name: "head".into(),
            kind: LayerKind::SoftmaxXent { classes: c },
        };
        assert!(ModelSchema::new(vec![dense("a", 4, 3), dense("b", 4, 2), head(2)]).is_err());
        assert!(ModelSchema::new(vec![dense("a", 4, 3), dense("a", 3, 2), head(2)]).is_err());
        assert!(ModelSchema::new(vec![dense("a", 4, 3)]).is_err());
        assert!(ModelSchema::new(vec![dense("a", 4, 3), head(3)]).is_ok());
    }
}
