use serde::{Deserialize, Serialize};

use crate::error::{MgeError, Result};

/// One layer of a sequential classifier.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerKind {
    Dense {
        #[serde(rename = "in")]
        inputs: usize,
        #[serde(rename = "out")]
        outputs: usize,
    },
    /// Valid (unpadded) stride-1 convolution with a square kernel.
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    /// Non-overlapping square max pooling; trailing rows/columns are dropped.
    MaxPool {
        size: usize,
    },
    Relu,
    Tanh,
    Flatten,
}

impl LayerKind {
    pub fn is_parameterized(&self) -> bool {
        matches!(self, LayerKind::Dense { .. } | LayerKind::Conv { .. })
    }

    /// Output shape for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerKind::Dense { inputs, outputs } => {
                if input != [inputs] {
                    return Err(MgeError::structural(format!(
                        "dense layer expects input [{inputs}], got {input:?}"
                    )));
                }
                Ok(vec![outputs])
            }
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
            } => match *input {
                [c, h, w] if c == in_channels && h >= kernel && w >= kernel && kernel > 0 => {
                    Ok(vec![out_channels, h - kernel + 1, w - kernel + 1])
                }
                _ => Err(MgeError::structural(format!(
                    "conv layer ({in_channels}->{out_channels}, k={kernel}) cannot take input {input:?}"
                ))),
            },
            LayerKind::MaxPool { size } => match *input {
                [c, h, w] if size > 0 && h >= size && w >= size => Ok(vec![c, h / size, w / size]),
                _ => Err(MgeError::structural(format!(
                    "max-pool of size {size} cannot take input {input:?}"
                ))),
            },
            LayerKind::Relu | LayerKind::Tanh => Ok(input.to_vec()),
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Weight and bias shapes for parameterized layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerKind::Dense { inputs, outputs } => Some((vec![outputs, inputs], vec![outputs])),
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
            } => Some((
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            )),
            _ => None,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerKind::Dense { inputs, .. } => inputs,
            LayerKind::Conv {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel * kernel,
            _ => 0,
        }
    }
}

/// Architecture of a sequential classifier.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub classes: usize,
    pub layers: Vec<LayerKind>,
}

impl NetworkSpec {
    pub fn new(input_shape: Vec<usize>, classes: usize, layers: Vec<LayerKind>) -> Result<Self> {
        let spec = NetworkSpec {
            input_shape,
            classes,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Dense ReLU network `input -> hidden... -> classes`.
    pub fn mlp(input: usize, hidden: &[usize], classes: usize) -> Result<Self> {
        let mut layers = Vec::new();
        let mut prev = input;
        for &h in hidden {
            layers.push(LayerKind::Dense {
                inputs: prev,
                outputs: h,
            });
            layers.push(LayerKind::Relu);
            prev = h;
        }
        layers.push(LayerKind::Dense {
            inputs: prev,
            outputs: classes,
        });
        NetworkSpec::new(vec![input], classes, layers)
    }

    /// LeNet-style network for 1x28x28 inputs: two conv/pool stages and
    /// two dense layers.
    pub fn lenet(classes: usize) -> Result<Self> {
        use LayerKind::*;
        NetworkSpec::new(
            vec![1, 28, 28],
            classes,
            vec![
                Conv {
                    in_channels: 1,
                    out_channels: 6,
                    kernel: 5,
                },
                Relu,
                MaxPool { size: 2 },
                Conv {
                    in_channels: 6,
                    out_channels: 16,
                    kernel: 5,
                },
                Relu,
                MaxPool { size: 2 },
                Flatten,
                Dense {
                    inputs: 256,
                    outputs: 120,
                },
                Relu,
                Dense {
                    inputs: 120,
                    outputs: classes,
                },
            ],
        )
    }

    /// Checks that layer shapes compose and returns the activation shape
    /// entering each layer followed by the output shape.
    pub fn validate(&self) -> Result<Vec<Vec<usize>>> {
        if self.classes < 2 {
            return Err(MgeError::structural(format!(
                "class count must be at least 2, got {}",
                self.classes
            )));
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(MgeError::structural(format!(
                "invalid input shape {:?}",
                self.input_shape
            )));
        }
        if !self.layers.iter().any(LayerKind::is_parameterized) {
            return Err(MgeError::structural("network has no parameterized layer"));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().unwrap())
                .map_err(|e| MgeError::structural(format!("layer {i}: {e}")))?;
            shapes.push(next);
        }
        if shapes.last().unwrap() != &[self.classes] {
            return Err(MgeError::structural(format!(
                "network output {:?} does not match {} classes",
                shapes.last().unwrap(),
                self.classes
            )));
        }
        Ok(shapes)
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// `(name, shape, fan_in)` for every parameter tensor, weights before
    /// biases, in layer order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>, usize)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some((w, b)) = layer.param_shapes() {
                let fan_in = layer.fan_in();
                out.push((format!("{i}.weight"), w, fan_in));
                out.push((format!("{i}.bias"), b, fan_in));
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_layout()
            .iter()
            .map(|(_, s, _)| s.iter().product::<usize>())
            .sum()
    }
}
