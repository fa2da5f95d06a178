use rand::Rng;

use super::NetworkSpec;
use crate::error::{MgeError, Result};
use crate::tensor::RngStream;

/// One flattened parameter tensor together with its original shape.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl LayerParams {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if values.is_empty() || expected != values.len() {
            return Err(MgeError::structural(format!(
                "{name}: shape {shape:?} does not match {} values",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(MgeError::invalid(format!(
                "{name}: non-finite value at {i}"
            )));
        }
        Ok(LayerParams {
            name,
            shape,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-layer parameters of a network. Weights and biases of each layer are
/// separate entries named `"{layer}.weight"` and `"{layer}.bias"`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    layers: Vec<LayerParams>,
}

impl ParamSet {
    pub fn new(layers: Vec<LayerParams>) -> Result<Self> {
        if layers.is_empty() {
            return Err(MgeError::structural("parameter set has no layers"));
        }
        Ok(ParamSet { layers })
    }

    pub fn zeros(spec: &NetworkSpec) -> Self {
        let layers = spec
            .param_layout()
            .into_iter()
            .map(|(name, shape, _)| {
                let n = shape.iter().product();
                LayerParams {
                    name,
                    shape,
                    values: vec![0.0; n],
                }
            })
            .collect();
        ParamSet { layers }
    }

    /// He-uniform weights and fan-in scaled uniform biases. Values are drawn
    /// at single precision so a freshly initialized set survives storage.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Self {
        let root = RngStream::new(seed);
        let layers = spec
            .param_layout()
            .into_iter()
            .enumerate()
            .map(|(i, (name, shape, fan_in))| {
                let mut rng = root.derive(i as u64);
                let fan_in = fan_in.max(1) as f64;
                let bound = if name.ends_with(".weight") {
                    (6.0 / fan_in).sqrt()
                } else {
                    1.0 / fan_in.sqrt()
                };
                let n = shape.iter().product();
                let values = (0..n)
                    .map(|_| rng.random_range(-bound..bound) as f32 as f64)
                    .collect();
                LayerParams {
                    name,
                    shape,
                    values,
                }
            })
            .collect();
        ParamSet { layers }
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    /// Number of parameter tensors.
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn total_len(&self) -> usize {
        self.layers.iter().map(LayerParams::len).sum()
    }

    /// All parameter values concatenated in layer order.
    pub fn pooled(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.values.iter().copied())
            .collect()
    }

    /// Same names and shapes as `other`.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    /// Checks names and shapes against the network layout.
    pub fn check_against(&self, spec: &NetworkSpec) -> Result<()> {
        let layout = spec.param_layout();
        if layout.len() != self.layers.len() {
            return Err(MgeError::structural(format!(
                "network expects {} parameter tensors, found {}",
                layout.len(),
                self.layers.len()
            )));
        }
        for ((name, shape, _), layer) in layout.iter().zip(&self.layers) {
            if name != &layer.name || shape != &layer.shape {
                return Err(MgeError::structural(format!(
                    "expected {name} {shape:?}, found {} {:?}",
                    layer.name, layer.shape
                )));
            }
            if layer.values.len() != shape.iter().product::<usize>() {
                return Err(MgeError::structural(format!(
                    "{name}: payload length {} does not match shape",
                    layer.values.len()
                )));
            }
        }
        Ok(())
    }

    /// Copy with every value rounded to the nearest `f32`, which is the
    /// precision models are stored at.
    pub fn quantized(&self) -> ParamSet {
        let mut out = self.clone();
        for layer in &mut out.layers {
            for v in &mut layer.values {
                *v = *v as f32 as f64;
            }
        }
        out
    }

    pub fn is_quantized(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.values.iter().all(|&v| v as f32 as f64 == v))
    }
}
