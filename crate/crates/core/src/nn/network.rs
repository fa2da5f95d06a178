use rayon::prelude::*;

use super::{Dataset, LayerKind, NetworkSpec, ParamSet};
use crate::error::{MgeError, Result};

/// Per-tensor gradient buffers laid out like a [`ParamSet`].
pub type Gradients = Vec<Vec<f64>>;

/// A network specification bound to a compatible parameter set.
pub struct Network<'a> {
    spec: &'a NetworkSpec,
    params: &'a ParamSet,
    /// Activation shape entering each layer, plus the output shape.
    shapes: Vec<Vec<usize>>,
    /// Index of the weight tensor for each parameterized layer.
    slots: Vec<Option<usize>>,
}

struct Trace {
    /// `acts[i]` is the input to layer `i`; the last entry is the logits.
    acts: Vec<Vec<f64>>,
    /// Winning input index for every output element of each max-pool layer.
    pool_argmax: Vec<Vec<usize>>,
}

impl<'a> Network<'a> {
    pub fn new(spec: &'a NetworkSpec, params: &'a ParamSet) -> Result<Self> {
        let shapes = spec.validate()?;
        params.check_against(spec)?;
        let mut next = 0;
        let slots = spec
            .layers
            .iter()
            .map(|l| {
                l.is_parameterized().then(|| {
                    let s = next;
                    next += 2;
                    s
                })
            })
            .collect();
        Ok(Network {
            spec,
            params,
            shapes,
            slots,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.spec
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_len() {
            return Err(MgeError::structural(format!(
                "input has {} features, network expects {}",
                x.len(),
                self.spec.input_len()
            )));
        }
        Ok(())
    }

    fn weights(&self, layer: usize) -> (&[f64], &[f64]) {
        let slot = self.slots[layer].expect("parameterized layer");
        let layers = self.params.layers();
        (&layers[slot].values, &layers[slot + 1].values)
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.spec.layers.len() + 1);
        let mut pool_argmax = Vec::new();
        acts.push(x.to_vec());
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let input = acts.last().unwrap();
            let in_shape = &self.shapes[i];
            let out = match *layer {
                LayerKind::Dense { inputs, outputs } => {
                    let (w, b) = self.weights(i);
                    (0..outputs)
                        .map(|o| {
                            let row = &w[o * inputs..(o + 1) * inputs];
                            b[o] + row.iter().zip(input).map(|(a, v)| a * v).sum::<f64>()
                        })
                        .collect()
                }
                LayerKind::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                } => {
                    let (w, b) = self.weights(i);
                    conv_forward(input, in_shape, w, b, in_channels, out_channels, kernel)
                }
                LayerKind::MaxPool { size } => {
                    let (out, idx) = pool_forward(input, in_shape, size);
                    pool_argmax.push(idx);
                    out
                }
                LayerKind::Relu => input.iter().map(|&v| v.max(0.0)).collect(),
                LayerKind::Tanh => input.iter().map(|v| v.tanh()).collect(),
                LayerKind::Flatten => input.clone(),
            };
            acts.push(out);
        }
        Trace { acts, pool_argmax }
    }

    /// Backpropagates `grad_out` (gradient w.r.t. the logits). Parameter
    /// gradients are accumulated into `param_grads` when given; the
    /// gradient w.r.t. the input is returned.
    fn backward(
        &self,
        trace: &Trace,
        grad_out: Vec<f64>,
        mut param_grads: Option<&mut Gradients>,
    ) -> Vec<f64> {
        let mut grad = grad_out;
        let mut pool_idx = trace.pool_argmax.len();
        for (i, layer) in self.spec.layers.iter().enumerate().rev() {
            let input = &trace.acts[i];
            let in_shape = &self.shapes[i];
            grad = match *layer {
                LayerKind::Dense { inputs, outputs } => {
                    let (w, _) = self.weights(i);
                    if let Some(g) = param_grads.as_deref_mut() {
                        let slot = self.slots[i].unwrap();
                        let (gw, gb) = g.split_at_mut(slot + 1);
                        let (gw, gb) = (&mut gw[slot], &mut gb[0]);
                        for o in 0..outputs {
                            let go = grad[o];
                            gb[o] += go;
                            if go != 0.0 {
                                let row = &mut gw[o * inputs..(o + 1) * inputs];
                                for (r, v) in row.iter_mut().zip(input) {
                                    *r += go * v;
                                }
                            }
                        }
                    }
                    let mut dx = vec![0.0; inputs];
                    for o in 0..outputs {
                        let go = grad[o];
                        if go != 0.0 {
                            let row = &w[o * inputs..(o + 1) * inputs];
                            for (d, a) in dx.iter_mut().zip(row) {
                                *d += a * go;
                            }
                        }
                    }
                    dx
                }
                LayerKind::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                } => {
                    let (w, _) = self.weights(i);
                    let grads = param_grads.as_deref_mut().map(|g| {
                        let slot = self.slots[i].unwrap();
                        let (gw, gb) = g.split_at_mut(slot + 1);
                        (&mut gw[slot][..], &mut gb[0][..])
                    });
                    conv_backward(
                        input,
                        in_shape,
                        w,
                        &grad,
                        in_channels,
                        out_channels,
                        kernel,
                        grads,
                    )
                }
                LayerKind::MaxPool { .. } => {
                    pool_idx -= 1;
                    let mut dx = vec![0.0; input.len()];
                    for (g, &src) in grad.iter().zip(&trace.pool_argmax[pool_idx]) {
                        dx[src] += g;
                    }
                    dx
                }
                // subgradient at 0 is 0
                LayerKind::Relu => grad
                    .iter()
                    .zip(input)
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect(),
                LayerKind::Tanh => grad
                    .iter()
                    .zip(input)
                    .map(|(g, v)| {
                        let t = v.tanh();
                        g * (1.0 - t * t)
                    })
                    .collect(),
                LayerKind::Flatten => grad,
            };
        }
        grad
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.trace(x).acts.pop().unwrap())
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    /// Cross-entropy loss of one example; parameter gradients are added
    /// into `grads`.
    pub fn loss_and_gradients(
        &self,
        x: &[f64],
        label: usize,
        grads: &mut Gradients,
    ) -> Result<f64> {
        self.check_input(x)?;
        let trace = self.trace(x);
        let (loss, dlogits) = softmax_cross_entropy(trace.acts.last().unwrap(), label);
        self.backward(&trace, dlogits, Some(grads));
        Ok(loss)
    }

    /// Gradient of the cross-entropy loss w.r.t. the input features.
    pub fn input_gradient(&self, x: &[f64], label: usize) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let trace = self.trace(x);
        let (_, dlogits) = softmax_cross_entropy(trace.acts.last().unwrap(), label);
        Ok(self.backward(&trace, dlogits, None))
    }

    pub fn zero_gradients(&self) -> Gradients {
        self.params
            .layers()
            .iter()
            .map(|l| vec![0.0; l.len()])
            .collect()
    }

    /// Fraction of examples whose argmax prediction equals the label.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(MgeError::invalid("accuracy on an empty dataset"));
        }
        self.check_input(data.features(0))?;
        let correct: usize = (0..data.len())
            .into_par_iter()
            .map(|i| {
                let (x, y) = data.example(i);
                usize::from(argmax(self.trace(x).acts.last().unwrap()) == y)
            })
            .sum();
        Ok(correct as f64 / data.len() as f64)
    }
}

fn conv_forward(
    input: &[f64],
    in_shape: &[usize],
    w: &[f64],
    b: &[f64],
    in_ch: usize,
    out_ch: usize,
    k: usize,
) -> Vec<f64> {
    let (h, wd) = (in_shape[1], in_shape[2]);
    let (oh, ow) = (h - k + 1, wd - k + 1);
    let mut out = vec![0.0; out_ch * oh * ow];
    for o in 0..out_ch {
        let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        plane.iter_mut().for_each(|v| *v = b[o]);
        for c in 0..in_ch {
            for u in 0..k {
                for v in 0..k {
                    let wt = w[((o * in_ch + c) * k + u) * k + v];
                    for i in 0..oh {
                        let src = &input[(c * h + i + u) * wd + v..][..ow];
                        let dst = &mut plane[i * ow..(i + 1) * ow];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wt * s;
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    in_shape: &[usize],
    w: &[f64],
    grad: &[f64],
    in_ch: usize,
    out_ch: usize,
    k: usize,
    mut param_grads: Option<(&mut [f64], &mut [f64])>,
) -> Vec<f64> {
    let (h, wd) = (in_shape[1], in_shape[2]);
    let (oh, ow) = (h - k + 1, wd - k + 1);
    let mut dx = vec![0.0; input.len()];
    for o in 0..out_ch {
        let gplane = &grad[o * oh * ow..(o + 1) * oh * ow];
        if let Some((_, gb)) = param_grads.as_mut() {
            gb[o] += gplane.iter().sum::<f64>();
        }
        for c in 0..in_ch {
            for u in 0..k {
                for v in 0..k {
                    let widx = ((o * in_ch + c) * k + u) * k + v;
                    let wt = w[widx];
                    let mut acc = 0.0;
                    for i in 0..oh {
                        let base = (c * h + i + u) * wd + v;
                        let g = &gplane[i * ow..(i + 1) * ow];
                        let src = &input[base..base + ow];
                        acc += g.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                        let dst = &mut dx[base..base + ow];
                        for (d, gv) in dst.iter_mut().zip(g) {
                            *d += wt * gv;
                        }
                    }
                    if let Some((gw, _)) = param_grads.as_mut() {
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    dx
}

fn pool_forward(input: &[f64], in_shape: &[usize], size: usize) -> (Vec<f64>, Vec<usize>) {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (h / size, w / size);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_at = 0;
                for u in 0..size {
                    for v in 0..size {
                        let at = (ch * h + i * size + u) * w + j * size + v;
                        if input[at] > best {
                            best = input[at];
                            best_at = at;
                        }
                    }
                }
                out.push(best);
                idx.push(best_at);
            }
        }
    }
    (out, idx)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax cross-entropy loss and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    let log_z = max + sum.ln();
    let loss = log_z - logits[label];
    let mut grad: Vec<f64> = logits.iter().map(|v| (v - log_z).exp()).collect();
    grad[label] -= 1.0;
    (loss.max(0.0), grad)
}

/// Logits for every example, one row per example.
pub fn forward(spec: &NetworkSpec, params: &ParamSet, batch: &Dataset) -> Result<Vec<Vec<f64>>> {
    let net = Network::new(spec, params)?;
    (0..batch.len())
        .into_par_iter()
        .map(|i| net.logits(batch.features(i)))
        .collect()
}

pub fn evaluate_accuracy(spec: &NetworkSpec, params: &ParamSet, data: &Dataset) -> Result<f64> {
    Network::new(spec, params)?.accuracy(data)
}

pub fn input_gradient(
    spec: &NetworkSpec,
    params: &ParamSet,
    x: &[f64],
    label: usize,
) -> Result<Vec<f64>> {
    if label >= spec.classes {
        return Err(MgeError::invalid(format!(
            "label {label} out of range for {} classes",
            spec.classes
        )));
    }
    Network::new(spec, params)?.input_gradient(x, label)
}
