use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, Network, NetworkSpec, ParamSet};
use crate::error::{MgeError, Result};
use crate::tensor::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    CrossEntropy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: Loss,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::Adam,
            learning_rate: 0.001,
            epochs: 10,
            batch_size: 32,
            loss: Loss::CrossEntropy,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // A zero rate is allowed: it is the no-op training run.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(MgeError::config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(MgeError::config("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(MgeError::config("batch_size must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub params: ParamSet,
    /// Wall-clock training time, excluding data preparation.
    pub seconds: f64,
    /// Mean training loss before the first update.
    pub initial_loss: f64,
    /// Mean training loss after the last update.
    pub final_loss: f64,
    /// Mean minibatch loss observed during each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mean cross-entropy loss over a dataset.
pub fn mean_loss(spec: &NetworkSpec, params: &ParamSet, data: &Dataset) -> Result<f64> {
    let net = Network::new(spec, params)?;
    let mut scratch = net.zero_gradients();
    let mut total = 0.0;
    for i in 0..data.len() {
        let (x, y) = data.example(i);
        total += net.loss_and_gradients(x, y, &mut scratch)?;
    }
    Ok(total / data.len() as f64)
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Trains from a seeded initialization. The returned parameters are rounded
/// to single precision so the in-memory model equals its stored form.
pub fn train(spec: &NetworkSpec, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(MgeError::invalid("training set is empty"));
    }
    spec.validate()?;
    if data.feature_len() != spec.input_len() {
        return Err(MgeError::structural(format!(
            "dataset features ({}) do not match network input ({})",
            data.feature_len(),
            spec.input_len()
        )));
    }

    let start = Instant::now();
    let mut params = ParamSet::init(spec, cfg.seed);
    let initial_loss = mean_loss(spec, &params, data)?;

    let mut rng = RngStream::new(cfg.seed).derive(0x7261_696e);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut adam = AdamState {
        m: params.layers().iter().map(|l| vec![0.0; l.len()]).collect(),
        v: params.layers().iter().map(|l| vec![0.0; l.len()]).collect(),
        step: 0,
    };
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let net = Network::new(spec, &params)?;
            let mut grads = net.zero_gradients();
            let mut batch_loss = 0.0;
            for &i in batch {
                let (x, y) = data.example(i);
                batch_loss += net.loss_and_gradients(x, y, &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(MgeError::TrainingDiverged { epoch });
            }
            epoch_loss += batch_loss;
            let scale = 1.0 / batch.len() as f64;
            apply_update(&mut params, &grads, scale, cfg, &mut adam);
        }
        let mean = epoch_loss / data.len() as f64;
        if !mean.is_finite() || params.pooled().iter().any(|v| !v.is_finite()) {
            return Err(MgeError::TrainingDiverged { epoch });
        }
        epoch_losses.push(mean);
    }

    let params = params.quantized();
    let seconds = start.elapsed().as_secs_f64();
    let final_loss = mean_loss(spec, &params, data)?;
    if !final_loss.is_finite() {
        return Err(MgeError::TrainingDiverged {
            epoch: cfg.epochs - 1,
        });
    }
    Ok(TrainReport {
        params,
        seconds,
        initial_loss,
        final_loss,
        epoch_losses,
    })
}

fn apply_update(
    params: &mut ParamSet,
    grads: &[Vec<f64>],
    scale: f64,
    cfg: &TrainConfig,
    adam: &mut AdamState,
) {
    let lr = cfg.learning_rate;
    match cfg.optimizer {
        Optimizer::Sgd => {
            for (layer, g) in params.layers_mut().iter_mut().zip(grads) {
                for (p, gi) in layer.values.iter_mut().zip(g) {
                    *p -= lr * gi * scale;
                }
            }
        }
        Optimizer::Adam => {
            adam.step += 1;
            let bc1 = 1.0 - BETA1.powi(adam.step);
            let bc2 = 1.0 - BETA2.powi(adam.step);
            for (t, (layer, g)) in params.layers_mut().iter_mut().zip(grads).enumerate() {
                let (m, v) = (&mut adam.m[t], &mut adam.v[t]);
                for (k, p) in layer.values.iter_mut().enumerate() {
                    let gk = g[k] * scale;
                    m[k] = BETA1 * m[k] + (1.0 - BETA1) * gk;
                    v[k] = BETA2 * v[k] + (1.0 - BETA2) * gk * gk;
                    let mhat = m[k] / bc1;
                    let vhat = v[k] / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{make_synthetic, SyntheticKind};

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let spec = NetworkSpec::mlp(2, &[8], 2).unwrap();
        let data = make_synthetic(SyntheticKind::Moons, 40, 2, 3).unwrap();
        for optimizer in [Optimizer::Sgd, Optimizer::Adam] {
            let cfg = TrainConfig {
                optimizer,
                learning_rate: 0.0,
                epochs: 1,
                batch_size: 8,
                seed: 5,
                ..TrainConfig::default()
            };
            let report = train(&spec, &data, &cfg).unwrap();
            assert_eq!(report.params, ParamSet::init(&spec, 5));
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = TrainConfig {
            learning_rate: -1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let spec = NetworkSpec::mlp(2, &[8], 2).unwrap();
        let data = make_synthetic(SyntheticKind::Blobs, 40, 2, 3).unwrap();
        let cfg = TrainConfig {
            optimizer: Optimizer::Sgd,
            learning_rate: 1e300,
            epochs: 5,
            batch_size: 4,
            seed: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&spec, &data, &cfg),
            Err(MgeError::TrainingDiverged { .. })
        ));
    }
}
