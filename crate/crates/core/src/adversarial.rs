//! FGSM adversarial examples and the transfer (behavioral dissimilarity)
//! experiment across a model pool.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MgeError, Result};
use crate::nn::{argmax, Dataset, Network, NetworkSpec, ParamSet};

/// Examples used by [`transfer_matrix`] unless told otherwise.
pub const DEFAULT_TRANSFER_EXAMPLES: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct AdvExample {
    pub original: Vec<f64>,
    pub perturbed: Vec<f64>,
    pub label: usize,
    /// Id of the model the example was crafted against, when known.
    pub source: Option<String>,
    pub target: Option<usize>,
    pub epsilon: f64,
}

impl AdvExample {
    pub fn with_source(mut self, id: impl Into<String>) -> Self {
        self.source = Some(id.into());
        self
    }

    pub fn linf_distance(&self) -> f64 {
        self.original
            .iter()
            .zip(&self.perturbed)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(MgeError::config(format!(
            "attack strength must be finite and >= 0, got {epsilon}"
        )));
    }
    Ok(())
}

/// One signed-gradient step of size `epsilon`, clipped to `[0, 1]`.
/// `direction` is +1 to ascend the loss, -1 to descend it.
fn step(net: &Network, x: &[f64], label: usize, epsilon: f64, direction: f64) -> Result<Vec<f64>> {
    if epsilon == 0.0 {
        return Ok(x.to_vec());
    }
    let grad = net.input_gradient(x, label)?;
    Ok(x.iter()
        .zip(grad)
        .map(|(v, g)| (v + direction * epsilon * sign(g)).clamp(0.0, 1.0))
        .collect())
}

fn fgsm_with(net: &Network, x: &[f64], label: usize, epsilon: f64) -> Result<AdvExample> {
    Ok(AdvExample {
        original: x.to_vec(),
        perturbed: step(net, x, label, epsilon, 1.0)?,
        label,
        source: None,
        target: None,
        epsilon,
    })
}

fn fgsm_targeted_with(
    net: &Network,
    x: &[f64],
    label: usize,
    target: usize,
    epsilon: f64,
) -> Result<AdvExample> {
    Ok(AdvExample {
        original: x.to_vec(),
        perturbed: step(net, x, target, epsilon, -1.0)?,
        label,
        source: None,
        target: Some(target),
        epsilon,
    })
}

/// Untargeted FGSM: `clip(x + ε·sign(∇ₓ loss), 0, 1)` with `sign(0) = 0`.
pub fn fgsm(
    spec: &NetworkSpec,
    params: &ParamSet,
    x: &[f64],
    label: usize,
    epsilon: f64,
) -> Result<AdvExample> {
    check_epsilon(epsilon)?;
    fgsm_with(&Network::new(spec, params)?, x, label, epsilon)
}

/// Targeted FGSM: steps down the loss of `target`.
pub fn fgsm_targeted(
    spec: &NetworkSpec,
    params: &ParamSet,
    x: &[f64],
    label: usize,
    target: usize,
    epsilon: f64,
) -> Result<AdvExample> {
    check_epsilon(epsilon)?;
    if target >= spec.classes {
        return Err(MgeError::invalid(format!(
            "target class {target} out of range"
        )));
    }
    fgsm_targeted_with(&Network::new(spec, params)?, x, label, target, epsilon)
}

/// Target class used when none is given: the next class after the label.
pub fn default_target(label: usize, classes: usize) -> usize {
    (label + 1) % classes
}

/// White-box FGSM examples for every example of `data`.
pub fn adversarial_set(
    spec: &NetworkSpec,
    params: &ParamSet,
    data: &Dataset,
    epsilon: f64,
) -> Result<Vec<AdvExample>> {
    check_epsilon(epsilon)?;
    let net = Network::new(spec, params)?;
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = data.example(i);
            fgsm_with(&net, x, y, epsilon)
        })
        .collect()
}

/// Accuracy on FGSM examples crafted against the model itself.
pub fn robust_accuracy(
    spec: &NetworkSpec,
    params: &ParamSet,
    data: &Dataset,
    epsilon: f64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(MgeError::invalid("robust accuracy on an empty dataset"));
    }
    let net = Network::new(spec, params)?;
    let advs = adversarial_set(spec, params, data, epsilon)?;
    let mut correct = 0usize;
    for adv in &advs {
        correct += usize::from(net.predict(&adv.perturbed)? == adv.label);
    }
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelTransfer {
    pub id: String,
    pub clean_accuracy: f64,
    /// Fraction of adversarial examples classified as any wrong class.
    pub untargeted_success: f64,
    /// Fraction of targeted examples classified exactly as their target.
    pub targeted_success: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub source_id: String,
    pub epsilon: f64,
    pub examples: usize,
    /// The source model first, then every pool member in order.
    pub rows: Vec<ModelTransfer>,
}

impl TransferReport {
    pub fn source(&self) -> &ModelTransfer {
        &self.rows[0]
    }

    pub fn members(&self) -> &[ModelTransfer] {
        &self.rows[1..]
    }

    /// One record per model: `id,clean,untargeted,targeted`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,clean,untargeted,targeted\n");
        for r in &self.rows {
            let targeted = r
                .targeted_success
                .map(|v| format!("{v:.6}"))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{}",
                r.id, r.clean_accuracy, r.untargeted_success, targeted
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "transfer from {} (eps={}, {} examples)\n{:<16} {:>8} {:>11} {:>9}\n",
            self.source_id, self.epsilon, self.examples, "model", "clean", "untargeted", "targeted"
        );
        for r in &self.rows {
            let targeted = r
                .targeted_success
                .map(|v| format!("{:.2}%", v * 100.0))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<16} {:>7.2}% {:>10.2}% {:>9}",
                r.id,
                r.clean_accuracy * 100.0,
                r.untargeted_success * 100.0,
                targeted
            );
        }
        out
    }
}

fn transfer_row(
    spec: &NetworkSpec,
    id: &str,
    params: &ParamSet,
    sample: &Dataset,
    untargeted: &[AdvExample],
    targeted: Option<&[AdvExample]>,
) -> Result<ModelTransfer> {
    let net = Network::new(spec, params)?;
    let n = sample.len() as f64;
    let mut clean = 0usize;
    for i in 0..sample.len() {
        let (x, y) = sample.example(i);
        clean += usize::from(argmax(&net.logits(x)?) == y);
    }
    let mut fooled = 0usize;
    for adv in untargeted {
        fooled += usize::from(net.predict(&adv.perturbed)? != adv.label);
    }
    let targeted_success = match targeted {
        Some(advs) => {
            let mut hit = 0usize;
            for adv in advs {
                hit += usize::from(Some(net.predict(&adv.perturbed)?) == adv.target);
            }
            Some(hit as f64 / n)
        }
        None => None,
    };
    Ok(ModelTransfer {
        id: id.to_string(),
        clean_accuracy: clean as f64 / n,
        untargeted_success: fooled as f64 / n,
        targeted_success,
    })
}

/// Crafts FGSM examples against `source` on `sample` and measures how
/// often they fool the source itself and every pool member. When
/// `targeted` is set, targeted examples toward `(label + 1) mod classes`
/// are crafted as well.
pub fn transfer_matrix(
    spec: &NetworkSpec,
    source: (&str, &ParamSet),
    pool: &[(String, ParamSet)],
    sample: &Dataset,
    epsilon: f64,
    targeted: bool,
) -> Result<TransferReport> {
    check_epsilon(epsilon)?;
    if pool.is_empty() {
        return Err(MgeError::invalid("transfer pool is empty"));
    }
    if sample.is_empty() {
        return Err(MgeError::invalid("transfer sample is empty"));
    }
    let net = Network::new(spec, source.1)?;
    let untargeted = adversarial_set(spec, source.1, sample, epsilon)?;
    let targeted_set = if targeted {
        Some(
            (0..sample.len())
                .into_par_iter()
                .map(|i| {
                    let (x, y) = sample.example(i);
                    fgsm_targeted_with(&net, x, y, default_target(y, spec.classes), epsilon)
                })
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };

    let mut rows = vec![transfer_row(
        spec,
        source.0,
        source.1,
        sample,
        &untargeted,
        targeted_set.as_deref(),
    )?];
    let members = pool
        .par_iter()
        .map(|(id, p)| transfer_row(spec, id, p, sample, &untargeted, targeted_set.as_deref()))
        .collect::<Result<Vec<_>>>()?;
    rows.extend(members);
    Ok(TransferReport {
        source_id: source.0.to_string(),
        epsilon,
        examples: sample.len(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(-0.0), 0.0);
        assert_eq!(sign(2.0), 1.0);
        assert_eq!(sign(-1e-300), -1.0);
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let spec = NetworkSpec::mlp(3, &[4], 2).unwrap();
        let params = ParamSet::init(&spec, 3);
        let x = [0.1, 0.5, 0.9];
        let adv = fgsm(&spec, &params, &x, 1, 0.0).unwrap();
        assert_eq!(adv.perturbed, x.to_vec());
        assert!(fgsm(&spec, &params, &x, 1, -0.1).is_err());
    }

    #[test]
    fn perturbation_is_bounded_and_clipped() {
        let spec = NetworkSpec::mlp(3, &[4], 2).unwrap();
        let params = ParamSet::init(&spec, 3);
        for eps in [0.01, 0.3, 2.0] {
            let adv = fgsm(&spec, &params, &[0.0, 0.5, 1.0], 0, eps).unwrap();
            assert!(adv.linf_distance() <= eps + 1e-9);
            assert!(adv.perturbed.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn default_target_wraps() {
        assert_eq!(default_target(0, 3), 1);
        assert_eq!(default_target(2, 3), 0);
    }
}
