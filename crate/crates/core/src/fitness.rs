//! Discriminator criteria and the evolutionary fitness scores: quality
//! (mean base-criterion score), diversity (mean additional-criterion score)
//! and their trade-off `F = F_q + γ·F_d`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversarial::robust_accuracy;
use crate::error::{MgeError, Result};
use crate::generator::Candidate;
use crate::nn::{evaluate_accuracy, Dataset, NetworkSpec, ParamSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CriterionKind {
    /// Clean accuracy.
    Accuracy,
    /// White-box FGSM accuracy at the given perturbation budget.
    RobustAccuracy { epsilon: f64 },
    /// Clean accuracy on an alternate (held-out) distribution.
    TransferAccuracy,
}

/// A scoring rule bound to the dataset it is measured on.
#[derive(Clone, Debug)]
pub struct Criterion {
    kind: CriterionKind,
    dataset: Arc<Dataset>,
}

impl Criterion {
    pub fn new(kind: CriterionKind, dataset: Arc<Dataset>) -> Result<Self> {
        if dataset.is_empty() {
            return Err(MgeError::config("criterion dataset is empty"));
        }
        if let CriterionKind::RobustAccuracy { epsilon } = kind {
            if !(epsilon > 0.0 && epsilon.is_finite()) {
                return Err(MgeError::config(format!(
                    "robust_accuracy needs an attack strength > 0, got {epsilon}"
                )));
            }
        }
        Ok(Criterion { kind, dataset })
    }

    pub fn accuracy(dataset: Arc<Dataset>) -> Result<Self> {
        Criterion::new(CriterionKind::Accuracy, dataset)
    }

    pub fn robust_accuracy(dataset: Arc<Dataset>, epsilon: f64) -> Result<Self> {
        Criterion::new(CriterionKind::RobustAccuracy { epsilon }, dataset)
    }

    pub fn transfer_accuracy(dataset: Arc<Dataset>) -> Result<Self> {
        Criterion::new(CriterionKind::TransferAccuracy, dataset)
    }

    pub fn kind(&self) -> &CriterionKind {
        &self.kind
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    /// Score in `[0, 1]` of a parameter set, used as given.
    pub fn score(&self, spec: &NetworkSpec, params: &ParamSet) -> Result<f64> {
        match self.kind {
            CriterionKind::Accuracy | CriterionKind::TransferAccuracy => {
                evaluate_accuracy(spec, params, &self.dataset)
            }
            CriterionKind::RobustAccuracy { epsilon } => {
                robust_accuracy(spec, params, &self.dataset, epsilon)
            }
        }
    }

    /// Score of a candidate's stored parameters.
    pub fn score_candidate(&self, spec: &NetworkSpec, candidate: &Candidate) -> Result<f64> {
        self.score(spec, &candidate.stored_params())
    }
}

fn mean_score(spec: &NetworkSpec, candidates: &[Candidate], criterion: &Criterion) -> Result<f64> {
    if candidates.is_empty() {
        return Err(MgeError::invalid("fitness of an empty candidate set"));
    }
    let mut scores = candidates
        .par_iter()
        .map(|c| criterion.score_candidate(spec, c))
        .collect::<Result<Vec<_>>>()?;
    // Summing in sorted order makes the mean independent of candidate order.
    scores.sort_by(f64::total_cmp);
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Mean base-criterion score over the candidates.
pub fn quality_fitness(
    spec: &NetworkSpec,
    candidates: &[Candidate],
    base: &Criterion,
) -> Result<f64> {
    mean_score(spec, candidates, base)
}

/// Mean additional-criterion score over the candidates.
pub fn diversity_fitness(
    spec: &NetworkSpec,
    candidates: &[Candidate],
    additional: &Criterion,
) -> Result<f64> {
    mean_score(spec, candidates, additional)
}

/// `F_q + γ·F_d`; `γ` is expected to be non-negative.
pub fn combined_fitness(quality: f64, diversity: f64, gamma: f64) -> f64 {
    quality + gamma * diversity
}

#[derive(Clone, Debug)]
pub struct FitnessConfig {
    pub base: Criterion,
    pub additional: Criterion,
    pub gamma: f64,
}

impl FitnessConfig {
    pub fn new(base: Criterion, additional: Criterion, gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(MgeError::config(format!(
                "gamma must be finite and >= 0, got {gamma}"
            )));
        }
        Ok(FitnessConfig {
            base,
            additional,
            gamma,
        })
    }

    /// Fitness of a single candidate (the expectation over one draw).
    pub fn evaluate(&self, spec: &NetworkSpec, candidate: &Candidate) -> Result<Fitness> {
        let params = candidate.stored_params();
        let quality = self.base.score(spec, &params)?;
        let diversity = self.additional.score(spec, &params)?;
        Ok(Fitness {
            quality,
            diversity,
            total: combined_fitness(quality, diversity, self.gamma),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fitness {
    pub quality: f64,
    pub diversity: f64,
    pub total: f64,
}
