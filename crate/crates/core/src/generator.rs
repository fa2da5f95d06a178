//! Frequency-domain model generation.
//!
//! Every parameter tensor of the base model is transformed with the
//! orthonormal DCT-II. The coefficients covering the top `t` of the
//! tensor's spectral energy form the retention mask; all other coefficients
//! are replaced by bounded latent draws and the tensor is transformed back.
//! A candidate is accepted when its validation accuracy beats the base or
//! stays within `ε` of it.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MgeError, Result};
use crate::nn::{evaluate_accuracy, Dataset, NetworkSpec, ParamSet};
use crate::tensor::{dct2, energy_order, idct2, LatentDistribution, RngStream, MAX_LATENT_BOUND};

/// Attempts evaluated per parallel round in [`Generator::pool`]. Fixed so
/// that results do not depend on the worker count.
pub const ATTEMPT_CHUNK: usize = 8;

/// Consecutive rejections that trigger halving of `z` when adaptive
/// halving is enabled.
pub const HALVING_PATIENCE: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Energy threshold `t`: fraction of spectral energy kept per tensor.
    pub threshold: f64,
    /// Latent bound `z`: replaced coefficients lie in `[-z, z]`.
    pub latent_bound: f64,
    /// Attempt budget `n_D` per requested model.
    pub attempts: usize,
    /// Acceptance tolerance `ε`.
    pub tolerance: f64,
    pub seed: u64,
    pub distribution: LatentDistribution,
    /// Halve `z` after [`HALVING_PATIENCE`] consecutive rejections.
    pub adaptive_halving: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            threshold: 0.8,
            latent_bound: 0.2,
            attempts: 100,
            tolerance: 0.05,
            seed: 0,
            distribution: LatentDistribution::TruncatedNormal,
            adaptive_halving: false,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(MgeError::config(format!(
                "threshold must lie in [0, 1], got {}",
                self.threshold
            )));
        }
        if !(self.latent_bound > 0.0 && self.latent_bound <= MAX_LATENT_BOUND) {
            return Err(MgeError::config(format!(
                "latent_bound must lie in (0, {MAX_LATENT_BOUND}], got {}",
                self.latent_bound
            )));
        }
        if self.attempts == 0 {
            return Err(MgeError::config("attempts must be >= 1"));
        }
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return Err(MgeError::config(format!(
                "tolerance must be finite and >= 0, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// Retention mask for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskRow {
    /// `true` marks an important (retained) coefficient.
    pub retained: Vec<bool>,
    /// Fraction of the tensor's spectral energy carried by retained
    /// coefficients.
    pub retained_energy: f64,
}

impl MaskRow {
    pub fn len(&self) -> usize {
        self.retained.len()
    }

    pub fn is_empty(&self) -> bool {
        self.retained.is_empty()
    }

    pub fn retained_count(&self) -> usize {
        self.retained.iter().filter(|&&r| r).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumMask {
    pub threshold: f64,
    pub rows: Vec<MaskRow>,
}

/// Minimal set of coefficients, taken in descending energy order, whose
/// cumulative energy fraction reaches `t`.
pub fn mask_from_coefficients(coeffs: &[f64], t: f64) -> Result<MaskRow> {
    if !(0.0..=1.0).contains(&t) {
        return Err(MgeError::config(format!(
            "threshold must lie in [0, 1], got {t}"
        )));
    }
    let total: f64 = coeffs.iter().map(|c| c * c).sum();
    if total == 0.0 {
        return Err(MgeError::DegenerateSpectrum);
    }
    let n = coeffs.len();
    if t >= 1.0 {
        return Ok(MaskRow {
            retained: vec![true; n],
            retained_energy: 1.0,
        });
    }
    let mut retained = vec![false; n];
    let mut acc = 0.0;
    // relative slack absorbs rounding in sums like 0.5 + 0.3 vs 0.8
    let target = t * total * (1.0 - 1e-12);
    for i in energy_order(coeffs) {
        if acc >= target {
            break;
        }
        retained[i] = true;
        acc += coeffs[i] * coeffs[i];
    }
    Ok(MaskRow {
        retained,
        retained_energy: acc / total,
    })
}

/// Retention mask of one parameter tensor at energy threshold `t`.
pub fn importance_mask(layer: &[f64], t: f64) -> Result<MaskRow> {
    mask_from_coefficients(&dct2(layer)?, t)
}

/// Output of [`generate_layer`].
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedLayer {
    pub values: Vec<f64>,
    /// Replacement coefficients, in index order of the unmasked positions.
    pub draws: Vec<f64>,
}

fn splice(
    coeffs: &[f64],
    mask: &MaskRow,
    z: f64,
    dist: LatentDistribution,
    rng: &mut RngStream,
) -> Result<GeneratedLayer> {
    if mask.len() != coeffs.len() {
        return Err(MgeError::structural(format!(
            "mask length {} does not match {} coefficients",
            mask.len(),
            coeffs.len()
        )));
    }
    let free = mask.len() - mask.retained_count();
    if free == 0 {
        return Ok(GeneratedLayer {
            values: idct2(coeffs)?,
            draws: Vec::new(),
        });
    }
    let draws = dist.sample(z, free, rng);
    let mut merged = coeffs.to_vec();
    let mut next = draws.iter();
    for (c, &keep) in merged.iter_mut().zip(&mask.retained) {
        if !keep {
            *c = *next.next().expect("one draw per free coefficient");
        }
    }
    Ok(GeneratedLayer {
        values: idct2(&merged)?,
        draws,
    })
}

/// Keeps the masked coefficients of `layer`, replaces the rest with latent
/// draws, and returns the inverse transform of the merged spectrum.
pub fn generate_layer(
    layer: &[f64],
    mask: &MaskRow,
    cfg: &GeneratorConfig,
    rng: &mut RngStream,
) -> Result<GeneratedLayer> {
    cfg.validate()?;
    splice(&dct2(layer)?, mask, cfg.latent_bound, cfg.distribution, rng)
}

/// `acc_g > acc_t` or `|acc_g - acc_t| < ε`.
pub fn accept(candidate_accuracy: f64, base_accuracy: f64, tolerance: f64) -> bool {
    candidate_accuracy > base_accuracy || (candidate_accuracy - base_accuracy).abs() < tolerance
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Seed,
    Mutate,
    Fuse,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub origin: Origin,
    pub parents: Vec<u64>,
}

impl Lineage {
    pub fn seed() -> Self {
        Lineage {
            origin: Origin::Seed,
            parents: Vec::new(),
        }
    }
}

/// A generated model. Parameters are kept at full precision; its accuracy
/// is measured on the single-precision form that gets stored.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub id: u64,
    pub params: ParamSet,
    /// Replacement coefficients drawn for each parameter tensor.
    pub latent_draws: Vec<Vec<f64>>,
    pub seconds: f64,
    pub accepted: bool,
    /// Validation accuracy of the stored (single-precision) parameters.
    pub accuracy: f64,
    pub lineage: Lineage,
}

impl Candidate {
    /// Parameters as persisted.
    pub fn stored_params(&self) -> ParamSet {
        self.params.quantized()
    }
}

/// Accepted candidates of a pool run plus attempt statistics.
#[derive(Clone, Debug)]
pub struct PoolOutcome {
    pub candidates: Vec<Candidate>,
    pub attempts: usize,
    /// Wall-clock time of the whole run, rejected attempts included.
    pub seconds: f64,
    /// Latent bound in effect when the run stopped.
    pub final_latent_bound: f64,
}

/// Precomputed base spectra and masks for repeated generation.
pub struct Generator<'a> {
    spec: &'a NetworkSpec,
    base: &'a ParamSet,
    valset: &'a Dataset,
    cfg: GeneratorConfig,
    base_coeffs: Vec<Vec<f64>>,
    mask: SpectrumMask,
    base_accuracy: f64,
}

impl<'a> Generator<'a> {
    pub fn new(
        spec: &'a NetworkSpec,
        base: &'a ParamSet,
        cfg: GeneratorConfig,
        valset: &'a Dataset,
    ) -> Result<Self> {
        cfg.validate()?;
        base.check_against(spec)?;
        let base_coeffs = base
            .layers()
            .iter()
            .map(|l| dct2(&l.values))
            .collect::<Result<Vec<_>>>()?;
        let rows = base_coeffs
            .iter()
            .map(|c| mask_from_coefficients(c, cfg.threshold))
            .collect::<Result<Vec<_>>>()?;
        let base_accuracy = evaluate_accuracy(spec, &base.quantized(), valset)?;
        Ok(Generator {
            spec,
            base,
            valset,
            mask: SpectrumMask {
                threshold: cfg.threshold,
                rows,
            },
            cfg,
            base_coeffs,
            base_accuracy,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.spec
    }

    pub fn base(&self) -> &ParamSet {
        self.base
    }

    pub fn valset(&self) -> &Dataset {
        self.valset
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn mask(&self) -> &SpectrumMask {
        &self.mask
    }

    pub fn base_coefficients(&self) -> &[Vec<f64>] {
        &self.base_coeffs
    }

    /// Validation accuracy of the base model.
    pub fn base_accuracy(&self) -> f64 {
        self.base_accuracy
    }

    /// Validation accuracy of `params` after rounding to storage precision.
    pub fn evaluate(&self, params: &ParamSet) -> Result<f64> {
        evaluate_accuracy(self.spec, &params.quantized(), self.valset)
    }

    pub fn accepts(&self, accuracy: f64) -> bool {
        accept(accuracy, self.base_accuracy, self.cfg.tolerance)
    }

    fn rebuild(
        &self,
        coeffs: &[Vec<f64>],
        z: f64,
        rng: &RngStream,
    ) -> Result<(ParamSet, Vec<Vec<f64>>)> {
        let mut params = self.base.clone();
        let mut draws = Vec::with_capacity(coeffs.len());
        for (t, (layer, c)) in params.layers_mut().iter_mut().zip(coeffs).enumerate() {
            let mut layer_rng = rng.derive(t as u64);
            let g = splice(
                c,
                &self.mask.rows[t],
                z,
                self.cfg.distribution,
                &mut layer_rng,
            )?;
            layer.values = g.values;
            draws.push(g.draws);
        }
        Ok((params, draws))
    }

    fn finish(
        &self,
        id: u64,
        params: ParamSet,
        latent_draws: Vec<Vec<f64>>,
        lineage: Lineage,
        start: Instant,
    ) -> Result<Candidate> {
        let accuracy = self.evaluate(&params)?;
        Ok(Candidate {
            id,
            params,
            latent_draws,
            seconds: start.elapsed().as_secs_f64(),
            accepted: self.accepts(accuracy),
            accuracy,
            lineage,
        })
    }

    /// Evaluates externally built parameters (e.g. a fusion) as a candidate
    /// with no latent draws.
    pub fn assess(&self, id: u64, params: ParamSet, lineage: Lineage) -> Result<Candidate> {
        let start = Instant::now();
        if !params.same_layout(self.base) {
            return Err(MgeError::structural(
                "candidate does not match the base layout",
            ));
        }
        self.finish(id, params, Vec::new(), lineage, start)
    }

    /// One generation attempt. Its random stream depends only on the base
    /// seed and `attempt`, one child stream per parameter tensor.
    pub fn attempt(&self, attempt: u64, z: f64) -> Result<Candidate> {
        let start = Instant::now();
        let rng = RngStream::new(self.cfg.seed).derive(attempt);
        let (params, draws) = self.rebuild(&self.base_coeffs, z, &rng)?;
        self.finish(attempt, params, draws, Lineage::seed(), start)
    }

    /// One attempt at the configured latent bound.
    pub fn generate(&self, attempt: u64) -> Result<Candidate> {
        self.attempt(attempt, self.cfg.latent_bound)
    }

    /// `count` accepted candidates, trying at most `n_D * count` attempts.
    pub fn pool(&self, count: usize) -> Result<PoolOutcome> {
        if count == 0 {
            return Err(MgeError::config("pool size must be >= 1"));
        }
        let start = Instant::now();
        let budget = self.cfg.attempts.saturating_mul(count);
        let mut z = self.cfg.latent_bound;
        let mut accepted = Vec::with_capacity(count);
        let mut used = 0usize;
        let mut streak = 0usize;
        let mut best_rejected = f64::NEG_INFINITY;

        'rounds: while used < budget {
            let round: Vec<u64> =
                (used as u64..(used + ATTEMPT_CHUNK).min(budget) as u64).collect();
            let results = round
                .par_iter()
                .map(|&a| self.attempt(a, z))
                .collect::<Result<Vec<_>>>()?;
            let mut next_z = z;
            for cand in results {
                used += 1;
                if cand.accepted {
                    streak = 0;
                    accepted.push(cand);
                    if accepted.len() == count {
                        break 'rounds;
                    }
                } else {
                    best_rejected = best_rejected.max(cand.accuracy);
                    streak += 1;
                    if self.cfg.adaptive_halving && streak >= HALVING_PATIENCE {
                        next_z /= 2.0;
                        streak = 0;
                    }
                }
            }
            z = next_z;
        }

        if accepted.is_empty() {
            return Err(MgeError::GenerationFailed {
                attempts: used,
                best_accuracy: best_rejected,
                base_accuracy: self.base_accuracy,
            });
        }
        Ok(PoolOutcome {
            candidates: accepted,
            attempts: used,
            seconds: start.elapsed().as_secs_f64(),
            final_latent_bound: z,
        })
    }

    /// `j` children of `parent`, each keeping the parent's retained
    /// coefficients and redrawing the rest from an independent stream.
    /// Children get ids `first_id, first_id + 1, ...`.
    pub fn mutate(
        &self,
        parent: &Candidate,
        j: usize,
        rng: &RngStream,
        first_id: u64,
    ) -> Result<Vec<Candidate>> {
        if j == 0 {
            return Err(MgeError::config("mutation count j must be >= 1"));
        }
        if !parent.params.same_layout(self.base) {
            return Err(MgeError::structural(
                "parent does not match the base layout",
            ));
        }
        let coeffs = parent
            .params
            .layers()
            .iter()
            .map(|l| dct2(&l.values))
            .collect::<Result<Vec<_>>>()?;
        (0..j)
            .into_par_iter()
            .map(|k| {
                let start = Instant::now();
                let child_rng = rng.derive(k as u64);
                let (params, draws) = self.rebuild(&coeffs, self.cfg.latent_bound, &child_rng)?;
                self.finish(
                    first_id + k as u64,
                    params,
                    draws,
                    Lineage {
                        origin: Origin::Mutate,
                        parents: vec![parent.id],
                    },
                    start,
                )
            })
            .collect()
    }
}

/// A single generation attempt (attempt index 0).
pub fn generate_model(
    base: &ParamSet,
    spec: &NetworkSpec,
    cfg: &GeneratorConfig,
    valset: &Dataset,
) -> Result<Candidate> {
    Generator::new(spec, base, cfg.clone(), valset)?.generate(0)
}

pub fn generate_pool(
    base: &ParamSet,
    spec: &NetworkSpec,
    cfg: &GeneratorConfig,
    valset: &Dataset,
    count: usize,
) -> Result<PoolOutcome> {
    Generator::new(spec, base, cfg.clone(), valset)?.pool(count)
}
