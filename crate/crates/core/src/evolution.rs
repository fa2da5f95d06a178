//! Evolutionary enhancement of a generated pool: mutation by resampling the
//! unimportant coefficients, fusion by weighted parameter averaging,
//! fitness evaluation and elitist selection.

use std::cmp::Ordering;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MgeError, Result};
use crate::fitness::{Fitness, FitnessConfig};
use crate::generator::{Candidate, Generator, GeneratorConfig, Lineage, Origin};
use crate::nn::{Dataset, NetworkSpec, ParamSet};
use crate::tensor::RngStream;

/// Tolerance on the sum of fusion weights.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionWeights {
    #[default]
    Uniform,
    /// Weights proportional to the pair's total fitness.
    FitnessProportional,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    /// Generations `N`.
    pub generations: usize,
    /// Parents `n`, also the survivors per generation.
    pub parents: usize,
    /// Mutated children `j` per generation.
    pub mutations: usize,
    /// Fused candidates `m` per generation.
    pub fusions: usize,
    pub fusion_weights: FusionWeights,
    pub seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            generations: 20,
            parents: 10,
            mutations: 10,
            fusions: 20,
            fusion_weights: FusionWeights::Uniform,
            seed: 0,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("parents", self.parents),
            ("mutations", self.mutations),
            ("fusions", self.fusions),
        ] {
            if v == 0 {
                return Err(MgeError::config(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// A candidate with its fitness.
#[derive(Clone, Debug, PartialEq)]
pub struct Member {
    pub candidate: Candidate,
    pub fitness: Fitness,
}

impl Member {
    pub fn id(&self) -> u64 {
        self.candidate.id
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    pub generation: usize,
    pub members: Vec<Member>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub max_fitness: f64,
    pub mean_fitness: f64,
    pub best_id: u64,
    /// Members evaluated before selection.
    pub evaluated: usize,
    /// Population size after selection.
    pub survivors: usize,
    pub rejected_mutations: usize,
    pub rejected_fusions: usize,
}

impl GenerationRecord {
    pub fn to_line(&self) -> String {
        format!(
            "generation={} max_f={:.6} mean_f={:.6} best_id={} evaluated={} survivors={} rejected_mutations={} rejected_fusions={}",
            self.generation,
            self.max_fitness,
            self.mean_fitness,
            self.best_id,
            self.evaluated,
            self.survivors,
            self.rejected_mutations,
            self.rejected_fusions
        )
    }
}

#[derive(Clone, Debug)]
pub struct EvolutionOutcome {
    /// Highest-fitness individual seen over all generations.
    pub best: Member,
    /// Generation 0 is the seed population.
    pub history: Vec<GenerationRecord>,
    pub seed_pool: Vec<Member>,
    pub population: Population,
    /// Generation attempts spent seeding.
    pub seed_attempts: usize,
    pub seconds: f64,
}

/// Elementwise weighted average of parent parameter sets.
pub fn fuse_params(parents: &[&ParamSet], weights: &[f64]) -> Result<ParamSet> {
    if parents.is_empty() {
        return Err(MgeError::invalid("fusion needs at least one parent"));
    }
    if parents.len() != weights.len() {
        return Err(MgeError::config(format!(
            "{} fusion weights for {} parents",
            weights.len(),
            parents.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(MgeError::config(
            "fusion weights must be finite and non-negative",
        ));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(MgeError::config(format!(
            "fusion weights sum to {sum}, expected 1"
        )));
    }
    if parents.iter().any(|p| !p.same_layout(parents[0])) {
        return Err(MgeError::structural(
            "fusion parents have different layouts",
        ));
    }
    let mut out = parents[0].clone();
    for (t, layer) in out.layers_mut().iter_mut().enumerate() {
        for (i, v) in layer.values.iter_mut().enumerate() {
            *v = parents
                .iter()
                .zip(weights)
                .map(|(p, w)| w * p.layers()[t].values[i])
                .sum();
        }
    }
    Ok(out)
}

/// Fuses candidates and evaluates the result; lineage lists the parents.
pub fn fuse(
    generator: &Generator<'_>,
    parents: &[&Candidate],
    weights: &[f64],
    id: u64,
) -> Result<Candidate> {
    let params: Vec<&ParamSet> = parents.iter().map(|c| &c.params).collect();
    let fused = fuse_params(&params, weights)?;
    generator.assess(
        id,
        fused,
        Lineage {
            origin: Origin::Fuse,
            parents: parents.iter().map(|c| c.id).collect(),
        },
    )
}

/// Round-robin schedule: how many of `j` children each of `n` parents gets.
pub fn mutation_schedule(n: usize, j: usize) -> Vec<usize> {
    (0..n).map(|p| j / n + usize::from(p < j % n)).collect()
}

/// Fitness for every candidate, in input order.
pub fn evaluate_population(
    spec: &NetworkSpec,
    candidates: Vec<Candidate>,
    fit: &FitnessConfig,
) -> Result<Vec<Member>> {
    candidates
        .into_par_iter()
        .map(|candidate| {
            let fitness = fit.evaluate(spec, &candidate)?;
            Ok(Member { candidate, fitness })
        })
        .collect()
}

/// Selection order: higher `F`, then higher `F_q`, then lower id.
pub fn rank_order(a: &Member, b: &Member) -> Ordering {
    b.fitness
        .total
        .total_cmp(&a.fitness.total)
        .then(b.fitness.quality.total_cmp(&a.fitness.quality))
        .then(a.id().cmp(&b.id()))
}

/// The `n` best members by [`rank_order`].
pub fn select(mut members: Vec<Member>, n: usize) -> Result<Vec<Member>> {
    if members.len() < n {
        return Err(MgeError::structural(format!(
            "population of {} cannot yield {n} survivors",
            members.len()
        )));
    }
    members.sort_by(rank_order);
    members.truncate(n);
    Ok(members)
}

fn record(
    generation: usize,
    members: &[Member],
    evaluated: usize,
    rm: usize,
    rf: usize,
) -> GenerationRecord {
    let best = members
        .iter()
        .min_by(|a, b| rank_order(a, b))
        .expect("non-empty population");
    GenerationRecord {
        generation,
        max_fitness: best.fitness.total,
        mean_fitness: members.iter().map(|m| m.fitness.total).sum::<f64>() / members.len() as f64,
        best_id: best.id(),
        evaluated,
        survivors: members.len(),
        rejected_mutations: rm,
        rejected_fusions: rf,
    }
}

fn pair_weights(rule: FusionWeights, a: &Member, b: &Member) -> [f64; 2] {
    match rule {
        FusionWeights::Uniform => [0.5, 0.5],
        FusionWeights::FitnessProportional => {
            let (fa, fb) = (a.fitness.total.max(0.0), b.fitness.total.max(0.0));
            if fa + fb > 0.0 {
                let wa = fa / (fa + fb);
                [wa, 1.0 - wa]
            } else {
                [0.5, 0.5]
            }
        }
    }
}

/// Runs the evolutionary loop on top of a prepared generator. The seed
/// population is a generated pool of `ecfg.parents` models.
pub fn evolve_with(
    generator: &Generator<'_>,
    ecfg: &EvolutionConfig,
    fit: &FitnessConfig,
) -> Result<EvolutionOutcome> {
    ecfg.validate()?;
    let start = Instant::now();
    let spec = generator.spec();
    let seeded = generator.pool(ecfg.parents)?;
    let mut next_id = seeded.attempts as u64;
    let seed_pool = evaluate_population(spec, seeded.candidates, fit)?;

    // A short pool still evolves; it grows through mutation and fusion.
    let mut survivors = select(seed_pool.clone(), seed_pool.len().min(ecfg.parents))?;
    let mut history = vec![record(0, &survivors, seed_pool.len(), 0, 0)];
    let mut best = survivors[0].clone();
    let root = RngStream::new(ecfg.seed);

    for g in 1..=ecfg.generations {
        let gen_rng = root.derive(g as u64);

        let schedule = mutation_schedule(survivors.len(), ecfg.mutations);
        let mut jobs = Vec::new();
        for (p, &count) in schedule.iter().enumerate() {
            if count > 0 {
                jobs.push((p, count, next_id));
                next_id += count as u64;
            }
        }
        let batches = jobs
            .par_iter()
            .map(|&(p, count, first)| {
                generator.mutate(
                    &survivors[p].candidate,
                    count,
                    &gen_rng.derive2(0, p as u64),
                    first,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let children: Vec<Candidate> = batches.into_iter().flatten().collect();
        let rejected_mutations = children.iter().filter(|c| !c.accepted).count();
        let children = evaluate_population(
            spec,
            children.into_iter().filter(|c| c.accepted).collect(),
            fit,
        )?;

        let mut pairing = gen_rng.derive(1);
        let pool: Vec<&Member> = survivors.iter().chain(children.iter()).collect();
        let mut pairs = Vec::with_capacity(ecfg.fusions);
        for k in 0..ecfg.fusions {
            let a = pairing.random_range(0..pool.len());
            let b = if pool.len() > 1 {
                let b = pairing.random_range(0..pool.len() - 1);
                b + usize::from(b >= a)
            } else {
                a
            };
            pairs.push((a, b, next_id + k as u64));
        }
        next_id += ecfg.fusions as u64;
        let fused = pairs
            .par_iter()
            .map(|&(a, b, id)| {
                if a == b {
                    fuse(generator, &[&pool[a].candidate], &[1.0], id)
                } else {
                    let w = pair_weights(ecfg.fusion_weights, pool[a], pool[b]);
                    fuse(generator, &[&pool[a].candidate, &pool[b].candidate], &w, id)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let rejected_fusions = fused.iter().filter(|c| !c.accepted).count();
        let fused = evaluate_population(
            spec,
            fused.into_iter().filter(|c| c.accepted).collect(),
            fit,
        )?;

        let mut all = survivors;
        all.extend(children);
        all.extend(fused);
        let evaluated = all.len();
        survivors = select(all, evaluated.min(ecfg.parents))?;
        history.push(record(
            g,
            &survivors,
            evaluated,
            rejected_mutations,
            rejected_fusions,
        ));
        if rank_order(&survivors[0], &best) == Ordering::Less {
            best = survivors[0].clone();
        }
    }

    Ok(EvolutionOutcome {
        best,
        history,
        seed_pool,
        population: Population {
            generation: ecfg.generations,
            members: survivors,
        },
        seed_attempts: seeded.attempts,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn evolve(
    base: &ParamSet,
    spec: &NetworkSpec,
    gcfg: &GeneratorConfig,
    ecfg: &EvolutionConfig,
    fit: &FitnessConfig,
    valset: &Dataset,
) -> Result<EvolutionOutcome> {
    let generator = Generator::new(spec, base, gcfg.clone(), valset)?;
    evolve_with(&generator, ecfg, fit)
}
