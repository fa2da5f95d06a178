//! The pipeline stages behind each subcommand. Every command writes its
//! artifacts under the output directory and finishes with a stamp.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use mge_core::adversarial::{robust_accuracy, transfer_matrix, TransferReport};
use mge_core::analysis::{
    band_sensitivity, energy_curves, unimportant_mask_spatial, zero_fill_decay, Band, BandAccuracy,
};
use mge_core::evolution::{evolve_with, GenerationRecord};
use mge_core::nn::{evaluate_accuracy, load_idx, train, SyntheticSpec};
use mge_core::store::{
    content_hash, load_model, save_model, time_ratio, write_atomic, BaseRecord, MemberRecord,
    MemberTiming, Timings, MANIFEST_FILE,
};
use mge_core::{
    Candidate, Criterion, CriterionKind, Dataset, EvolutionOutcome, Fitness, FitnessConfig,
    Generator, NetworkSpec, ParamSet, PoolManifest, Split,
};
use serde::{Deserialize, Serialize};

use crate::config::{DatasetSection, NetworkKind, NetworkSection, RunConfig};
use crate::error::{CliError, CliResult};
use crate::stamp::Stamp;
use crate::table::{num, pct, Table};

pub const BASE_FILE: &str = "base.mgem";
pub const TRAIN_FILE: &str = "train.json";
pub const POOL_DIR: &str = "pool";
pub const EVOLVE_DIR: &str = "evolve";
pub const SEED_DIR: &str = "seed";
pub const ATTACK_DIR: &str = "attack";
pub const ATTACK_FILE: &str = "attack.json";
pub const REPORT_DIR: &str = "report";

/// A resolved config plus the output directory it writes to.
#[derive(Clone, Debug)]
pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub verbose: bool,
}

impl Context {
    pub fn new(cfg: RunConfig, out: Option<PathBuf>, verbose: bool) -> Self {
        let out = out.unwrap_or_else(|| cfg.output.dir.clone());
        let mut cfg = cfg;
        cfg.output.dir = out.clone();
        Context { cfg, out, verbose }
    }

    fn note(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn write(&self, stamp: &mut Stamp, path: &Path, text: &str) -> CliResult<()> {
        write_atomic(path, text.as_bytes())?;
        stamp.record(&self.out, path)
    }

    fn write_json<T: Serialize>(&self, stamp: &mut Stamp, path: &Path, value: &T) -> CliResult<()> {
        let mut text =
            serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
        text.push('\n');
        self.write(stamp, path, &text)
    }

    fn write_table(
        &self,
        stamp: &mut Stamp,
        dir: &Path,
        stem: &str,
        table: &Table,
    ) -> CliResult<()> {
        self.write(stamp, &dir.join(format!("{stem}.txt")), &table.to_text())?;
        self.write(stamp, &dir.join(format!("{stem}.csv")), &table.to_csv())
    }
}

/// Train, validation, test and alternate splits.
#[derive(Clone, Debug)]
pub struct Data {
    pub train: Dataset,
    pub validation: Arc<Dataset>,
    pub test: Arc<Dataset>,
    /// Held-out data from a shifted distribution for transfer accuracy.
    pub alternate: Arc<Dataset>,
}

fn dataset_error(e: mge_core::MgeError) -> CliError {
    match e {
        mge_core::MgeError::ConfigRange(message) => CliError::Config {
            section: "dataset".into(),
            key: None,
            message,
        },
        other => other.into(),
    }
}

pub fn load_data(ds: &DatasetSection) -> CliResult<Data> {
    let (train, validation, test, alternate) = match ds.synthetic_kind() {
        Some(kind) => {
            let make = |n: usize, k: u64, noise: f64, split: Split| {
                SyntheticSpec {
                    kind,
                    n,
                    classes: ds.classes,
                    dim: ds.dim,
                    noise,
                    seed: ds.seed.wrapping_add(k),
                }
                .generate(split)
                .map_err(dataset_error)
            };
            let alternate_noise = ds.alternate_noise.unwrap_or(2.0 * ds.noise);
            (
                make(ds.train, 0, ds.noise, Split::Train)?,
                make(ds.validation, 1, ds.noise, Split::Validation)?,
                make(ds.test, 2, ds.noise, Split::Test)?,
                make(ds.test, 3, alternate_noise, Split::Test)?,
            )
        }
        None => {
            let dir = ds.path.as_deref().expect("validated");
            let full = load_idx(
                &dir.join("train-images-idx3-ubyte"),
                &dir.join("train-labels-idx1-ubyte"),
                Split::Train,
            )?;
            let (train, validation) = full.split_off(ds.validation, Split::Validation)?;
            let test_full = load_idx(
                &dir.join("t10k-images-idx3-ubyte"),
                &dir.join("t10k-labels-idx1-ubyte"),
                Split::Test,
            )?;
            let test = test_full.head(ds.test);
            // The alternate split is the rest of the official test set.
            let alternate = if test_full.len() > ds.test {
                test_full
                    .split_off(test_full.len() - ds.test, Split::Test)?
                    .1
            } else {
                test.clone()
            };
            (train.head(ds.train), validation, test, alternate)
        }
    };
    Ok(Data {
        train,
        validation: Arc::new(validation),
        test: Arc::new(test),
        alternate: Arc::new(alternate),
    })
}

pub fn build_spec(net: &NetworkSection, data: &Data) -> CliResult<NetworkSpec> {
    let classes = data.train.classes();
    let shape = data.train.feature_shape().to_vec();
    let spec = match net.kind {
        NetworkKind::Mlp => NetworkSpec::mlp(data.train.feature_len(), &net.hidden, classes)?,
        NetworkKind::Lenet => {
            let spec = NetworkSpec::lenet(classes)?;
            if spec.input_shape != shape {
                return Err(mge_core::MgeError::Structural(format!(
                    "lenet expects input {:?}, dataset has {shape:?}",
                    spec.input_shape
                ))
                .into());
            }
            spec
        }
        NetworkKind::Layers => NetworkSpec::new(shape, classes, net.layers.clone())?,
    };
    Ok(spec)
}

pub fn fitness_config(cfg: &RunConfig, data: &Data) -> CliResult<FitnessConfig> {
    let additional_data = match cfg.fitness.additional {
        CriterionKind::TransferAccuracy => data.alternate.clone(),
        _ => data.validation.clone(),
    };
    let base = Criterion::accuracy(data.validation.clone())?;
    let additional = Criterion::new(cfg.fitness.additional.clone(), additional_data)?;
    Ok(FitnessConfig::new(base, additional, cfg.fitness.gamma)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAccuracy {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTimings {
    pub time_trained: f64,
}

/// Contents of `train.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub network: NetworkSpec,
    pub parameters: usize,
    pub base: BaseRecord,
    pub accuracy: SplitAccuracy,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
    pub timings: TrainTimings,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub base_path: PathBuf,
    pub record: TrainRecord,
    /// The trained parameters as stored (single precision).
    pub params: ParamSet,
}

pub fn cmd_train(ctx: &Context) -> CliResult<TrainOutcome> {
    let mut stamp = Stamp::new("train", &ctx.cfg);
    let data = load_data(&ctx.cfg.dataset)?;
    let spec = build_spec(&ctx.cfg.network, &data)?;
    ctx.note(format!(
        "training {} parameters on {} examples",
        spec.param_count(),
        data.train.len()
    ));
    let report = train(&spec, &data.train, &ctx.cfg.train)?;

    let base_path = ctx.out.join(BASE_FILE);
    let info = save_model(&report.params, &base_path)?;
    stamp.record(&ctx.out, &base_path)?;
    let params = report.params.quantized();
    let accuracy = SplitAccuracy {
        train: evaluate_accuracy(&spec, &params, &data.train)?,
        validation: evaluate_accuracy(&spec, &params, &data.validation)?,
        test: evaluate_accuracy(&spec, &params, &data.test)?,
    };
    let record = TrainRecord {
        parameters: spec.param_count(),
        network: spec,
        base: BaseRecord {
            file: BASE_FILE.into(),
            hash: info.hash,
            accuracy: accuracy.validation,
        },
        accuracy,
        initial_loss: report.initial_loss,
        final_loss: report.final_loss,
        epoch_losses: report.epoch_losses,
        timings: TrainTimings {
            time_trained: report.seconds,
        },
    };
    ctx.write_json(&mut stamp, &ctx.out.join(TRAIN_FILE), &record)?;
    stamp.write(&ctx.out)?;
    ctx.note(format!(
        "base accuracy: validation {:.4}, test {:.4} ({:.3}s)",
        accuracy.validation, accuracy.test, report.seconds
    ));
    Ok(TrainOutcome {
        base_path,
        record,
        params,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyzeOptions {
    pub fractions: Vec<f64>,
    pub band_scale: f64,
    pub mask_fraction: f64,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            fractions: (0..=10).map(|k| k as f64 * 0.05).collect(),
            band_scale: 0.2,
            mask_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AnalyzeOutcome {
    pub decay: Vec<(f64, f64)>,
    pub bands: Vec<BandAccuracy>,
    pub energy: Vec<(String, Vec<f64>)>,
    pub base_accuracy: f64,
}

pub fn cmd_analyze(
    ctx: &Context,
    model: Option<&Path>,
    opts: &AnalyzeOptions,
) -> CliResult<AnalyzeOutcome> {
    let mut stamp = Stamp::new("analyze", &ctx.cfg);
    let data = load_data(&ctx.cfg.dataset)?;
    let spec = build_spec(&ctx.cfg.network, &data)?;
    let model = model
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.out.join(BASE_FILE));
    let params = load_model(&model)?;
    params.check_against(&spec)?;
    let dir = ctx.out.join("analysis");
    let base_accuracy = evaluate_accuracy(&spec, &params, &data.test)?;

    let energy = energy_curves(&params)?;
    let mut csv = String::from("tensor,index,cumulative_energy\n");
    for (name, curve) in &energy {
        for (i, e) in curve.iter().enumerate() {
            csv.push_str(&format!("{name},{i},{e:.9}\n"));
        }
    }
    ctx.write(&mut stamp, &dir.join("energy.csv"), &csv)?;

    let decay = zero_fill_decay(&params, &spec, &data.test, &opts.fractions)?;
    let mut table = Table::new("zero-fill decay (test accuracy)", &["fraction", "accuracy"]);
    for &(f, a) in &decay {
        table.push(vec![format!("{f:.2}"), num(a)]);
    }
    ctx.write_table(&mut stamp, &dir, "decay", &table)?;

    let thirds = [(0.0, 1.0 / 3.0), (1.0 / 3.0, 2.0 / 3.0), (2.0 / 3.0, 1.0)];
    let bands = band_sensitivity(
        &params,
        &spec,
        &data.test,
        &thirds,
        opts.band_scale,
        ctx.cfg.generator.config.seed,
    )?;
    let mut table = Table::new(
        format!(
            "band sensitivity (noise scale {}, base {})",
            opts.band_scale,
            pct(base_accuracy)
        ),
        &["band", "lo", "hi", "accuracy"],
    );
    for (b, name) in bands.iter().zip(["low", "mid", "high"]) {
        table.push(vec![
            name.into(),
            format!("{:.4}", b.lo),
            format!("{:.4}", b.hi),
            num(b.accuracy),
        ]);
    }
    ctx.write_table(&mut stamp, &dir, "bands", &table)?;

    let mut csv = String::from("tensor,band,position,unimportant\n");
    for layer in params.layers() {
        for (band, name) in [(Band::Low, "low"), (Band::Mid, "mid"), (Band::High, "high")] {
            let mask = unimportant_mask_spatial(&layer.values, band, opts.mask_fraction)?;
            for (i, m) in mask.iter().enumerate() {
                csv.push_str(&format!("{},{name},{i},{}\n", layer.name, u8::from(*m)));
            }
        }
    }
    ctx.write(&mut stamp, &dir.join("masks.csv"), &csv)?;
    stamp.write(&ctx.out)?;
    Ok(AnalyzeOutcome {
        decay,
        bands,
        energy,
        base_accuracy,
    })
}

fn model_file(id: u64) -> String {
    format!("model_{id:06}.mgem")
}

/// Empties a previous pool directory so stale members cannot linger.
fn prepare_pool_dir(dir: &Path) -> CliResult<()> {
    if dir.join(MANIFEST_FILE).exists() {
        std::fs::remove_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

struct PoolWrite<'a> {
    dir: &'a Path,
    base: &'a ParamSet,
    base_accuracy: f64,
    generator: &'a Generator<'a>,
    evolution: Option<&'a mge_core::EvolutionConfig>,
    attempts: usize,
    members: Vec<(&'a Candidate, Option<Fitness>)>,
    history: Vec<GenerationRecord>,
    time_generated: f64,
    time_trained: Option<f64>,
    ratio: Option<f64>,
}

fn write_pool(ctx: &Context, stamp: &mut Stamp, p: PoolWrite<'_>) -> CliResult<PoolManifest> {
    prepare_pool_dir(p.dir)?;
    let base_path = p.dir.join(BASE_FILE);
    let base_info = save_model(p.base, &base_path)?;
    stamp.record(&ctx.out, &base_path)?;
    let mut members = Vec::with_capacity(p.members.len());
    let mut timings = Vec::with_capacity(p.members.len());
    for (c, fitness) in &p.members {
        let file = model_file(c.id);
        let path = p.dir.join(&file);
        let info = save_model(&c.params, &path)?;
        stamp.record(&ctx.out, &path)?;
        members.push(MemberRecord {
            id: c.id,
            file,
            hash: info.hash,
            accuracy: c.accuracy,
            fitness: *fitness,
            lineage: c.lineage.clone(),
        });
        timings.push(MemberTiming {
            id: c.id,
            seconds: c.seconds,
        });
    }
    let manifest = PoolManifest::new(
        BaseRecord {
            file: BASE_FILE.into(),
            hash: base_info.hash,
            accuracy: p.base_accuracy,
        },
        p.generator.config().clone(),
        p.evolution.cloned(),
        p.attempts,
        members,
        p.history,
        Timings {
            time_generated: p.time_generated,
            time_trained: p.time_trained,
            ratio: p.ratio,
            members: timings,
        },
    )?;
    let path = manifest.write(p.dir)?;
    stamp.record(&ctx.out, &path)?;
    Ok(manifest)
}

/// Training time recorded next to a base model, if any.
pub fn recorded_train_time(base_path: &Path) -> Option<f64> {
    let path = base_path.parent()?.join(TRAIN_FILE);
    let text = std::fs::read_to_string(path).ok()?;
    let record: TrainRecord = serde_json::from_str(&text).ok()?;
    Some(record.timings.time_trained)
}

#[derive(Clone, Debug)]
pub struct GenerateOutcome {
    pub dir: PathBuf,
    pub manifest: PoolManifest,
    pub candidates: Vec<Candidate>,
    /// Wall-clock seconds for the whole pool.
    pub time_generated: f64,
    /// Seconds to train one model, when recorded.
    pub time_trained: Option<f64>,
    /// Per-model generation time over per-model training time.
    pub ratio: Option<f64>,
}

pub fn cmd_generate(
    ctx: &Context,
    base: Option<&Path>,
    count: Option<usize>,
) -> CliResult<GenerateOutcome> {
    let mut stamp = Stamp::new("generate", &ctx.cfg);
    let data = load_data(&ctx.cfg.dataset)?;
    let spec = build_spec(&ctx.cfg.network, &data)?;
    let base_path = base
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.out.join(BASE_FILE));
    let params = load_model(&base_path)?;
    let count = count.unwrap_or(ctx.cfg.generator.count);
    if count == 0 {
        return Err(CliError::Config {
            section: "generator".into(),
            key: Some("count".into()),
            message: "count must be >= 1".into(),
        });
    }
    let generator = Generator::new(
        &spec,
        &params,
        ctx.cfg.generator.config.clone(),
        &data.validation,
    )?;
    ctx.note(format!(
        "generating {count} models (base validation accuracy {:.4})",
        generator.base_accuracy()
    ));
    let pool = generator.pool(count)?;

    let time_trained = recorded_train_time(&base_path);
    let per_model = pool.seconds / pool.candidates.len() as f64;
    let ratio = time_trained.map(|t| time_ratio(per_model, t)).transpose()?;
    let dir = ctx.out.join(POOL_DIR);
    let manifest = write_pool(
        ctx,
        &mut stamp,
        PoolWrite {
            dir: &dir,
            base: &params,
            base_accuracy: generator.base_accuracy(),
            generator: &generator,
            evolution: None,
            attempts: pool.attempts,
            members: pool.candidates.iter().map(|c| (c, None)).collect(),
            history: Vec::new(),
            time_generated: pool.seconds,
            time_trained,
            ratio,
        },
    )?;

    let table = time_table(&[(
        manifest.pool_id.clone(),
        manifest.members.len(),
        pool.seconds,
        time_trained,
    )]);
    ctx.write_table(&mut stamp, &dir, "ratio", &table)?;
    stamp.write(&ctx.out)?;
    ctx.note(format!(
        "accepted {} of {} attempts in {:.3}s",
        pool.candidates.len(),
        pool.attempts,
        pool.seconds
    ));
    Ok(GenerateOutcome {
        dir,
        manifest,
        candidates: pool.candidates,
        time_generated: pool.seconds,
        time_trained,
        ratio,
    })
}

/// Rows of `(pool, models, seconds generating all, seconds training one)`.
fn time_table(rows: &[(String, usize, f64, Option<f64>)]) -> Table {
    let mut table = Table::new(
        "time of generated vs trained models",
        &[
            "pool",
            "models",
            "time_generated_s",
            "time_trained_s",
            "ratio",
        ],
    );
    for (id, n, generated, trained) in rows {
        let trained_all = trained.map(|t| t * *n as f64);
        table.push(vec![
            id.clone(),
            n.to_string(),
            num(*generated),
            trained_all.map(num).unwrap_or_else(|| "-".into()),
            trained_all
                .filter(|t| *t > 0.0)
                .map(|t| pct(generated / t))
                .unwrap_or_else(|| "-".into()),
        ]);
    }
    table
}

#[derive(Clone, Debug)]
pub struct EvolveOutcome {
    pub dir: PathBuf,
    pub manifest: PoolManifest,
    pub seed_manifest: PoolManifest,
    pub outcome: EvolutionOutcome,
}

pub fn history_table(history: &[GenerationRecord]) -> Table {
    let mut table = Table::new(
        "evolution history",
        &[
            "generation",
            "max_f",
            "mean_f",
            "best_id",
            "evaluated",
            "survivors",
            "rejected_mutations",
            "rejected_fusions",
        ],
    );
    for r in history {
        table.push(vec![
            r.generation.to_string(),
            num(r.max_fitness),
            num(r.mean_fitness),
            r.best_id.to_string(),
            r.evaluated.to_string(),
            r.survivors.to_string(),
            r.rejected_mutations.to_string(),
            r.rejected_fusions.to_string(),
        ]);
    }
    table
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub id: u64,
    pub file: String,
    pub hash: String,
    pub accuracy: f64,
    pub fitness: Fitness,
}

pub fn cmd_evolve(ctx: &Context, base: Option<&Path>) -> CliResult<EvolveOutcome> {
    let mut stamp = Stamp::new("evolve", &ctx.cfg);
    let data = load_data(&ctx.cfg.dataset)?;
    let spec = build_spec(&ctx.cfg.network, &data)?;
    let base_path = base
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.out.join(BASE_FILE));
    let params = load_model(&base_path)?;
    let generator = Generator::new(
        &spec,
        &params,
        ctx.cfg.generator.config.clone(),
        &data.validation,
    )?;
    let fit = fitness_config(&ctx.cfg, &data)?;
    let ecfg = &ctx.cfg.evolution;
    ctx.note(format!(
        "evolving N={} n={} j={} m={}",
        ecfg.generations, ecfg.parents, ecfg.mutations, ecfg.fusions
    ));
    let outcome = evolve_with(&generator, ecfg, &fit)?;
    if ctx.verbose {
        for r in &outcome.history {
            eprintln!("{}", r.to_line());
        }
    }

    let dir = ctx.out.join(EVOLVE_DIR);
    let manifest = write_pool(
        ctx,
        &mut stamp,
        PoolWrite {
            dir: &dir,
            base: &params,
            base_accuracy: generator.base_accuracy(),
            generator: &generator,
            evolution: Some(ecfg),
            attempts: outcome.seed_attempts,
            members: outcome
                .population
                .members
                .iter()
                .map(|m| (&m.candidate, Some(m.fitness)))
                .collect(),
            history: outcome.history.clone(),
            time_generated: outcome.seconds,
            time_trained: None,
            ratio: None,
        },
    )?;
    let seed_dir = dir.join(SEED_DIR);
    let seed_manifest = write_pool(
        ctx,
        &mut stamp,
        PoolWrite {
            dir: &seed_dir,
            base: &params,
            base_accuracy: generator.base_accuracy(),
            generator: &generator,
            evolution: None,
            attempts: outcome.seed_attempts,
            members: outcome
                .seed_pool
                .iter()
                .map(|m| (&m.candidate, Some(m.fitness)))
                .collect(),
            history: Vec::new(),
            time_generated: outcome.seed_pool.iter().map(|m| m.candidate.seconds).sum(),
            time_trained: None,
            ratio: None,
        },
    )?;
    let best_path = dir.join("best.mgem");
    let info = save_model(&outcome.best.candidate.params, &best_path)?;
    stamp.record(&ctx.out, &best_path)?;
    let best = BestRecord {
        id: outcome.best.id(),
        file: "best.mgem".into(),
        hash: info.hash,
        accuracy: outcome.best.candidate.accuracy,
        fitness: outcome.best.fitness,
    };
    ctx.write_json(&mut stamp, &dir.join("best.json"), &best)?;
    ctx.write_table(
        &mut stamp,
        &dir,
        "history",
        &history_table(&outcome.history),
    )?;
    stamp.write(&ctx.out)?;
    Ok(EvolveOutcome {
        dir,
        manifest,
        seed_manifest,
        outcome,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustRow {
    pub id: String,
    /// One accuracy per configured budget.
    pub accuracies: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustTable {
    pub epsilons: Vec<f64>,
    pub examples: usize,
    /// The base model first, then every member.
    pub rows: Vec<RobustRow>,
}

impl RobustTable {
    pub fn to_table(&self) -> Table {
        let header: Vec<String> = std::iter::once("model".to_string())
            .chain(self.epsilons.iter().map(|e| format!("eps={e}")))
            .collect();
        let refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut table = Table::new(
            format!("robust accuracy ({} test examples)", self.examples),
            &refs,
        );
        for r in &self.rows {
            let mut row = vec![r.id.clone()];
            row.extend(r.accuracies.iter().map(|&a| num(a)));
            table.push(row);
        }
        table
    }
}

/// Contents of `attack.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub pool_id: String,
    pub transfer: TransferReport,
    pub robust: RobustTable,
}

#[derive(Clone, Debug)]
pub struct AttackOutcome {
    pub dir: PathBuf,
    pub record: AttackRecord,
}

/// A verified pool directory read back into memory.
pub struct LoadedPool {
    pub manifest: PoolManifest,
    pub base: ParamSet,
    /// Member ids with their parameters, in manifest order.
    pub members: Vec<(String, ParamSet)>,
}

pub fn load_pool(dir: &Path) -> CliResult<LoadedPool> {
    let manifest = PoolManifest::read(&dir.join(MANIFEST_FILE))?;
    manifest.verify(dir)?;
    let base_path = dir.join(&manifest.base.file);
    let base_bytes = std::fs::read(&base_path).map_err(|e| CliError::io(&base_path, e))?;
    if content_hash(&base_bytes) != manifest.base.hash {
        return Err(mge_core::MgeError::Corruption {
            path: base_path,
            message: "file hash differs from manifest".into(),
        }
        .into());
    }
    let base = mge_core::store::decode_model(&base_bytes, &base_path)?;
    let members = manifest
        .members
        .iter()
        .map(|m| Ok((m.id.to_string(), load_model(&dir.join(&m.file))?)))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(LoadedPool {
        manifest,
        base,
        members,
    })
}

pub fn cmd_attack(ctx: &Context, pool: Option<&Path>) -> CliResult<AttackOutcome> {
    let mut stamp = Stamp::new("attack", &ctx.cfg);
    let data = load_data(&ctx.cfg.dataset)?;
    let spec = build_spec(&ctx.cfg.network, &data)?;
    let pool_dir = pool
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.out.join(POOL_DIR));
    let LoadedPool {
        manifest,
        base,
        members,
    } = load_pool(&pool_dir)?;
    if members.is_empty() {
        return Err(CliError::Usage(format!(
            "pool {} has no members to attack",
            pool_dir.display()
        )));
    }
    let attack = &ctx.cfg.attack;
    let sample = data.test.head(attack.transfer_examples);
    ctx.note(format!(
        "transfer attack on {} members, eps={}, {} examples",
        members.len(),
        attack.transfer_epsilon,
        sample.len()
    ));
    let transfer = transfer_matrix(
        &spec,
        ("base", &base),
        &members,
        &sample,
        attack.transfer_epsilon,
        attack.targeted,
    )?;

    let robust_data = attack
        .robust_examples
        .map(|n| data.test.head(n))
        .unwrap_or_else(|| (*data.test).clone());
    let mut rows = Vec::with_capacity(members.len() + 1);
    for (id, params) in std::iter::once(("base".to_string(), &base))
        .chain(members.iter().map(|(i, p)| (i.clone(), p)))
    {
        let accuracies = attack
            .epsilons
            .iter()
            .map(|&e| robust_accuracy(&spec, params, &robust_data, e))
            .collect::<mge_core::Result<Vec<_>>>()?;
        rows.push(RobustRow { id, accuracies });
    }
    let robust = RobustTable {
        epsilons: attack.epsilons.clone(),
        examples: robust_data.len(),
        rows,
    };

    let dir = ctx.out.join(ATTACK_DIR).join(&manifest.pool_id);
    ctx.write(&mut stamp, &dir.join("transfer.csv"), &transfer.to_csv())?;
    ctx.write(&mut stamp, &dir.join("transfer.txt"), &transfer.to_text())?;
    ctx.write_table(&mut stamp, &dir, "robust", &robust.to_table())?;
    let record = AttackRecord {
        pool_id: manifest.pool_id.clone(),
        transfer,
        robust,
    };
    ctx.write_json(&mut stamp, &dir.join(ATTACK_FILE), &record)?;
    stamp.write(&ctx.out)?;
    Ok(AttackOutcome { dir, record })
}

#[derive(Clone, Debug)]
pub struct ReportOutcome {
    pub text: String,
    /// Pools that had no members.
    pub empty: Vec<String>,
    pub tables: Vec<Table>,
}

pub fn empty_pool_notice(dir: &Path, pool_id: &str) -> String {
    format!(
        "notice: pool {pool_id} at {} is empty; nothing to report",
        dir.display()
    )
}

fn mean(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn cmd_report(ctx: &Context, pools: &[PathBuf]) -> CliResult<ReportOutcome> {
    let mut stamp = Stamp::new("report", &ctx.cfg);
    let pools: Vec<PathBuf> = if pools.is_empty() {
        [POOL_DIR, EVOLVE_DIR]
            .iter()
            .map(|d| ctx.out.join(d))
            .filter(|d| d.join(MANIFEST_FILE).exists())
            .collect()
    } else {
        pools.to_vec()
    };
    if pools.is_empty() {
        return Err(CliError::Usage(format!(
            "no pools given and none found under {}",
            ctx.out.display()
        )));
    }

    let mut accuracy = Table::new(
        "classification accuracy of trained vs generated models (test split)",
        &[
            "pool",
            "kind",
            "models",
            "trained",
            "generated_mean",
            "generated_min",
            "generated_max",
            "gap_pp",
        ],
    );
    let mut times = Vec::new();
    let mut robustness = Table::new(
        "robust accuracy: base vs pool",
        &["pool", "epsilon", "base", "pool_mean", "pool_best"],
    );
    let mut history = Table::new(
        "evolution history",
        &["pool", "generation", "max_f", "mean_f", "best_id"],
    );
    let mut empty = Vec::new();
    let mut notices = Vec::new();
    let mut data_spec = None;

    for dir in &pools {
        let manifest = PoolManifest::read(&dir.join(MANIFEST_FILE))?;
        if manifest.members.is_empty() {
            notices.push(empty_pool_notice(dir, &manifest.pool_id));
            empty.push(manifest.pool_id.clone());
            continue;
        }
        if data_spec.is_none() {
            let data = load_data(&ctx.cfg.dataset)?;
            let spec = build_spec(&ctx.cfg.network, &data)?;
            data_spec = Some((data, spec));
        }
        let (data, spec) = data_spec.as_ref().expect("loaded");
        let LoadedPool {
            manifest,
            base,
            members,
        } = load_pool(dir)?;
        let trained = evaluate_accuracy(spec, &base, &data.test)?;
        let accs = members
            .iter()
            .map(|(_, p)| evaluate_accuracy(spec, p, &data.test))
            .collect::<mge_core::Result<Vec<_>>>()?;
        let m = mean(&accs);
        let kind = if manifest.evolution.is_some() {
            "evolved"
        } else {
            "generated"
        };
        accuracy.push(vec![
            manifest.pool_id.clone(),
            kind.into(),
            members.len().to_string(),
            pct(trained),
            pct(m),
            pct(accs.iter().copied().fold(f64::INFINITY, f64::min)),
            pct(accs.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            format!("{:.2}", (m - trained) * 100.0),
        ]);
        if manifest.evolution.is_none() {
            times.push((
                manifest.pool_id.clone(),
                members.len(),
                manifest.timings.time_generated,
                manifest.timings.time_trained,
            ));
        }
        let attack_path = ctx
            .out
            .join(ATTACK_DIR)
            .join(&manifest.pool_id)
            .join(ATTACK_FILE);
        if let Ok(text) = std::fs::read_to_string(&attack_path) {
            let record: AttackRecord =
                serde_json::from_str(&text).map_err(|e| mge_core::MgeError::Corruption {
                    path: attack_path.clone(),
                    message: e.to_string(),
                })?;
            for (k, eps) in record.robust.epsilons.iter().enumerate() {
                let base_row = &record.robust.rows[0];
                let member_accs: Vec<f64> = record.robust.rows[1..]
                    .iter()
                    .map(|r| r.accuracies[k])
                    .collect();
                robustness.push(vec![
                    manifest.pool_id.clone(),
                    eps.to_string(),
                    pct(base_row.accuracies[k]),
                    pct(mean(&member_accs)),
                    pct(member_accs
                        .iter()
                        .copied()
                        .fold(f64::NEG_INFINITY, f64::max)),
                ]);
            }
        }
        for r in &manifest.history {
            history.push(vec![
                manifest.pool_id.clone(),
                r.generation.to_string(),
                num(r.max_fitness),
                num(r.mean_fitness),
                r.best_id.to_string(),
            ]);
        }
    }

    let dir = ctx.out.join(REPORT_DIR);
    let mut tables = Vec::new();
    let mut text = String::new();
    for n in &notices {
        text.push_str(n);
        text.push('\n');
    }
    let named = [
        ("accuracy", accuracy),
        ("time", time_table(&times)),
        ("robustness", robustness),
        ("history", history),
    ];
    for (stem, table) in named {
        if table.rows.is_empty() {
            continue;
        }
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str(&table.to_text());
        ctx.write(
            &mut stamp,
            &dir.join(format!("{stem}.csv")),
            &table.to_csv(),
        )?;
        tables.push(table);
    }
    ctx.write(&mut stamp, &dir.join("report.txt"), &text)?;
    stamp.write(&ctx.out)?;
    Ok(ReportOutcome {
        text,
        empty,
        tables,
    })
}
