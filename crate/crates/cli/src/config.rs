//! Run configuration: a TOML document with one table per pipeline stage.
//! Every section is optional; omitted keys take their defaults, and the
//! resolved document is echoed into each run's stamp.

use std::path::{Path, PathBuf};

use mge_core::evolution::EvolutionConfig;
use mge_core::nn::{LayerKind, SyntheticKind, TrainConfig};
use mge_core::{CriterionKind, GeneratorConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SECTIONS: [&str; 8] = [
    "dataset",
    "network",
    "train",
    "generator",
    "evolution",
    "fitness",
    "attack",
    "output",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Blobs,
    Moons,
    /// MNIST-layout IDX files in `path`.
    Idx,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: DatasetKind,
    pub classes: usize,
    pub dim: usize,
    pub noise: f64,
    /// Noise of the alternate distribution; twice `noise` when unset.
    pub alternate_noise: Option<f64>,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    /// Split `k` (train, validation, test, alternate) uses `seed + k`.
    pub seed: u64,
    pub path: Option<PathBuf>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            kind: DatasetKind::Blobs,
            classes: 4,
            dim: 10,
            noise: 0.15,
            alternate_noise: None,
            train: 2000,
            validation: 500,
            test: 500,
            seed: 1,
            path: None,
        }
    }
}

impl DatasetSection {
    pub fn synthetic_kind(&self) -> Option<SyntheticKind> {
        match self.kind {
            DatasetKind::Blobs => Some(SyntheticKind::Blobs),
            DatasetKind::Moons => Some(SyntheticKind::Moons),
            DatasetKind::Idx => None,
        }
    }

    fn validate(&self) -> Result<(), String> {
        for (key, v) in [
            ("train", self.train),
            ("validation", self.validation),
            ("test", self.test),
        ] {
            if v == 0 {
                return Err(format!("{key} must be >= 1"));
            }
        }
        if self.kind == DatasetKind::Idx && self.path.is_none() {
            return Err("path is required when kind = \"idx\"".into());
        }
        if let Some(a) = self.alternate_noise {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(format!("alternate_noise must be finite and >= 0, got {a}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    Mlp,
    Lenet,
    /// An explicit layer list.
    Layers,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub kind: NetworkKind,
    /// Hidden widths of an MLP.
    pub hidden: Vec<usize>,
    pub layers: Vec<LayerKind>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            kind: NetworkKind::Mlp,
            hidden: vec![32, 32],
            layers: Vec::new(),
        }
    }
}

impl NetworkSection {
    fn validate(&self) -> Result<(), String> {
        if self.kind == NetworkKind::Layers && self.layers.is_empty() {
            return Err("layers must be non-empty when kind = \"layers\"".into());
        }
        if self.hidden.contains(&0) {
            return Err("hidden widths must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneratorSection {
    /// Models per generated pool.
    pub count: usize,
    #[serde(flatten)]
    pub config: GeneratorConfig,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        GeneratorSection {
            count: 10,
            config: GeneratorConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitnessSection {
    pub gamma: f64,
    /// Additional criterion; robustness and accuracy are scored on the
    /// validation split, transfer accuracy on the alternate split.
    pub additional: CriterionKind,
}

impl Default for FitnessSection {
    fn default() -> Self {
        FitnessSection {
            gamma: 1.0,
            additional: CriterionKind::RobustAccuracy { epsilon: 0.1 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    /// Budgets of the robust-accuracy table.
    pub epsilons: Vec<f64>,
    pub transfer_epsilon: f64,
    pub transfer_examples: usize,
    pub targeted: bool,
    /// Test examples per robust-accuracy cell; the whole split when unset.
    pub robust_examples: Option<usize>,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            epsilons: vec![0.01, 0.1, 1.0],
            transfer_epsilon: 0.2,
            transfer_examples: 100,
            targeted: true,
            robust_examples: None,
        }
    }
}

impl AttackSection {
    fn validate(&self) -> Result<(), String> {
        if self.epsilons.is_empty() {
            return Err("epsilons must be non-empty".into());
        }
        for &e in self.epsilons.iter().chain([&self.transfer_epsilon]) {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(format!("epsilons must be finite and >= 0, got {e}"));
            }
        }
        if self.transfer_examples == 0 {
            return Err("transfer_examples must be >= 1".into());
        }
        if self.robust_examples == Some(0) {
            return Err("robust_examples must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub network: NetworkSection,
    pub train: TrainConfig,
    pub generator: GeneratorSection,
    pub evolution: EvolutionConfig,
    pub fitness: FitnessSection,
    pub attack: AttackSection,
    pub output: OutputSection,
}

fn config_error(section: &str, key: Option<String>, message: impl Into<String>) -> CliError {
    CliError::Config {
        section: section.to_string(),
        key,
        message: message.into(),
    }
}

/// The key a validation message is about: its leading snake_case word.
fn leading_key(message: &str) -> Option<String> {
    let word = message.split_whitespace().next()?;
    word.chars()
        .all(|c| c.is_ascii_lowercase() || c == '_')
        .then(|| word.to_string())
}

/// The first backquoted name in a deserializer message.
fn quoted_key(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(message[start..start + len].to_string())
}

fn section<T: DeserializeOwned + Default>(
    table: &mut toml::Table,
    name: &str,
) -> Result<T, CliError> {
    let Some(value) = table.remove(name) else {
        return Ok(T::default());
    };
    if !value.is_table() {
        return Err(config_error(
            name,
            None,
            format!("[{name}] must be a table"),
        ));
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let message = e.inner().to_string().trim_end().to_string();
        let key = if path.is_empty() || path == "." {
            quoted_key(&message)
        } else {
            Some(path)
        };
        config_error(name, key, message)
    })
}

fn checked(section: &str, r: mge_core::Result<()>) -> Result<(), CliError> {
    r.map_err(|e| {
        let message = match e {
            mge_core::MgeError::ConfigRange(m) => m,
            other => other.to_string(),
        };
        config_error(section, leading_key(&message), message)
    })
}

fn checked_local(section: &str, r: Result<(), String>) -> Result<(), CliError> {
    r.map_err(|m| config_error(section, leading_key(&m), m))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| config_error("", None, e.message().to_string()))?;
        if let Some(unknown) = table.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            return Err(config_error(
                unknown,
                None,
                format!(
                    "unknown section `{unknown}`, expected one of {}",
                    SECTIONS.join(", ")
                ),
            ));
        }

        let mut generator_table = match table.remove("generator") {
            Some(toml::Value::Table(t)) => t,
            Some(_) => {
                return Err(config_error(
                    "generator",
                    None,
                    "[generator] must be a table",
                ))
            }
            None => toml::Table::new(),
        };
        let count = match generator_table.remove("count") {
            None => GeneratorSection::default().count,
            Some(v) => v
                .as_integer()
                .and_then(|c| usize::try_from(c).ok())
                .ok_or_else(|| {
                    config_error(
                        "generator",
                        Some("count".into()),
                        "count must be a non-negative integer",
                    )
                })?,
        };
        table.insert("generator".into(), toml::Value::Table(generator_table));

        let cfg = RunConfig {
            dataset: section(&mut table, "dataset")?,
            network: section(&mut table, "network")?,
            train: section(&mut table, "train")?,
            generator: GeneratorSection {
                count,
                config: section(&mut table, "generator")?,
            },
            evolution: section(&mut table, "evolution")?,
            fitness: section(&mut table, "fitness")?,
            attack: section(&mut table, "attack")?,
            output: section(&mut table, "output")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        checked_local("dataset", self.dataset.validate())?;
        checked_local("network", self.network.validate())?;
        checked("train", self.train.validate())?;
        checked("generator", self.generator.config.validate())?;
        if self.generator.count == 0 {
            return Err(config_error(
                "generator",
                Some("count".into()),
                "count must be >= 1",
            ));
        }
        checked("evolution", self.evolution.validate())?;
        if !(self.fitness.gamma >= 0.0 && self.fitness.gamma.is_finite()) {
            return Err(config_error(
                "fitness",
                Some("gamma".into()),
                format!("gamma must be finite and >= 0, got {}", self.fitness.gamma),
            ));
        }
        if let CriterionKind::RobustAccuracy { epsilon } = self.fitness.additional {
            if !(epsilon > 0.0 && epsilon.is_finite()) {
                return Err(config_error(
                    "fitness",
                    Some("additional.epsilon".into()),
                    format!("epsilon must be finite and > 0, got {epsilon}"),
                ));
            }
        }
        checked_local("attack", self.attack.validate())
    }

    /// Replaces the training, generation and evolution seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.generator.config.seed = seed;
        self.evolution.seed = seed;
        self
    }

    /// The fully resolved document, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
