//! Training-free model generation and evolutionary enhancement.
//!
//! A trained network's per-layer parameters are mapped to the frequency
//! domain with an orthonormal DCT-II. Coefficients carrying the top `t` of
//! each layer's spectral energy are kept; the rest are resampled from a
//! bounded normal distribution and the layer is transformed back. Each
//! candidate is accepted only if its validation accuracy stays within `ε`
//! of the base model (or beats it). An evolutionary loop then mutates,
//! fuses and selects accepted candidates against a combined fitness.

pub mod adversarial;
pub mod analysis;
pub mod error;
pub mod evolution;
pub mod fitness;
pub mod generator;
pub mod nn;
pub mod store;
pub mod tensor;

pub use error::{MgeError, Result};
pub use evolution::{EvolutionConfig, EvolutionOutcome, Member};
pub use fitness::{Criterion, CriterionKind, Fitness, FitnessConfig};
pub use generator::{Candidate, Generator, GeneratorConfig, Lineage, Origin};
pub use nn::{Dataset, LayerKind, NetworkSpec, ParamSet, Split, TrainConfig};
pub use store::PoolManifest;
pub use tensor::RngStream;
