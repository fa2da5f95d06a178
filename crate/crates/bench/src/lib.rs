//! Shared fixtures for the benchmarks.

use mge_core::nn::{train, Optimizer, SyntheticKind, SyntheticSpec};
use mge_core::{Dataset, NetworkSpec, ParamSet, Split, TrainConfig};

/// A trained 10-32-32-4 MLP on 4-class blobs with its validation split.
pub struct Fixture {
    pub spec: NetworkSpec,
    pub base: ParamSet,
    pub val: Dataset,
}

fn blobs(n: usize, seed: u64, split: Split) -> Dataset {
    SyntheticSpec {
        kind: SyntheticKind::Blobs,
        n,
        classes: 4,
        dim: 10,
        noise: 0.15,
        seed,
    }
    .generate(split)
    .expect("valid blobs")
}

pub fn desk_fixture() -> Fixture {
    let spec = NetworkSpec::mlp(10, &[32, 32], 4).expect("valid spec");
    let cfg = TrainConfig {
        optimizer: Optimizer::Adam,
        learning_rate: 0.01,
        epochs: 20,
        batch_size: 32,
        seed: 4,
        ..TrainConfig::default()
    };
    let report = train(&spec, &blobs(2000, 1, Split::Train), &cfg).expect("training converges");
    Fixture {
        spec,
        base: report.params.quantized(),
        val: blobs(500, 2, Split::Validation),
    }
}
