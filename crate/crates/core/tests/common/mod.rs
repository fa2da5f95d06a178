//! Small trained classifier shared by the integration tests.

#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use mge_core::nn::{
    train, Dataset, NetworkSpec, Optimizer, ParamSet, Split, SyntheticKind, SyntheticSpec,
    TrainConfig,
};

pub struct Fixture {
    pub spec: NetworkSpec,
    pub base: ParamSet,
    pub train_seconds: f64,
    pub val: Arc<Dataset>,
    pub test: Arc<Dataset>,
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
    .unwrap()
}

pub fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let spec = NetworkSpec::mlp(10, &[32, 32], 4).unwrap();
        let cfg = TrainConfig {
            optimizer: Optimizer::Adam,
            learning_rate: 0.01,
            epochs: 20,
            batch_size: 32,
            seed: 5,
            ..TrainConfig::default()
        };
        let report = train(&spec, &blobs(800, 1, Split::Train), &cfg).unwrap();
        Fixture {
            spec,
            base: report.params,
            train_seconds: report.seconds,
            val: Arc::new(blobs(300, 2, Split::Validation)),
            test: Arc::new(blobs(300, 3, Split::Test)),
        }
    })
}
