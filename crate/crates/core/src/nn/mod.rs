//! A small from-scratch classifier substrate: dense and convolutional
//! layers, softmax cross-entropy, SGD/Adam training, and dataset ingestion.

mod data;
mod idx;
mod network;
mod params;
mod spec;
mod train;

pub use data::{make_synthetic, Dataset, Split, SyntheticKind, SyntheticSpec};
pub use idx::{
    load_idx, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels, IdxImages,
};
pub use network::{
    argmax, evaluate_accuracy, forward, input_gradient, softmax, softmax_cross_entropy, Gradients,
    Network,
};
pub use params::{LayerParams, ParamSet};
pub use spec::{LayerKind, NetworkSpec};
pub use train::{mean_loss, train, Optimizer, TrainConfig, TrainReport};
