use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{MgeError, Result};
use crate::tensor::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Labelled examples with features stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    feature_shape: Vec<usize>,
    labels: Vec<usize>,
    classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        feature_shape: Vec<usize>,
        labels: Vec<usize>,
        classes: usize,
        split: Split,
    ) -> Result<Self> {
        let width: usize = feature_shape.iter().product();
        if labels.is_empty() {
            return Err(MgeError::invalid("dataset has no examples"));
        }
        if width == 0 || features.len() != width * labels.len() {
            return Err(MgeError::structural(format!(
                "{} feature values do not fit {} examples of shape {feature_shape:?}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(MgeError::invalid(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(MgeError::invalid("non-finite feature value"));
        }
        Ok(Dataset {
            features,
            feature_shape,
            labels,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_len(&self) -> usize {
        self.feature_shape.iter().product()
    }

    pub fn feature_shape(&self) -> &[usize] {
        &self.feature_shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self, i: usize) -> &[f64] {
        let w = self.feature_len();
        &self.features[i * w..(i + 1) * w]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn example(&self, i: usize) -> (&[f64], usize) {
        (self.features(i), self.labels[i])
    }

    /// Examples at the given indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len() * self.feature_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(MgeError::invalid(format!("example index {i} out of range")));
            }
            features.extend_from_slice(self.features(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(
            features,
            self.feature_shape.clone(),
            labels,
            self.classes,
            self.split,
        )
    }

    /// The first `n` examples (or all of them if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len()).max(1);
        let idx: Vec<usize> = (0..n).collect();
        self.subset(&idx).expect("in-range prefix")
    }

    pub fn with_split(mut self, split: Split) -> Dataset {
        self.split = split;
        self
    }

    /// Splits off the last `n` examples as a separate dataset.
    pub fn split_off(&self, n: usize, split: Split) -> Result<(Dataset, Dataset)> {
        if n == 0 || n >= self.len() {
            return Err(MgeError::invalid(format!(
                "cannot split {n} of {} examples",
                self.len()
            )));
        }
        let keep: Vec<usize> = (0..self.len() - n).collect();
        let rest: Vec<usize> = (self.len() - n..self.len()).collect();
        Ok((self.subset(&keep)?, self.subset(&rest)?.with_split(split)))
    }

    pub fn class_frequency(&self, class: usize) -> f64 {
        self.labels.iter().filter(|&&l| l == class).count() as f64 / self.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Gaussian clusters around fixed centers.
    Blobs,
    /// Two interleaved half circles (always 2 classes, 2 features).
    Moons,
}

/// Parameters of a synthetic dataset. All features land in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n: usize,
    pub classes: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
    pub seed: u64,
}

fn default_dim() -> usize {
    2
}

fn default_noise() -> f64 {
    0.05
}

impl SyntheticSpec {
    /// Blob centers depend only on `(classes, dim)`, so splits drawn with
    /// different seeds share the same class layout.
    pub fn blob_centers(classes: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..classes)
            .map(|c| {
                let theta = 2.0 * PI * c as f64 / classes as f64;
                (0..dim)
                    .map(|i| {
                        let phase = match i {
                            0 => 0.0,
                            1 => PI / 2.0,
                            _ => i as f64 * 2.399_963_229_728_653,
                        };
                        0.5 + 0.3 * (theta + phase).cos()
                    })
                    .collect()
            })
            .collect()
    }

    pub fn generate(&self, split: Split) -> Result<Dataset> {
        if self.classes < 2 || self.n < self.classes {
            return Err(MgeError::config(format!(
                "synthetic data needs n >= classes >= 2 (n={}, classes={})",
                self.n, self.classes
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(MgeError::config(format!(
                "noise must be >= 0, got {}",
                self.noise
            )));
        }
        let mut rng = RngStream::new(self.seed);
        let labels: Vec<usize> = (0..self.n).map(|k| k % self.classes).collect();
        let noise = if self.noise > 0.0 {
            Some(Normal::new(0.0, self.noise).expect("valid sigma"))
        } else {
            None
        };
        let jitter = |rng: &mut RngStream| noise.map_or(0.0, |d| d.sample(rng));

        let (dim, features) = match self.kind {
            SyntheticKind::Blobs => {
                if self.dim == 0 {
                    return Err(MgeError::config("blob dimension must be >= 1"));
                }
                let centers = Self::blob_centers(self.classes, self.dim);
                let mut features = Vec::with_capacity(self.n * self.dim);
                for &l in &labels {
                    for &c in &centers[l] {
                        features.push((c + jitter(&mut rng)).clamp(0.0, 1.0));
                    }
                }
                (self.dim, features)
            }
            SyntheticKind::Moons => {
                if self.classes != 2 {
                    return Err(MgeError::config("moons data has exactly 2 classes"));
                }
                let mut features = Vec::with_capacity(self.n * 2);
                for &l in &labels {
                    let t = rng.random_range(0.0..PI);
                    let (x, y) = if l == 0 {
                        (t.cos(), t.sin())
                    } else {
                        (1.0 - t.cos(), 0.5 - t.sin())
                    };
                    let x = (x + jitter(&mut rng) + 1.25) / 3.5;
                    let y = (y + jitter(&mut rng) + 0.85) / 2.2;
                    features.push(x.clamp(0.0, 1.0));
                    features.push(y.clamp(0.0, 1.0));
                }
                (2, features)
            }
        };
        Dataset::new(features, vec![dim], labels, self.classes, split)
    }
}

/// Class-balanced synthetic data with default dimension and noise.
pub fn make_synthetic(kind: SyntheticKind, n: usize, classes: usize, seed: u64) -> Result<Dataset> {
    SyntheticSpec {
        kind,
        n,
        classes,
        dim: default_dim(),
        noise: default_noise(),
        seed,
    }
    .generate(Split::Train)
}
