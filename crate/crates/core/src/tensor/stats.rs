use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ensure_finite, RngStream};
use crate::error::{MgeError, Result};

/// Largest admissible latent bound.
pub const MAX_LATENT_BOUND: f64 = 0.2;

/// Source distribution for resampled coefficients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentDistribution {
    /// Zero-mean normal with σ = z/3, rejection-resampled into [-z, z].
    #[default]
    TruncatedNormal,
    /// Uniform on [-z, z].
    Uniform,
}

impl LatentDistribution {
    pub fn sample(self, z: f64, count: usize, rng: &mut RngStream) -> Vec<f64> {
        match self {
            LatentDistribution::TruncatedNormal => truncated_normal(z, count, rng),
            LatentDistribution::Uniform => {
                if z == 0.0 {
                    return vec![0.0; count];
                }
                (0..count).map(|_| rng.random_range(-z..=z)).collect()
            }
        }
    }
}

/// Zero-mean normal draws with σ = bound/3, each rejection-resampled into
/// `[-bound, bound]`. No range check on `bound` beyond non-negativity;
/// a zero bound yields zeros.
pub fn truncated_normal(bound: f64, count: usize, rng: &mut RngStream) -> Vec<f64> {
    if bound <= 0.0 {
        return vec![0.0; count];
    }
    let normal = Normal::new(0.0, bound / 3.0).expect("positive finite sigma");
    (0..count)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= bound {
                break v;
            }
        })
        .collect()
}

/// Latent draws for unimportant coefficients, bounded to `[-z, z]`.
pub fn sample_bounded_normal(z: f64, count: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    if !(z > 0.0 && z <= MAX_LATENT_BOUND) {
        return Err(MgeError::config(format!(
            "latent_bound must lie in (0, {MAX_LATENT_BOUND}], got {z}"
        )));
    }
    if count == 0 {
        return Err(MgeError::config("sample count must be at least 1"));
    }
    Ok(truncated_normal(z, count, rng))
}

/// Two-sample Kolmogorov–Smirnov statistic: the largest gap between the
/// empirical CDFs of `a` and `b`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    ensure_finite(a, "ks_statistic first sample")?;
    ensure_finite(b, "ks_statistic second sample")?;
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);

    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}
