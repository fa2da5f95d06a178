//! Spectral diagnostics of a trained model: zero-fill decay curves,
//! positional frequency-band sensitivity, and spatial masks of unimportant
//! parameters.

use serde::{Deserialize, Serialize};

use crate::error::{MgeError, Result};
use crate::nn::{evaluate_accuracy, Dataset, NetworkSpec, ParamSet};
use crate::tensor::{
    count_for_fraction, cumulative_energy, dct2, idct2, truncated_normal, RngStream,
};

/// Positional DCT band: the index range is split into thirds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Low,
    Mid,
    High,
}

impl Band {
    pub fn range(self, n: usize) -> std::ops::Range<usize> {
        let (a, b) = (n / 3, 2 * n / 3);
        match self {
            Band::Low => 0..a,
            Band::Mid => a..b,
            Band::High => b..n,
        }
    }
}

/// Indices of the `k` smallest values, ties by lower index.
fn smallest_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    idx.truncate(k);
    idx
}

/// Indices of the `k` largest values, ties by lower index.
fn largest_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    idx.truncate(k);
    idx
}

/// Zeroes the lowest-magnitude `fraction` of the chosen band's DCT
/// coefficients, transforms back, and marks the `fraction` of parameter
/// positions that moved most as unimportant.
pub fn unimportant_mask_spatial(layer: &[f64], band: Band, fraction: f64) -> Result<Vec<bool>> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(MgeError::config(format!(
            "fraction must lie in [0, 1), got {fraction}"
        )));
    }
    let n = layer.len();
    let mut coeffs = dct2(layer)?;
    if coeffs.iter().all(|&c| c == 0.0) {
        return Err(MgeError::DegenerateSpectrum);
    }
    let range = band.range(n);
    let band_mag: Vec<f64> = coeffs[range.clone()].iter().map(|c| c.abs()).collect();
    // coefficients at round-off level relative to the spectrum count as zero
    let floor = 1e-12 * coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
    let mut changed = false;
    for i in smallest_k(&band_mag, count_for_fraction(fraction, band_mag.len())) {
        changed |= band_mag[i] > floor;
        coeffs[range.start + i] = 0.0;
    }
    // an already-zero band leaves the layer exactly as it was
    let delta: Vec<f64> = if changed {
        let rebuilt = idct2(&coeffs)?;
        rebuilt
            .iter()
            .zip(layer)
            .map(|(a, b)| (a - b).abs())
            .collect()
    } else {
        vec![0.0; n]
    };
    let mut mask = vec![false; n];
    for i in largest_k(&delta, count_for_fraction(fraction, n)) {
        mask[i] = true;
    }
    Ok(mask)
}

/// Zeroes the `fraction` of lowest-energy DCT coefficients of one tensor.
/// A zero count returns the tensor untouched (no transform round trip).
pub fn zero_fill_layer(layer: &[f64], fraction: f64) -> Result<Vec<f64>> {
    let k = count_for_fraction(fraction, layer.len());
    if k == 0 {
        return Ok(layer.to_vec());
    }
    let mut coeffs = dct2(layer)?;
    let energy: Vec<f64> = coeffs.iter().map(|c| c * c).collect();
    for i in smallest_k(&energy, k) {
        coeffs[i] = 0.0;
    }
    idct2(&coeffs)
}

fn validate_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(MgeError::config("fill fractions must lie in [0, 1]"));
    }
    if fractions.windows(2).any(|w| w[0] > w[1]) {
        return Err(MgeError::config("fill fractions must be sorted ascending"));
    }
    Ok(())
}

/// Accuracy after zero-filling each fraction of every tensor's
/// lowest-energy coefficients.
pub fn zero_fill_decay(
    base: &ParamSet,
    spec: &NetworkSpec,
    testset: &Dataset,
    fractions: &[f64],
) -> Result<Vec<(f64, f64)>> {
    validate_fractions(fractions)?;
    fractions
        .iter()
        .map(|&f| {
            let mut params = base.clone();
            for layer in params.layers_mut() {
                layer.values = zero_fill_layer(&layer.values, f)?;
            }
            Ok((f, evaluate_accuracy(spec, &params.quantized(), testset)?))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandAccuracy {
    /// Band bounds as fractions of the coefficient index range.
    pub lo: f64,
    pub hi: f64,
    pub accuracy: f64,
}

/// Adds bounded noise of the given scale to the coefficients of every
/// tensor whose index lies in `[lo·n, hi·n)`, one band at a time.
pub fn band_sensitivity(
    base: &ParamSet,
    spec: &NetworkSpec,
    testset: &Dataset,
    bands: &[(f64, f64)],
    scale: f64,
    seed: u64,
) -> Result<Vec<BandAccuracy>> {
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(MgeError::config(format!(
            "perturbation scale must be >= 0, got {scale}"
        )));
    }
    for &(lo, hi) in bands {
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(MgeError::config(format!("invalid band ({lo}, {hi})")));
        }
    }
    let mut sorted = bands.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    if sorted.windows(2).any(|w| w[1].0 < w[0].1) {
        return Err(MgeError::config("bands must be disjoint"));
    }

    let root = RngStream::new(seed);
    bands
        .iter()
        .enumerate()
        .map(|(b, &(lo, hi))| {
            let mut params = base.clone();
            if scale > 0.0 {
                for (t, layer) in params.layers_mut().iter_mut().enumerate() {
                    let n = layer.len();
                    let range = (lo * n as f64).floor() as usize..(hi * n as f64).floor() as usize;
                    if range.is_empty() {
                        continue;
                    }
                    let mut coeffs = dct2(&layer.values)?;
                    let mut rng = root.derive2(b as u64, t as u64);
                    let noise = truncated_normal(scale, range.len(), &mut rng);
                    for (c, e) in coeffs[range].iter_mut().zip(noise) {
                        *c += e;
                    }
                    layer.values = idct2(&coeffs)?;
                }
            }
            Ok(BandAccuracy {
                lo,
                hi,
                accuracy: evaluate_accuracy(spec, &params.quantized(), testset)?,
            })
        })
        .collect()
}

/// Cumulative energy curve of every parameter tensor, by name.
pub fn energy_curves(params: &ParamSet) -> Result<Vec<(String, Vec<f64>)>> {
    params
        .layers()
        .iter()
        .map(|l| Ok((l.name.clone(), cumulative_energy(&dct2(&l.values)?)?)))
        .collect()
}
