//! Numeric primitives: the orthonormal DCT-II pair, spectral energy
//! accounting, bounded sampling, distribution statistics and seeded
//! random streams.

mod dct;
mod energy;
mod rng;
mod stats;

pub use dct::{dct2, idct2};
pub use energy::{cumulative_energy, energy_order};
pub use rng::{mix_seed, RngStream};
pub use stats::{
    ks_statistic, sample_bounded_normal, truncated_normal, LatentDistribution, MAX_LATENT_BOUND,
};

use crate::error::{MgeError, Result};

pub(crate) fn ensure_finite(x: &[f64], what: &str) -> Result<()> {
    if x.is_empty() {
        return Err(MgeError::invalid(format!("{what}: empty vector")));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(MgeError::invalid(format!(
            "{what}: non-finite value {} at index {i}",
            x[i]
        )));
    }
    Ok(())
}

/// Number of items a fraction of `len` selects, rounded up.
///
/// A tiny slack keeps products such as `0.1 * 150` (which is
/// `15.000000000000002` in binary) from rounding up to an extra item.
pub fn count_for_fraction(fraction: f64, len: usize) -> usize {
    let raw = fraction * len as f64;
    let count = (raw - 1e-9).ceil().max(0.0) as usize;
    count.min(len)
}
