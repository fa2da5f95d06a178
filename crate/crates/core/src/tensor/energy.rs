use super::ensure_finite;
use crate::error::{MgeError, Result};

/// Coefficient indices in descending squared magnitude, ties by lower index.
pub fn energy_order(c: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..c.len()).collect();
    // stable sort keeps lower indices first among equal energies
    order.sort_by(|&a, &b| (c[b] * c[b]).total_cmp(&(c[a] * c[a])));
    order
}

/// Running fraction of total energy over coefficients sorted by
/// descending squared magnitude. The last entry is exactly 1.0.
pub fn cumulative_energy(c: &[f64]) -> Result<Vec<f64>> {
    ensure_finite(c, "cumulative_energy input")?;
    let order = energy_order(c);
    let mut prefix = Vec::with_capacity(c.len());
    let mut acc = 0.0;
    for &i in &order {
        acc += c[i] * c[i];
        prefix.push(acc);
    }
    let total = acc;
    if total == 0.0 {
        return Err(MgeError::DegenerateSpectrum);
    }
    let mut out: Vec<f64> = prefix.into_iter().map(|p| p / total).collect();
    if let Some(last) = out.last_mut() {
        *last = 1.0;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_nonzero() {
        assert_eq!(
            cumulative_energy(&[2.0, 0.0, 0.0]).unwrap(),
            vec![1.0, 1.0, 1.0]
        );
    }

    #[test]
    fn symmetric_pair() {
        assert_eq!(cumulative_energy(&[1.0, 1.0]).unwrap(), vec![0.5, 1.0]);
    }

    #[test]
    fn all_zero_is_degenerate() {
        assert!(matches!(
            cumulative_energy(&[0.0, 0.0]),
            Err(MgeError::DegenerateSpectrum)
        ));
    }

    #[test]
    fn order_breaks_ties_by_index() {
        assert_eq!(energy_order(&[1.0, -3.0, 3.0, 0.5]), vec![1, 2, 0, 3]);
    }
}
