//! DCT, energy ordering and mask construction against naive oracles.

use std::f64::consts::PI;

use mge_core::generator::{
    generate_layer, importance_mask, mask_from_coefficients, GeneratorConfig, MaskRow,
};
use mge_core::tensor::{cumulative_energy, dct2, idct2, RngStream};
use mge_core::MgeError;
use proptest::prelude::*;
use rand::Rng;

/// Term-by-term orthonormal DCT-II.
fn naive_dct2(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    (0..x.len())
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / n).sqrt()
            } else {
                (2.0 / n).sqrt()
            };
            scale
                * x.iter()
                    .enumerate()
                    .map(|(i, v)| v * (PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * n)).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// Term-by-term orthonormal DCT-III.
fn naive_idct2(c: &[f64]) -> Vec<f64> {
    let n = c.len() as f64;
    (0..c.len())
        .map(|i| {
            c.iter()
                .enumerate()
                .map(|(k, v)| {
                    let scale = if k == 0 {
                        (1.0 / n).sqrt()
                    } else {
                        (2.0 / n).sqrt()
                    };
                    scale * v * (PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * n)).cos()
                })
                .sum()
        })
        .collect()
}

fn random_vec(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = RngStream::new(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn fast_dct_matches_naive_sum_for_every_length_up_to_256() {
    for n in 1..=256 {
        let x = random_vec(n, n as u64);
        let fast = dct2(&x).unwrap();
        let slow = naive_dct2(&x);
        assert!(max_abs_diff(&fast, &slow) <= 1e-12, "dct2 length {n}");
        let fast_inv = idct2(&x).unwrap();
        let slow_inv = naive_idct2(&x);
        assert!(
            max_abs_diff(&fast_inv, &slow_inv) <= 1e-12,
            "idct2 length {n}"
        );
    }
}

#[test]
fn dct_of_one_to_four_matches_naive_sum() {
    let x = [1.0, 2.0, 3.0, 4.0];
    assert!(max_abs_diff(&dct2(&x).unwrap(), &naive_dct2(&x)) <= 1e-12);
}

#[test]
fn inverse_of_length_33_matches_naive_sum() {
    let c = random_vec(33, 33);
    assert!(max_abs_diff(&idct2(&c).unwrap(), &naive_idct2(&c)) <= 1e-12);
}

#[test]
fn round_trip_on_listed_lengths() {
    for n in [1usize, 7, 64, 4096] {
        let x = random_vec(n, 7 + n as u64);
        let back = idct2(&dct2(&x).unwrap()).unwrap();
        assert!(
            max_abs_diff(&back, &x) <= 1e-9 * norm(&x).max(1.0),
            "length {n}"
        );
        let again = dct2(&idct2(&x).unwrap()).unwrap();
        assert!(
            max_abs_diff(&again, &x) <= 1e-9 * norm(&x).max(1.0),
            "length {n}"
        );
    }
}

#[test]
fn parseval_at_large_length() {
    let x = random_vec(100_000, 99);
    let c = dct2(&x).unwrap();
    assert!((norm(&c) - norm(&x)).abs() <= 1e-9 * norm(&x));
}

#[test]
fn non_finite_input_is_rejected() {
    assert!(matches!(
        dct2(&[1.0, f64::INFINITY]),
        Err(MgeError::InvalidInput(_))
    ));
    assert!(matches!(idct2(&[f64::NAN]), Err(MgeError::InvalidInput(_))));
}

proptest! {
    #[test]
    fn round_trip_identity(x in prop::collection::vec(-1e3f64..1e3, 1..512)) {
        let scale = norm(&x).max(1e-300);
        let back = idct2(&dct2(&x).unwrap()).unwrap();
        prop_assert!(norm(&back.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>()) <= 1e-9 * scale);
        let fwd = dct2(&idct2(&x).unwrap()).unwrap();
        prop_assert!(norm(&fwd.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>()) <= 1e-9 * scale);
    }

    #[test]
    fn parseval(x in prop::collection::vec(-1e3f64..1e3, 1..2048)) {
        let c = dct2(&x).unwrap();
        prop_assert!((norm(&c) - norm(&x)).abs() <= 1e-9 * norm(&x));
    }

    #[test]
    fn cumulative_energy_is_monotone_and_ends_at_one(c in prop::collection::vec(-10.0f64..10.0, 1..64)) {
        prop_assume!(c.iter().any(|&v| v != 0.0));
        let curve = cumulative_energy(&c).unwrap();
        prop_assert!(curve.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*curve.last().unwrap(), 1.0);
    }

    #[test]
    fn mask_retains_at_least_t(c in prop::collection::vec(-10.0f64..10.0, 1..64), t in 0.0f64..=1.0) {
        prop_assume!(c.iter().any(|&v| v != 0.0));
        let row = mask_from_coefficients(&c, t).unwrap();
        let total: f64 = c.iter().map(|v| v * v).sum();
        let kept: f64 = c.iter().zip(&row.retained).filter(|(_, &r)| r).map(|(v, _)| v * v).sum();
        prop_assert!(kept / total >= t * (1.0 - 1e-9));
        prop_assert!((row.retained_energy - kept / total).abs() <= 1e-12);
    }
}

/// Brute-force: sort by energy with index tie-break, prefix sums, divide.
fn prefix_oracle(c: &[f64]) -> Vec<f64> {
    let mut e: Vec<(f64, usize)> = c.iter().enumerate().map(|(i, v)| (v * v, i)).collect();
    e.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let total: f64 = e.iter().map(|p| p.0).sum();
    let mut run = 0.0;
    e.iter()
        .map(|p| {
            run += p.0;
            run / total
        })
        .collect()
}

#[test]
fn cumulative_energy_examples() {
    assert_eq!(
        cumulative_energy(&[2.0, 0.0, 0.0]).unwrap(),
        vec![1.0, 1.0, 1.0]
    );
    assert_eq!(cumulative_energy(&[1.0, 1.0]).unwrap(), vec![0.5, 1.0]);
    assert!(matches!(
        cumulative_energy(&[0.0, 0.0]),
        Err(MgeError::DegenerateSpectrum)
    ));
}

#[test]
fn cumulative_energy_matches_prefix_sum_oracle() {
    for seed in 0..20 {
        let c = random_vec(16, 100 + seed);
        let got = cumulative_energy(&c).unwrap();
        let want = prefix_oracle(&c);
        assert!(max_abs_diff(&got, &want) <= 1e-12, "seed {seed}");
    }
}

/// Smallest set, chosen in energy order, whose fraction reaches `t`; every
/// prefix of the ordering is tried.
fn exhaustive_mask(energies: &[f64], t: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..energies.len()).collect();
    order.sort_by(|&a, &b| {
        energies[b]
            .partial_cmp(&energies[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let total: f64 = energies.iter().sum();
    for k in 0..=energies.len() {
        let frac: f64 = order[..k].iter().map(|&i| energies[i]).sum::<f64>() / total;
        if frac >= t - 1e-12 {
            let mut m = vec![false; energies.len()];
            for &i in &order[..k] {
                m[i] = true;
            }
            return m;
        }
    }
    unreachable!()
}

#[test]
fn mask_on_energy_fractions_example() {
    let c: Vec<f64> = [0.5f64, 0.3, 0.2].iter().map(|e| e.sqrt()).collect();
    let row = mask_from_coefficients(&c, 0.8).unwrap();
    assert_eq!(row.retained, vec![true, true, false]);
    assert_eq!(row.retained, exhaustive_mask(&[0.5, 0.3, 0.2], 0.8));
}

#[test]
fn mask_matches_exhaustive_prefix_search() {
    for seed in 0..50u64 {
        let mut rng = RngStream::new(seed);
        let n = rng.random_range(1..12);
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let energies: Vec<f64> = c.iter().map(|v| v * v).collect();
        for t in [0.0, 0.1, 0.5, 0.8, 0.95, 1.0] {
            let row = mask_from_coefficients(&c, t).unwrap();
            assert_eq!(
                row.retained,
                exhaustive_mask(&energies, t),
                "seed {seed} t {t}"
            );
        }
    }
}

#[test]
fn magnitude_ties_go_to_lower_index() {
    let row = mask_from_coefficients(&[1.0, -1.0, 1.0, 1.0], 0.5).unwrap();
    assert_eq!(row.retained, vec![true, true, false, false]);
}

#[test]
fn splice_matches_explicit_oracle() {
    let layer = random_vec(8, 5);
    let mask = MaskRow {
        retained: vec![true, false, true, false, true, false, true, false],
        retained_energy: f64::NAN,
    };
    let cfg = GeneratorConfig::default();
    let got = generate_layer(&layer, &mask, &cfg, &mut RngStream::new(11)).unwrap();

    let mut coeffs = naive_dct2(&layer);
    let mut draws = got.draws.iter();
    for (i, c) in coeffs.iter_mut().enumerate() {
        if !mask.retained[i] {
            *c = *draws.next().unwrap();
        }
    }
    assert!(draws.next().is_none());
    assert!(got.draws.iter().all(|d| d.abs() <= cfg.latent_bound));
    assert!(max_abs_diff(&got.values, &naive_idct2(&coeffs)) <= 1e-12);
}

#[test]
fn full_mask_reproduces_layer_and_empty_mask_shrinks_with_z() {
    let layer = random_vec(40, 8);
    let full = importance_mask(&layer, 1.0).unwrap();
    let cfg = GeneratorConfig::default();
    let same = generate_layer(&layer, &full, &cfg, &mut RngStream::new(1)).unwrap();
    assert!(max_abs_diff(&same.values, &layer) <= 1e-9);

    let empty = importance_mask(&layer, 0.0).unwrap();
    let mut last = f64::INFINITY;
    for z in [0.2, 0.02, 0.002, 1e-6] {
        let cfg = GeneratorConfig {
            latent_bound: z,
            ..GeneratorConfig::default()
        };
        let out = generate_layer(&layer, &empty, &cfg, &mut RngStream::new(1)).unwrap();
        let size = norm(&out.values);
        assert!(size <= z * (layer.len() as f64).sqrt() + 1e-12);
        assert!(size < last);
        last = size;
    }
}
