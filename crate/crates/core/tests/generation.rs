//! Generator properties on a trained fixture model.

mod common;

use common::fixture;
use mge_core::generator::*;
use mge_core::nn::evaluate_accuracy;
use mge_core::tensor::{dct2, ks_statistic, RngStream};
use mge_core::MgeError;
use proptest::prelude::*;

fn generator(cfg: GeneratorConfig) -> Generator<'static> {
    let f = fixture();
    Generator::new(&f.spec, &f.base, cfg, &f.val).unwrap()
}

#[test]
fn fixture_base_is_accurate() {
    let f = fixture();
    assert!(evaluate_accuracy(&f.spec, &f.base, &f.test).unwrap() >= 0.9);
    assert!(f.base.is_quantized());
}

#[test]
fn accept_predicate_examples() {
    assert!(accept(0.9, 0.9, 0.05));
    assert!(!accept(0.85, 0.9, 0.05));
    assert!(!accept(0.5, 0.75, 0.25));
    assert!(accept(0.99, 0.90, 0.05));
    assert!(accept(0.7, 0.6, 0.0));
}

#[test]
fn full_threshold_reproduces_the_base() {
    let g = generator(GeneratorConfig {
        threshold: 1.0,
        ..GeneratorConfig::default()
    });
    for attempt in 0..20 {
        let c = g.generate(attempt).unwrap();
        assert!(c.accepted);
        assert_eq!(c.accuracy, g.base_accuracy());
        for (a, b) in c.params.pooled().iter().zip(fixture().base.pooled()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }
    let pool = g.pool(1).unwrap();
    assert_eq!((pool.candidates.len(), pool.attempts), (1, 1));
}

#[test]
fn pool_of_ten_fits_the_budget() {
    let g = generator(GeneratorConfig::default());
    let pool = g.pool(10).unwrap();
    assert_eq!(pool.candidates.len(), 10);
    assert!(pool.attempts <= 1000);
    let ids: Vec<u64> = pool.candidates.iter().map(|c| c.id).collect();
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn accepted_candidates_pass_when_re_evaluated_from_stored_form() {
    let f = fixture();
    let g = generator(GeneratorConfig::default());
    let pool = g.pool(10).unwrap();
    for c in &pool.candidates {
        let acc = evaluate_accuracy(&f.spec, &c.stored_params(), &f.val).unwrap();
        assert_eq!(acc, c.accuracy);
        assert!(acc > g.base_accuracy() || (acc - g.base_accuracy()).abs() < 0.05);
    }
}

#[test]
fn retained_coefficients_carry_threshold_energy_and_draws_are_bounded() {
    let cfg = GeneratorConfig {
        threshold: 0.7,
        latent_bound: 0.1,
        ..GeneratorConfig::default()
    };
    let g = generator(cfg.clone());
    let c = g.generate(3).unwrap();
    for (t, layer) in c.params.layers().iter().enumerate() {
        let base = &g.base_coefficients()[t];
        let row = &g.mask().rows[t];
        let total: f64 = base.iter().map(|v| v * v).sum();
        let kept: f64 = base
            .iter()
            .zip(&row.retained)
            .filter(|(_, &r)| r)
            .map(|(v, _)| v * v)
            .sum();
        assert!(kept / total >= cfg.threshold * (1.0 - 1e-9));

        let coeffs = dct2(&layer.values).unwrap();
        let mut draws = c.latent_draws[t].iter();
        for (i, &keep) in row.retained.iter().enumerate() {
            if keep {
                assert!((coeffs[i] - base[i]).abs() <= 1e-9);
            } else {
                let d = *draws.next().unwrap();
                assert!(d.abs() <= cfg.latent_bound);
                assert!((coeffs[i] - d).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn pools_are_bit_identical_across_runs() {
    let cfg = GeneratorConfig {
        seed: 17,
        ..GeneratorConfig::default()
    };
    let a = generator(cfg.clone()).pool(6).unwrap();
    let b = generator(cfg).pool(6).unwrap();
    assert_eq!(a.attempts, b.attempts);
    for (x, y) in a.candidates.iter().zip(&b.candidates) {
        assert_eq!(
            (x.id, &x.params, &x.latent_draws, x.accuracy),
            (y.id, &y.params, &y.latent_draws, y.accuracy)
        );
    }
}

#[test]
fn pooled_weights_keep_their_distribution() {
    let f = fixture();
    let pool = generator(GeneratorConfig::default()).pool(10).unwrap();
    let base = f.base.pooled();
    for c in &pool.candidates {
        let d = ks_statistic(&base, &c.stored_params().pooled()).unwrap();
        assert!(d < 0.1, "candidate {}: KS {d}", c.id);
    }
}

#[test]
fn impossible_tolerance_fails_with_statistics() {
    let f = fixture();
    let mut worse = f.base.clone();
    for layer in worse.layers_mut() {
        for v in layer.values.iter_mut() {
            *v = -*v;
        }
    }
    // Tolerance 0 and a base that the candidates cannot beat.
    let cfg = GeneratorConfig {
        tolerance: 0.0,
        attempts: 2,
        threshold: 0.0,
        ..GeneratorConfig::default()
    };
    let g = Generator::new(&f.spec, &f.base, cfg, &f.val).unwrap();
    match g.pool(3) {
        Err(MgeError::GenerationFailed {
            attempts,
            base_accuracy,
            best_accuracy,
        }) => {
            assert_eq!(attempts, 6);
            assert_eq!(base_accuracy, g.base_accuracy());
            assert!(best_accuracy <= base_accuracy);
        }
        other => panic!(
            "expected generation failure, got {:?}",
            other.map(|p| p.candidates.len())
        ),
    }
}

#[test]
fn adaptive_halving_shrinks_the_bound_after_rejections() {
    let f = fixture();
    let cfg = GeneratorConfig {
        tolerance: 0.0,
        attempts: 3,
        threshold: 0.0,
        adaptive_halving: true,
        ..GeneratorConfig::default()
    };
    let g = Generator::new(&f.spec, &f.base, cfg, &f.val).unwrap();
    // Every attempt is rejected, so the bound halves once per 10 rejections.
    match g.pool(10) {
        Err(MgeError::GenerationFailed { attempts, .. }) => assert_eq!(attempts, 30),
        other => panic!("unexpected {:?}", other.map(|p| p.final_latent_bound)),
    }
    let cfg = GeneratorConfig {
        adaptive_halving: true,
        ..GeneratorConfig::default()
    };
    let pool = Generator::new(&f.spec, &f.base, cfg, &f.val)
        .unwrap()
        .pool(3)
        .unwrap();
    assert_eq!(pool.final_latent_bound, 0.2);
}

#[test]
fn config_ranges_are_enforced() {
    for cfg in [
        GeneratorConfig {
            threshold: 1.01,
            ..GeneratorConfig::default()
        },
        GeneratorConfig {
            threshold: -0.1,
            ..GeneratorConfig::default()
        },
        GeneratorConfig {
            latent_bound: 0.0,
            ..GeneratorConfig::default()
        },
        GeneratorConfig {
            latent_bound: 0.25,
            ..GeneratorConfig::default()
        },
        GeneratorConfig {
            attempts: 0,
            ..GeneratorConfig::default()
        },
    ] {
        assert!(
            matches!(cfg.validate(), Err(MgeError::ConfigRange(_))),
            "{cfg:?}"
        );
    }
}

#[test]
fn mutation_keeps_retained_coefficients_of_the_parent() {
    let g = generator(GeneratorConfig::default());
    let parent = g.generate(0).unwrap();
    let children = g.mutate(&parent, 10, &RngStream::new(99), 1000).unwrap();
    assert_eq!(children.len(), 10);
    for (k, child) in children.iter().enumerate() {
        assert_eq!(child.id, 1000 + k as u64);
        assert_eq!(
            child.lineage,
            Lineage {
                origin: Origin::Mutate,
                parents: vec![parent.id]
            }
        );
        for (t, layer) in child.params.layers().iter().enumerate() {
            let pc = dct2(&parent.params.layers()[t].values).unwrap();
            let cc = dct2(&layer.values).unwrap();
            for (i, &keep) in g.mask().rows[t].retained.iter().enumerate() {
                if keep {
                    assert!((pc[i] - cc[i]).abs() <= 1e-9);
                }
            }
        }
    }
    for a in 0..children.len() {
        for b in a + 1..children.len() {
            assert_ne!(children[a].latent_draws, children[b].latent_draws);
        }
    }
}

#[test]
fn mutation_with_tiny_bound_zeroes_unimportant_coefficients() {
    let g = generator(GeneratorConfig {
        latent_bound: 1e-12,
        ..GeneratorConfig::default()
    });
    let parent = g.generate(0).unwrap();
    let child = &g.mutate(&parent, 1, &RngStream::new(1), 50).unwrap()[0];
    for (t, layer) in child.params.layers().iter().enumerate() {
        let cc = dct2(&layer.values).unwrap();
        for (i, &keep) in g.mask().rows[t].retained.iter().enumerate() {
            if !keep {
                assert!(cc[i].abs() <= 1e-9);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn every_accepted_candidate_satisfies_the_predicate(seed: u64, t in 0.5f64..1.0, z in 0.01f64..=0.2) {
        let f = fixture();
        let cfg = GeneratorConfig { seed, threshold: t, latent_bound: z, ..GeneratorConfig::default() };
        let g = Generator::new(&f.spec, &f.base, cfg, &f.val).unwrap();
        if let Ok(pool) = g.pool(3) {
            for c in &pool.candidates {
                let acc = evaluate_accuracy(&f.spec, &c.stored_params(), &f.val).unwrap();
                prop_assert!(accept(acc, g.base_accuracy(), 0.05));
            }
        }
    }
}
