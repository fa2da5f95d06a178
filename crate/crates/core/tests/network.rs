//! Forward pass, gradients, training and data ingestion of the classifier
//! substrate.

use mge_core::nn::*;
use mge_core::tensor::RngStream;
use mge_core::MgeError;
use proptest::prelude::*;
use rand::Rng;

fn random_params(spec: &NetworkSpec, seed: u64, scale: f64) -> ParamSet {
    let mut rng = RngStream::new(seed);
    let mut p = ParamSet::zeros(spec);
    for layer in p.layers_mut() {
        for v in layer.values.iter_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
    p
}

fn random_input(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = RngStream::new(seed);
    (0..len).map(|_| rng.random_range(0.0..1.0)).collect()
}

fn one_example(x: Vec<f64>, shape: Vec<usize>, label: usize, classes: usize) -> Dataset {
    Dataset::new(x, shape, vec![label], classes, Split::Test).unwrap()
}

/// Row-major `W·x + b`, with `W` stored as `[out][in]`.
fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, bo)| {
            let mut s = *bo;
            for i in 0..n_in {
                s += w[o * n_in + i] * x[i];
            }
            s
        })
        .collect()
}

#[test]
fn dense_forward_matches_hand_rolled_matmul() {
    let spec = NetworkSpec::mlp(2, &[16], 3).unwrap();
    let p = random_params(&spec, 5, 1.0);
    let x = vec![0.3, 0.8];
    let l = p.layers();
    let h: Vec<f64> = affine(&l[0].values, &l[1].values, &x)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    let want = affine(&l[2].values, &l[3].values, &h);
    let got = forward(&spec, &p, &one_example(x, vec![2], 0, 3)).unwrap();
    assert_eq!(got.len(), 1);
    for (g, w) in got[0].iter().zip(&want) {
        assert!((g - w).abs() <= 1e-9);
    }
}

#[test]
fn zero_params_give_zero_logits() {
    let spec = NetworkSpec::mlp(4, &[5, 5], 3).unwrap();
    let p = ParamSet::zeros(&spec);
    let logits = forward(&spec, &p, &one_example(random_input(4, 1), vec![4], 0, 3)).unwrap();
    assert_eq!(logits[0], vec![0.0; 3]);
    let g = input_gradient(&spec, &p, &random_input(4, 2), 1).unwrap();
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn identity_dense_layer_passes_input_through() {
    let spec = NetworkSpec::new(
        vec![3],
        3,
        vec![LayerKind::Dense {
            inputs: 3,
            outputs: 3,
        }],
    )
    .unwrap();
    let mut p = ParamSet::zeros(&spec);
    for i in 0..3 {
        p.layers_mut()[0].values[i * 3 + i] = 1.0;
    }
    let x = vec![0.1, 0.7, 0.4];
    let logits = forward(&spec, &p, &one_example(x.clone(), vec![3], 0, 3)).unwrap();
    assert_eq!(logits[0], x);
}

#[test]
fn shape_mismatch_is_structural() {
    let spec = NetworkSpec::mlp(4, &[3], 2).unwrap();
    let other = NetworkSpec::mlp(5, &[3], 2).unwrap();
    let p = ParamSet::init(&other, 0);
    let data = one_example(vec![0.0; 4], vec![4], 0, 2);
    assert!(matches!(
        forward(&spec, &p, &data),
        Err(MgeError::Structural(_))
    ));
    let wrong_input = one_example(vec![0.0; 5], vec![5], 0, 2);
    assert!(matches!(
        forward(&spec, &ParamSet::init(&spec, 0), &wrong_input),
        Err(MgeError::Structural(_))
    ));
}

#[test]
fn single_layer_input_gradient_has_closed_form() {
    let spec = NetworkSpec::new(
        vec![4],
        3,
        vec![LayerKind::Dense {
            inputs: 4,
            outputs: 3,
        }],
    )
    .unwrap();
    let p = random_params(&spec, 9, 1.0);
    let x = random_input(4, 10);
    let (w, b) = (&p.layers()[0].values, &p.layers()[1].values);
    let z = affine(w, b, &x);
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    let y = 2;
    let delta: Vec<f64> = e
        .iter()
        .enumerate()
        .map(|(k, v)| v / s - if k == y { 1.0 } else { 0.0 })
        .collect();
    let want: Vec<f64> = (0..4)
        .map(|i| (0..3).map(|o| w[o * 4 + i] * delta[o]).sum())
        .collect();
    let got = input_gradient(&spec, &p, &x, y).unwrap();
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() <= 1e-12, "{g} vs {w}");
    }
}

fn small_conv_spec() -> NetworkSpec {
    NetworkSpec::new(
        vec![1, 6, 6],
        3,
        vec![
            LayerKind::Conv {
                in_channels: 1,
                out_channels: 2,
                kernel: 3,
            },
            LayerKind::Relu,
            LayerKind::MaxPool { size: 2 },
            LayerKind::Flatten,
            LayerKind::Dense {
                inputs: 8,
                outputs: 5,
            },
            LayerKind::Tanh,
            LayerKind::Dense {
                inputs: 5,
                outputs: 3,
            },
        ],
    )
    .unwrap()
}

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-4 * analytic.abs().max(numeric.abs()) + 1e-8
}

fn loss_at(spec: &NetworkSpec, p: &ParamSet, x: &[f64], y: usize) -> f64 {
    let net = Network::new(spec, p).unwrap();
    softmax_cross_entropy(&net.logits(x).unwrap(), y).0
}

#[test]
#[allow(clippy::needless_range_loop)]
fn gradients_match_central_differences() {
    let h = 1e-5;
    for (spec, seed) in [
        (NetworkSpec::mlp(5, &[7, 6], 3).unwrap(), 1u64),
        (small_conv_spec(), 2),
    ] {
        assert!(spec.param_count() <= 1000);
        let p = random_params(&spec, seed, 0.8);
        let x = random_input(spec.input_len(), seed + 100);
        let y = 1;

        let net = Network::new(&spec, &p).unwrap();
        let mut grads = net.zero_gradients();
        net.loss_and_gradients(&x, y, &mut grads).unwrap();
        for t in 0..p.len() {
            for k in 0..p.layers()[t].len() {
                let mut plus = p.clone();
                plus.layers_mut()[t].values[k] += h;
                let mut minus = p.clone();
                minus.layers_mut()[t].values[k] -= h;
                let numeric =
                    (loss_at(&spec, &plus, &x, y) - loss_at(&spec, &minus, &x, y)) / (2.0 * h);
                assert!(
                    close(grads[t][k], numeric),
                    "param {t}/{k}: {} vs {numeric}",
                    grads[t][k]
                );
            }
        }

        let gx = net.input_gradient(&x, y).unwrap();
        for i in 0..x.len() {
            let mut plus = x.clone();
            plus[i] += h;
            let mut minus = x.clone();
            minus[i] -= h;
            let numeric =
                (loss_at(&spec, &p, &plus, y) - loss_at(&spec, &p, &minus, y)) / (2.0 * h);
            assert!(close(gx[i], numeric), "input {i}: {} vs {numeric}", gx[i]);
        }
    }
}

#[test]
fn lenet_shapes_compose() {
    let spec = NetworkSpec::lenet(10).unwrap();
    let p = ParamSet::init(&spec, 0);
    let x = random_input(28 * 28, 3);
    let logits = Network::new(&spec, &p).unwrap().logits(&x).unwrap();
    assert_eq!(logits.len(), 10);
    assert!(logits.iter().all(|v| v.is_finite()));
}

#[test]
fn loss_is_log_classes_for_uniform_logits() {
    for classes in [2usize, 3, 10] {
        let (loss, _) = softmax_cross_entropy(&vec![0.7; classes], 0);
        assert!((loss - (classes as f64).ln()).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn loss_is_non_negative(logits in prop::collection::vec(-50.0f64..50.0, 2..8), pick in 0usize..8) {
        let y = pick % logits.len();
        prop_assert!(softmax_cross_entropy(&logits, y).0 >= 0.0);
    }

    #[test]
    fn accuracy_ignores_example_order(seed: u64) {
        let spec = NetworkSpec::mlp(2, &[4], 3).unwrap();
        let p = ParamSet::init(&spec, seed);
        let data = make_synthetic(SyntheticKind::Blobs, 60, 3, seed).unwrap();
        let mut idx: Vec<usize> = (0..data.len()).collect();
        idx.reverse();
        idx.rotate_left((seed % 60) as usize);
        let shuffled = data.subset(&idx).unwrap();
        prop_assert_eq!(
            evaluate_accuracy(&spec, &p, &data).unwrap(),
            evaluate_accuracy(&spec, &p, &shuffled).unwrap()
        );
    }
}

#[test]
fn forward_is_bit_reproducible() {
    let spec = small_conv_spec();
    let p = random_params(&spec, 4, 1.0);
    let data = one_example(random_input(36, 5), vec![1, 6, 6], 0, 3);
    assert_eq!(
        forward(&spec, &p, &data).unwrap(),
        forward(&spec, &p, &data).unwrap()
    );
}

#[test]
fn constant_logits_score_class_zero_frequency() {
    let spec = NetworkSpec::mlp(2, &[3], 4).unwrap();
    let p = ParamSet::zeros(&spec);
    let data = make_synthetic(SyntheticKind::Blobs, 41, 4, 2).unwrap();
    assert_eq!(
        evaluate_accuracy(&spec, &p, &data).unwrap(),
        data.class_frequency(0)
    );
}

#[test]
fn memorizing_table_scores_one() {
    // One-hot inputs through an identity layer: logits equal the input.
    let spec = NetworkSpec::new(
        vec![10],
        10,
        vec![LayerKind::Dense {
            inputs: 10,
            outputs: 10,
        }],
    )
    .unwrap();
    let mut p = ParamSet::zeros(&spec);
    for i in 0..10 {
        p.layers_mut()[0].values[i * 10 + i] = 1.0;
    }
    let mut features = vec![0.0; 100];
    for i in 0..10 {
        features[i * 10 + i] = 1.0;
    }
    let data = Dataset::new(features, vec![10], (0..10).collect(), 10, Split::Test).unwrap();
    assert_eq!(evaluate_accuracy(&spec, &p, &data).unwrap(), 1.0);
}

#[test]
fn random_params_on_label_independent_data_score_near_one_third() {
    let n = 3000;
    let data = Dataset::new(
        random_input(n * 4, 77),
        vec![4],
        (0..n).map(|k| k % 3).collect(),
        3,
        Split::Test,
    )
    .unwrap();
    for seed in 0..5 {
        let spec = NetworkSpec::mlp(4, &[8], 3).unwrap();
        let acc = evaluate_accuracy(&spec, &ParamSet::init(&spec, seed), &data).unwrap();
        assert!((0.28..=0.39).contains(&acc), "seed {seed}: {acc}");
    }
}

/// Perpendicular bisector of the two blob centers.
fn bisector_accuracy(data: &Dataset) -> f64 {
    let c = SyntheticSpec::blob_centers(2, 2);
    let mid: Vec<f64> = (0..2).map(|i| (c[0][i] + c[1][i]) / 2.0).collect();
    let dir: Vec<f64> = (0..2).map(|i| c[0][i] - c[1][i]).collect();
    let hits = (0..data.len())
        .filter(|&i| {
            let x = data.features(i);
            let side = (0..2).map(|k| (x[k] - mid[k]) * dir[k]).sum::<f64>();
            (side < 0.0) as usize == data.label(i)
        })
        .count();
    hits as f64 / data.len() as f64
}

fn blobs(n: usize, noise: f64, seed: u64, split: Split) -> Dataset {
    SyntheticSpec {
        kind: SyntheticKind::Blobs,
        n,
        classes: 2,
        dim: 2,
        noise,
        seed,
    }
    .generate(split)
    .unwrap()
}

#[test]
fn six_sigma_blobs_are_linearly_separable() {
    let c = SyntheticSpec::blob_centers(2, 2);
    let gap = ((c[0][0] - c[1][0]).powi(2) + (c[0][1] - c[1][1]).powi(2)).sqrt();
    let noise = gap / 6.0;
    assert!(bisector_accuracy(&blobs(2000, noise, 3, Split::Test)) >= 0.99);
}

#[test]
fn two_eight_two_net_learns_separable_blobs() {
    let train_set = blobs(400, 0.05, 1, Split::Train);
    let val = blobs(200, 0.05, 2, Split::Validation);
    assert!(bisector_accuracy(&val) >= 0.99);
    let spec = NetworkSpec::mlp(2, &[8], 2).unwrap();
    let cfg = TrainConfig {
        epochs: 50,
        learning_rate: 0.01,
        seed: 3,
        ..TrainConfig::default()
    };
    let report = train(&spec, &train_set, &cfg).unwrap();
    assert!(report.final_loss <= report.initial_loss);
    assert!(report.seconds > 0.0);
    assert!(evaluate_accuracy(&spec, &report.params, &val).unwrap() >= 0.95);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let data = blobs(50, 0.05, 1, Split::Train);
    let spec = NetworkSpec::mlp(2, &[4], 2).unwrap();
    for optimizer in [Optimizer::Sgd, Optimizer::Adam] {
        let cfg = TrainConfig {
            optimizer,
            learning_rate: 0.0,
            epochs: 1,
            batch_size: 8,
            seed: 6,
            ..TrainConfig::default()
        };
        let report = train(&spec, &data, &cfg).unwrap();
        assert_eq!(report.params, ParamSet::init(&spec, 6));
    }
}

#[test]
fn divergence_is_reported() {
    let data = blobs(50, 0.05, 1, Split::Train);
    let spec = NetworkSpec::mlp(2, &[4], 2).unwrap();
    let cfg = TrainConfig {
        optimizer: Optimizer::Sgd,
        learning_rate: 1e300,
        epochs: 3,
        batch_size: 5,
        seed: 0,
        ..TrainConfig::default()
    };
    assert!(matches!(
        train(&spec, &data, &cfg),
        Err(MgeError::TrainingDiverged { .. })
    ));
}

#[test]
fn synthetic_data_is_seeded_and_balanced() {
    let a = make_synthetic(SyntheticKind::Blobs, 300, 3, 1).unwrap();
    let b = make_synthetic(SyntheticKind::Blobs, 300, 3, 1).unwrap();
    assert_eq!(a, b);
    for n in [7usize, 300, 301] {
        let d = make_synthetic(SyntheticKind::Blobs, n, 3, 2).unwrap();
        let counts: Vec<usize> = (0..3)
            .map(|c| d.labels().iter().filter(|&&l| l == c).count())
            .collect();
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }
    let moons = make_synthetic(SyntheticKind::Moons, 2, 2, 0).unwrap();
    assert_eq!(moons.labels(), &[0, 1]);
    assert!(make_synthetic(SyntheticKind::Blobs, 2, 3, 0).is_err());
}

#[test]
fn idx_round_trip_and_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let images = IdxImages {
        count: 1,
        rows: 2,
        cols: 3,
        pixels: vec![0, 51, 102, 153, 204, 255],
    };
    let img_path = dir.path().join("img.idx");
    let lab_path = dir.path().join("lab.idx");
    std::fs::write(&img_path, write_idx_images(&images)).unwrap();
    std::fs::write(&lab_path, write_idx_labels(&[7])).unwrap();
    assert_eq!(
        read_idx_images(&std::fs::read(&img_path).unwrap()).unwrap(),
        images
    );

    let data = load_idx(&img_path, &lab_path, Split::Test).unwrap();
    assert_eq!(data.len(), 1);
    assert_eq!(data.feature_shape(), &[1, 2, 3]);
    assert_eq!(data.features(0), &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
    assert_eq!(data.label(0), 7);

    let bytes = write_idx_images(&images);
    match read_idx_images(&bytes[..bytes.len() - 2]) {
        Err(MgeError::Format { offset, .. }) => assert_eq!(offset, bytes.len() as u64 - 2),
        other => panic!("expected format error, got {other:?}"),
    }
    let mut bad = bytes.clone();
    bad[3] = 0x01;
    assert!(matches!(
        read_idx_images(&bad),
        Err(MgeError::Format { offset: 0, .. })
    ));
    assert!(matches!(
        read_idx_labels(&[0, 0, 8, 1, 0, 0]),
        Err(MgeError::Format { offset: 4, .. })
    ));
}

/// Reads the header fields byte by byte, independently of the loader.
fn header_u32(bytes: &[u8], at: usize) -> usize {
    ((bytes[at] as usize) << 24)
        | ((bytes[at + 1] as usize) << 16)
        | ((bytes[at + 2] as usize) << 8)
        | bytes[at + 3] as usize
}

#[test]
fn official_test_file_when_present() {
    let Ok(dir) = std::env::var("MGE_MNIST_DIR") else {
        eprintln!("MGE_MNIST_DIR not set; skipping");
        return;
    };
    let dir = std::path::Path::new(&dir);
    let img = dir.join("t10k-images-idx3-ubyte");
    let lab = dir.join("t10k-labels-idx1-ubyte");
    let raw = std::fs::read(&img).unwrap();
    let data = load_idx(&img, &lab, Split::Test).unwrap();
    assert_eq!(data.len(), header_u32(&raw, 4));
    assert_eq!(data.len(), 10_000);
    assert!(data.labels().iter().all(|&l| l <= 9));
}
