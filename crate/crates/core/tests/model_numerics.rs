use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pte_core::data::generate_blobs;
use pte_core::evaluation::accuracy;
use pte_core::model::{
    build_reference_model, cross_entropy, load_checkpoint, save_checkpoint, train_supervised,
    Architecture, Classifier, TrainConfig,
};

fn fd_gradient(model: &Classifier, x: &[f64], y: usize, h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[j] += h;
            down[j] -= h;
            (cross_entropy(&model.logits(&up).unwrap(), y)
                - cross_entropy(&model.logits(&down).unwrap(), y))
                / (2.0 * h)
        })
        .collect()
}

/// Largest relative error between analytic and central-difference input
/// gradients; tiny components are compared on an absolute scale.
fn worst_relative(model: &Classifier, cases: usize, rng: &mut ChaCha8Rng) -> f64 {
    let d = model.input_dim();
    let mut worst = 0f64;
    for _ in 0..cases {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
        let y = rng.random_range(0..model.classes());
        let g = model.input_gradient(&x, y).unwrap();
        let fd = fd_gradient(model, &x, y, 1e-6);
        let scale = g.iter().chain(&fd).fold(1e-3f64, |a, v| a.max(v.abs()));
        for (a, b) in g.iter().zip(&fd) {
            worst = worst.max((a - b).abs() / scale);
        }
    }
    worst
}

#[test]
fn input_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mlp = build_reference_model(&Architecture::mlp(&[5, 16, 8]), 4, 1).unwrap();
    let linear = build_reference_model(&Architecture::mlp(&[3]), 3, 2).unwrap();
    let cnn = build_reference_model(&Architecture::cnn1d(2, 128), 5, 3).unwrap();
    assert!(worst_relative(&mlp, 60, &mut rng) < 1e-4);
    assert!(worst_relative(&linear, 30, &mut rng) < 1e-4);
    assert!(worst_relative(&cnn, 20, &mut rng) < 1e-4);
}

fn train(arch: &Architecture, sep: f64, seed: u64) -> (Classifier, f64) {
    let (train, test) = generate_blobs(6, 200, 2, sep, seed).unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        learning_rate: 0.05,
        batch_size: 32,
        weight_decay: 1e-4,
        seed,
    };
    let model = train_supervised(build_reference_model(arch, 6, seed).unwrap(), &train, &cfg)
        .unwrap()
        .model;
    let acc = accuracy(&model, &test).unwrap();
    (model, acc)
}

#[test]
fn softmax_regression_separates_blobs_and_is_near_chance_without_separation() {
    let linear = Architecture::mlp(&[2]);
    let (_, acc) = train(&linear, 6.0, 0);
    assert!(acc >= 95.0, "separable blobs: {acc}");
    let (_, acc) = train(&linear, 0.01, 0);
    assert!(
        acc <= 30.0,
        "overlapping blobs should be near 1/6 chance, got {acc}"
    );
}

#[test]
fn mlp_reaches_high_accuracy_and_survives_a_checkpoint_round_trip() {
    let (model, acc) = train(&Architecture::mlp(&[2, 64, 64]), 6.0, 1);
    assert!(acc >= 95.0, "{acc}");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&model, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.checksum(), model.checksum());
    let x = [0.3, -1.2];
    assert_eq!(loaded.logits(&x).unwrap(), model.logits(&x).unwrap());
}
