use super::*;
use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_arch() -> Arch {
    Arch::custom(vec![12, 16, 10])
}

fn random_input(dim: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| rng.random_range(0.0..1.0)).collect()
}

#[test]
fn init_is_deterministic() {
    let a = init_model(&Arch::reference(), 2024).unwrap();
    let b = init_model(&Arch::reference(), 2024).unwrap();
    assert_eq!(a, b);
    let c = init_model(&Arch::reference(), 2025).unwrap();
    assert_ne!(a, c);
}

#[test]
fn init_shapes_and_zero_bias() {
    let m = init_model(&Arch::custom(vec![784, 256, 10]), 1).unwrap();
    assert_eq!(m.layers.len(), 2);
    assert_eq!(m.layers[0].weights.len(), 784 * 256);
    assert_eq!(m.layers[1].weights.len(), 256 * 10);
    assert_eq!(m.layers[0].activation, Activation::Relu);
    assert_eq!(m.layers[1].activation, Activation::Softmax);
    assert!(m.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    // scaled-uniform bound
    let bound = (6.0f64 / (784.0 + 256.0)).sqrt() as f32;
    assert!(m.layers[0].weights.iter().all(|&w| w.abs() < bound));
}

#[test]
fn init_rejects_bad_arch() {
    assert!(matches!(
        init_model(&Arch::custom(vec![784]), 1),
        Err(MlpError::Architecture(_))
    ));
    assert!(matches!(
        init_model(&Arch::custom(vec![784, 0, 10]), 1),
        Err(MlpError::Architecture(_))
    ));
}

#[test]
fn forward_is_a_distribution() {
    let m = init_model(&small_arch(), 7).unwrap();
    for seed in 0..20 {
        let x = random_input(12, seed);
        let p = forward(&m, &x).unwrap();
        assert_eq!(p.len(), 10);
        assert!(p.iter().all(|&v| v >= 0.0));
        let sum: f32 = p.iter().sum();
        assert_relative_eq!(sum, 1.0, epsilon = 1e-6);
    }
}

#[test]
fn forward_zero_final_layer_is_uniform() {
    let mut m = init_model(&small_arch(), 7).unwrap();
    let last = m.layers.len() - 1;
    m.layers[last].weights.iter_mut().for_each(|w| *w = 0.0);
    let p = forward(&m, &random_input(12, 1)).unwrap();
    for &v in &p {
        assert_relative_eq!(v, 0.1, epsilon = 1e-6);
    }
}

#[test]
fn forward_logit_monotonicity() {
    // raising one logit (via its bias) strictly raises its probability
    let m = init_model(&small_arch(), 3).unwrap();
    let x = random_input(12, 2);
    let before = forward(&m, &x).unwrap();
    let mut bumped = m.clone();
    let last = bumped.layers.len() - 1;
    bumped.layers[last].bias[4] += 0.5;
    let after = forward(&bumped, &x).unwrap();
    assert!(after[4] > before[4]);
}

#[test]
fn forward_rejects_non_finite() {
    let m = init_model(&small_arch(), 7).unwrap();
    let mut x = random_input(12, 1);
    x[3] = f32::NAN;
    assert!(matches!(forward(&m, &x), Err(MlpError::NonFiniteInput(3))));
}

#[test]
fn cross_entropy_known_values() {
    let mut probs = [0.0f32; 10];
    probs[4] = 1.0;
    assert_eq!(cross_entropy(&probs, 4), 0.0);

    let uniform = [0.1f32; 10];
    assert_relative_eq!(cross_entropy(&uniform, 3), std::f32::consts::LN_10, epsilon = 1e-6);

    let mut p = [0.0f32; 10];
    p[2] = (-4.29327f64).exp() as f32;
    assert_relative_eq!(cross_entropy(&p, 2), 4.29327, epsilon = 1e-4);
}

#[test]
fn cross_entropy_floor_keeps_scores_finite() {
    let probs = [0.0f32; 10];
    let v = cross_entropy(&probs, 0);
    assert!(v.is_finite());
    assert_relative_eq!(v, -(1e-12f64.ln()) as f32, epsilon = 1e-4);
}

#[test]
fn accuracy_constant_model_on_balanced_set() {
    // zero everything, bias picks class 3: accuracy 0.1 on a balanced set
    let mut m = init_model(&Arch::custom(vec![4, 10]), 1).unwrap();
    m.layers[0].weights.iter_mut().for_each(|w| *w = 0.0);
    m.layers[0].bias[3] = 5.0;
    let n = 100;
    let features = vec![0.5f32; n * 4];
    let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    let data = TrainData::new(features, labels, 4);
    assert_relative_eq!(accuracy(&m, &data), 0.1, epsilon = 1e-9);
}

fn toy_problem(n: usize, dim: usize, seed: u64) -> TrainData {
    // two gaussian-ish blobs per class pair, linearly separable-ish
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = (i % 10) as u8;
        for d in 0..dim {
            let center = if d % 10 == class as usize { 0.8 } else { 0.2 };
            features.push(center + rng.random_range(-0.1..0.1));
        }
        labels.push(class);
    }
    TrainData::new(features, labels, dim)
}

#[test]
fn train_learns_separable_toy_data() {
    let data = toy_problem(600, 20, 5);
    let model = init_model(&Arch::custom(vec![20, 32, 10]), 2024).unwrap();
    let cfg = TrainConfig {
        epochs: 20,
        learning_rate: 0.2,
        ..TrainConfig::default()
    };
    let (trained, trace) = train(model, &data, &cfg, Some(&data)).unwrap();
    assert_eq!(trace.epochs.len(), 20);
    assert!(trace.epochs[0].mean_loss > trace.epochs[19].mean_loss);
    assert!(accuracy(&trained, &data) > 0.95, "toy problem should be learnable");
}

#[test]
fn train_is_deterministic() {
    let data = toy_problem(256, 16, 9);
    let cfg = TrainConfig {
        epochs: 3,
        learning_rate: 0.1,
        ..TrainConfig::default()
    };
    let m = init_model(&Arch::custom(vec![16, 24, 10]), 2024).unwrap();
    let (a, ta) = train(m.clone(), &data, &cfg, None).unwrap();
    let (b, tb) = train(m, &data, &cfg, None).unwrap();
    assert_eq!(a, b);
    let la: Vec<f64> = ta.epochs.iter().map(|e| e.mean_loss).collect();
    let lb: Vec<f64> = tb.epochs.iter().map(|e| e.mean_loss).collect();
    assert_eq!(la, lb);
}

#[test]
fn train_rejects_empty_and_mismatched() {
    let m = init_model(&Arch::custom(vec![16, 10]), 1).unwrap();
    let empty = TrainData::new(vec![], vec![], 16);
    assert!(matches!(
        train(m.clone(), &empty, &TrainConfig::default(), None),
        Err(MlpError::EmptyDataset)
    ));
    let wrong = TrainData::new(vec![0.0; 8], vec![0], 8);
    assert!(matches!(
        train(m, &wrong, &TrainConfig::default(), None),
        Err(MlpError::FeatureDimension { expected: 16, found: 8 })
    ));
}

#[test]
fn momentum_optimizer_also_learns() {
    let data = toy_problem(400, 16, 11);
    let model = init_model(&Arch::custom(vec![16, 24, 10]), 2024).unwrap();
    let cfg = TrainConfig {
        epochs: 10,
        learning_rate: 0.05,
        optimizer: Optimizer::SgdMomentum { momentum: 0.9 },
        ..TrainConfig::default()
    };
    let (trained, _) = train(model, &data, &cfg, None).unwrap();
    assert!(accuracy(&trained, &data) > 0.9);
}

#[test]
fn gradient_check_random_small_models() {
    for seed in 0..20 {
        let m = init_model(&Arch::custom(vec![12, 16, 10]), seed).unwrap();
        let x = random_input(12, seed ^ 0xabc);
        let err = gradient_check(&m, &x, (seed % 10) as u8);
        assert!(err < 1e-4, "seed {seed}: max rel error {err}");
    }
}

#[test]
fn gradient_check_zero_gradient_when_certain() {
    // saturate the true class so probs[label] == 1: gradient ~ 0
    let mut m = init_model(&Arch::custom(vec![4, 10]), 1).unwrap();
    m.layers[0].weights.iter_mut().for_each(|w| *w = 0.0);
    m.layers[0].bias[6] = 60.0;
    let x = vec![0.3f32; 4];
    let (_, max_abs) = gradient_check_with_step(&m, &x, 6, 1e-5, 100);
    assert!(max_abs < 1e-9, "gradient should vanish, got {max_abs}");
}

#[test]
fn finite_difference_error_scales_quadratically() {
    // relative FD error should drop ~4x when the step halves
    let m = init_model(&Arch::custom(vec![8, 12, 10]), 3).unwrap();
    let x = random_input(8, 4);
    let (err_2h, _) = gradient_check_with_step(&m, &x, 2, 2e-3, 200);
    let (err_h, _) = gradient_check_with_step(&m, &x, 2, 1e-3, 200);
    assert!(err_2h > err_h, "larger step should be less accurate");
    let ratio = err_2h / err_h;
    assert!(
        (2.0..8.0).contains(&ratio),
        "expected ~4x error scaling, got {ratio} ({err_2h} vs {err_h})"
    );
}

#[test]
fn model_io_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("model.bin");
    let data = toy_problem(128, 16, 13);
    let cfg = TrainConfig { epochs: 2, learning_rate: 0.1, ..TrainConfig::default() };
    let m = init_model(&Arch::custom(vec![16, 24, 10]), 2024).unwrap();
    let (trained, _) = train(m, &data, &cfg, None).unwrap();
    write_model(&trained, &p).unwrap();
    let back = read_model(&p).unwrap();
    assert_eq!(back, trained);
}

#[test]
fn model_io_rejects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("model.bin");
    let m = init_model(&Arch::custom(vec![4, 10]), 1).unwrap();
    write_model(&m, &p).unwrap();
    let mut bytes = std::fs::read(&p).unwrap();
    bytes[0] ^= 0xff;
    std::fs::write(&p, &bytes).unwrap();
    assert!(matches!(read_model(&p), Err(MlpError::BadModelFile(_))));

    let mut truncated = std::fs::read(&p).unwrap();
    truncated[0] ^= 0xff; // restore magic
    truncated.truncate(truncated.len() - 3);
    std::fs::write(&p, &truncated).unwrap();
    assert!(matches!(read_model(&p), Err(MlpError::Io(_))));
}

mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn softmax_rows_always_normalized(
            seed in 0u64..1000,
            dim in 2usize..20,
        ) {
            let m = init_model(&Arch::custom(vec![dim, 8, 10]), seed).unwrap();
            let x = random_input(dim, seed);
            let p = forward(&m, &x).unwrap();
            let sum: f32 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn cross_entropy_nonnegative(label in 0usize..10, mass in 1e-6f32..1.0) {
            let mut probs = [(1.0 - mass) / 9.0; 10];
            probs[label] = mass;
            let ce = cross_entropy(&probs, label);
            prop_assert!(ce >= 0.0);
            if mass < 1.0 {
                prop_assert!(ce > 0.0);
            }
        }
    }
}
