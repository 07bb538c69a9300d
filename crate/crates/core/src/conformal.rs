//! Split/inductive conformal prediction with p-value and e-value rules.
//!
//! Nonconformity score: cross-entropy of the model's softmax output at a
//! candidate label. Calibration computes scores at the true labels of the
//! held-out calibration half; prediction enumerates all ten candidate
//! labels and keeps those scoring strictly below the rule's threshold.
//!
//! Two threshold rules:
//!
//! * **p-value**: the `⌊(1−ε)(n+1)⌋`-th order statistic (1-based, ascending)
//!   of the calibration scores. For ε = 0.4, n = 5000 this is index 3000.
//! * **e-value** (bounded-from-below predictor): with exchangeable
//!   nonnegative scores `L_1..L_{n+1}`,
//!
//!   ```text
//!   P{ L_{n+1} ≥ (1/α)·(1/(1 + (1 − 1/α)/n)) · mean(L_1..L_n) } ≤ α
//!   ```
//!
//!   so the threshold is `e_factor(α, n) × mean(calibration scores)`.
//!
//! Both inequalities are Monte Carlo-validated by [`mc_validate_lemma1`] and
//! [`mc_validate_lemma2`] under arbitrary iid samplers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{ImageSet, NUM_CLASSES};
use crate::fingerprint::fingerprint_set;
use crate::mlp::{cross_entropy, forward, MlpError, MlpModel, TrainData};

#[derive(Debug, Error)]
pub enum ConformalError {
    #[error("empty calibration set")]
    EmptyCalibration,
    #[error("non-finite or negative score at index {0}")]
    BadScore(usize),
    #[error("epsilon {epsilon} infeasible for n={n}: order-statistic index {index} out of 1..={n}")]
    CoverageInfeasible { epsilon: f64, n: usize, index: i64 },
    #[error("alpha must lie in (1/(n+1), 1], got {alpha} with n={n}")]
    BadAlpha { alpha: f64, n: usize },
    #[error("degenerate calibration: mean score is zero")]
    DegenerateCalibration,
    #[error(transparent)]
    Model(#[from] MlpError),
}

/// Prediction-set rule tag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rule {
    PValue { epsilon: f64 },
    EValue { alpha: f64 },
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::PValue { .. } => "p",
            Rule::EValue { .. } => "e",
        }
    }

    pub fn level(&self) -> f64 {
        match *self {
            Rule::PValue { epsilon } => epsilon,
            Rule::EValue { alpha } => alpha,
        }
    }
}

/// Ascending-sorted nonconformity scores from the calibration split.
#[derive(Debug, Clone)]
pub struct CalibrationScores {
    scores: Vec<f64>,
    source: String,
}

impl CalibrationScores {
    /// Sorts and validates raw scores (finite, nonnegative, nonempty).
    pub fn new(mut scores: Vec<f64>, source: String) -> Result<Self, ConformalError> {
        if scores.is_empty() {
            return Err(ConformalError::EmptyCalibration);
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite() || *s < 0.0) {
            return Err(ConformalError::BadScore(i));
        }
        scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(CalibrationScores { scores, source })
    }

    pub fn n(&self) -> usize {
        self.scores.len()
    }

    /// Scores in ascending order.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn mean(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }

    /// Model/dataset fingerprint recorded at calibration time.
    pub fn source(&self) -> &str {
        &self.source
    }
}

/// One example's prediction set.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    /// Candidate labels scoring strictly below the threshold.
    pub labels: Vec<u8>,
    pub example_id: usize,
    pub rule: Rule,
    pub threshold: f64,
}

impl PredictionSet {
    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn contains(&self, label: u8) -> bool {
        self.labels.contains(&label)
    }
}

/// Nonconformity score of the candidate pair `(x, y)`.
pub fn score(model: &MlpModel, x: &[f32], y: u8) -> Result<f64, ConformalError> {
    let probs = forward(model, x)?;
    Ok(f64::from(cross_entropy(&probs, y as usize)))
}

/// Scores the calibration set at its true labels.
pub fn calibrate(model: &MlpModel, cal: &ImageSet) -> Result<CalibrationScores, ConformalError> {
    if cal.is_empty() {
        return Err(ConformalError::EmptyCalibration);
    }
    let data = TrainData::from_set(cal);
    let scores = true_label_scores(model, &data);
    let source = format!(
        "model={}/seed={} data={}",
        model.arch_id,
        model.train_seed,
        fingerprint_set(cal)
    );
    CalibrationScores::new(scores, source)
}

/// Cross-entropy scores at the true labels, one per example.
pub fn true_label_scores(model: &MlpModel, data: &TrainData) -> Vec<f64> {
    let grid = score_grid(model, data);
    data.labels
        .iter()
        .enumerate()
        .map(|(i, &y)| grid[i * NUM_CLASSES + y as usize])
        .collect()
}

/// Scores for every (example, candidate label) pair, row-major.
pub fn score_grid(model: &MlpModel, data: &TrainData) -> Vec<f64> {
    let n = data.count();
    let mut out = vec![0.0f64; n * NUM_CLASSES];
    const CHUNK: usize = 512;
    for start in (0..n).step_by(CHUNK) {
        let rows = CHUNK.min(n - start);
        let probs = model.forward_batch(
            &data.features[start * data.dim..(start + rows) * data.dim],
            rows,
        );
        for r in 0..rows {
            for c in 0..NUM_CLASSES {
                out[(start + r) * NUM_CLASSES + c] =
                    f64::from(cross_entropy(&probs[r * NUM_CLASSES..(r + 1) * NUM_CLASSES], c));
            }
        }
    }
    out
}

/// p-value threshold: the `⌊(1−ε)(n+1)⌋`-th ascending order statistic.
pub fn p_threshold(cal: &CalibrationScores, epsilon: f64) -> Result<f64, ConformalError> {
    let n = cal.n();
    if epsilon <= 0.0 || epsilon >= 1.0 {
        return Err(ConformalError::CoverageInfeasible {
            epsilon,
            n,
            index: -1,
        });
    }
    let index = p_index(n, epsilon);
    if index < 1 || index > n as i64 {
        return Err(ConformalError::CoverageInfeasible { epsilon, n, index });
    }
    Ok(cal.scores[(index - 1) as usize])
}

/// 1-based order-statistic index selected by the p-value rule.
pub fn p_index(n: usize, epsilon: f64) -> i64 {
    ((1.0 - epsilon) * (n as f64 + 1.0)).floor() as i64
}

/// The e-value threshold multiplier `(1/α) · 1/(1 + (1 − 1/α)/n)`.
pub fn e_factor(alpha: f64, n: usize) -> f64 {
    (1.0 / alpha) * (1.0 / (1.0 + (1.0 - 1.0 / alpha) / n as f64))
}

/// e-value (BB-predictor) threshold: `e_factor(α, n) × mean(scores)`.
pub fn e_threshold(cal: &CalibrationScores, alpha: f64) -> Result<f64, ConformalError> {
    let n = cal.n();
    // below 1/(n+1) the factor's denominator crosses zero and the bound is vacuous
    if alpha <= 1.0 / (n as f64 + 1.0) || alpha > 1.0 {
        return Err(ConformalError::BadAlpha { alpha, n });
    }
    let mean = cal.mean();
    if mean <= 0.0 {
        return Err(ConformalError::DegenerateCalibration);
    }
    Ok(e_factor(alpha, n) * mean)
}

/// Labels whose score is strictly below `threshold` (ties excluded).
pub fn predict_set(
    model: &MlpModel,
    x: &[f32],
    threshold: f64,
    rule: Rule,
) -> Result<PredictionSet, ConformalError> {
    let probs = forward(model, x)?;
    let labels = (0..NUM_CLASSES as u8)
        .filter(|&y| f64::from(cross_entropy(&probs, y as usize)) < threshold)
        .collect();
    Ok(PredictionSet {
        labels,
        example_id: 0,
        rule,
        threshold,
    })
}

/// Prediction sets for a whole evaluation split, `example_id` = row index.
pub fn predict_sets(
    model: &MlpModel,
    data: &TrainData,
    threshold: f64,
    rule: Rule,
) -> Vec<PredictionSet> {
    let grid = score_grid(model, data);
    (0..data.count())
        .map(|i| {
            let labels = (0..NUM_CLASSES as u8)
                .filter(|&y| grid[i * NUM_CLASSES + y as usize] < threshold)
                .collect();
            PredictionSet {
                labels,
                example_id: i,
                rule,
                threshold,
            }
        })
        .collect()
}

/// Score distributions for the Monte Carlo lemma validators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreSampler {
    /// Uniform(0, 1).
    Uniform,
    /// Exponential with the given rate.
    Exponential { rate: f64 },
    /// Pareto with scale 1 and the given shape (heavy-tailed below 2).
    Pareto { shape: f64 },
    /// All draws equal this constant (tie-degenerate case).
    Constant(f64),
}

impl ScoreSampler {
    pub fn name(&self) -> String {
        match self {
            ScoreSampler::Uniform => "uniform".into(),
            ScoreSampler::Exponential { rate } => format!("exponential({rate})"),
            ScoreSampler::Pareto { shape } => format!("pareto({shape})"),
            ScoreSampler::Constant(c) => format!("constant({c})"),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            ScoreSampler::Uniform => rng.random_range(0.0..1.0),
            ScoreSampler::Exponential { rate } => {
                let u: f64 = rng.random_range(0.0..1.0);
                -(1.0 - u).ln() / rate
            }
            ScoreSampler::Pareto { shape } => {
                let u: f64 = rng.random_range(0.0..1.0);
                (1.0 - u).powf(-1.0 / shape)
            }
            ScoreSampler::Constant(c) => c,
        }
    }
}

/// Empirically checks the p-value coverage inequality.
///
/// Simulates `L_1..L_{n+1}` iid from `dist`, counts
/// `U = #{i : L_i ≥ L_{n+1}}`, and returns the frequency of
/// `U/(n+1) > ε` across trials. The inequality asserts this is ≥ 1−ε.
pub fn mc_validate_lemma1(
    n: usize,
    epsilon: f64,
    trials: usize,
    dist: ScoreSampler,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ok = 0usize;
    let mut draws = vec![0.0f64; n + 1];
    for _ in 0..trials {
        for d in draws.iter_mut() {
            *d = dist.sample(&mut rng);
        }
        let last = draws[n];
        let u = draws.iter().filter(|&&v| v >= last).count();
        if u as f64 / (n as f64 + 1.0) > epsilon {
            ok += 1;
        }
    }
    ok as f64 / trials as f64
}

/// Empirically checks the e-value inequality of the BB-predictor.
///
/// Simulates `L_1..L_{n+1}` iid nonnegative from `dist` and returns the
/// frequency of `L_{n+1} ≥ e_factor(α, n) × mean(L_1..L_n)`. The inequality
/// asserts this is ≤ α.
pub fn mc_validate_lemma2(
    n: usize,
    alpha: f64,
    trials: usize,
    dist: ScoreSampler,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factor = e_factor(alpha, n);
    let mut violations = 0usize;
    let mut draws = vec![0.0f64; n + 1];
    for _ in 0..trials {
        for d in draws.iter_mut() {
            *d = dist.sample(&mut rng);
        }
        let mut sum = 0.0f64;
        for &d in &draws[..n] {
            sum += d;
        }
        let mean = sum / n as f64;
        if draws[n] >= factor * mean {
            violations += 1;
        }
    }
    violations as f64 / trials as f64
}

/// Binomial 3σ half-width for an empirical frequency.
pub fn three_sigma(p: f64, trials: usize) -> f64 {
    3.0 * (p * (1.0 - p) / trials as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{init_model, Arch};
    use approx::assert_relative_eq;

    fn cal(scores: Vec<f64>) -> CalibrationScores {
        CalibrationScores::new(scores, "test".into()).unwrap()
    }

    #[test]
    fn calibration_sorts_and_validates() {
        let c = cal(vec![3.0, 1.0, 2.0]);
        assert_eq!(c.scores(), &[1.0, 2.0, 3.0]);
        assert!(matches!(
            CalibrationScores::new(vec![], "t".into()),
            Err(ConformalError::EmptyCalibration)
        ));
        assert!(matches!(
            CalibrationScores::new(vec![1.0, -0.5], "t".into()),
            Err(ConformalError::BadScore(1))
        ));
        assert!(matches!(
            CalibrationScores::new(vec![1.0, f64::NAN], "t".into()),
            Err(ConformalError::BadScore(1))
        ));
    }

    #[test]
    fn p_threshold_direct_index_arithmetic() {
        // scores 1..=9, ε=0.5: k = floor(0.5*10) = 5 → threshold 5
        let c = cal((1..=9).map(f64::from).collect());
        assert_eq!(p_threshold(&c, 0.5).unwrap(), 5.0);
    }

    #[test]
    fn p_threshold_boundary_minimum() {
        // near-largest feasible ε with n=9: k = floor(0.11·10) = 1 → minimum score
        // (ε = 0.9 exactly is FP-infeasible: the f64 nearest 0.9 makes
        // (1−ε)(n+1) land just under 1)
        let c = cal((1..=9).map(f64::from).collect());
        assert_eq!(p_threshold(&c, 0.89).unwrap(), 1.0);
        assert_eq!(p_threshold(&c, 0.85).unwrap(), 1.0);
    }

    #[test]
    fn p_threshold_reference_index() {
        // ε=0.4, n=5000 → index 3000 exactly
        assert_eq!(p_index(5000, 0.4), 3000);
        let scores: Vec<f64> = (0..5000).map(|i| i as f64 * 1e-3).collect();
        let expected = scores[2999];
        let c = cal(scores);
        assert_eq!(p_threshold(&c, 0.4).unwrap(), expected);
    }

    #[test]
    fn p_threshold_infeasible_epsilon() {
        // ε above n/(n+1) pushes the order-statistic index below 1
        let c = cal(vec![1.0, 2.0, 3.0]);
        assert!(matches!(
            p_threshold(&c, 0.95),
            Err(ConformalError::CoverageInfeasible { index: 0, .. })
        ));
        // ε at the boundaries of (0,1) is rejected outright
        assert!(matches!(
            p_threshold(&c, 0.0),
            Err(ConformalError::CoverageInfeasible { .. })
        ));
        assert!(matches!(
            p_threshold(&c, 1.0),
            Err(ConformalError::CoverageInfeasible { .. })
        ));
    }

    #[test]
    fn e_factor_reference_value() {
        // α=0.4, n=5000: 2.5 / (1 − 1.5/5000) = 2.500750…
        let f = e_factor(0.4, 5000);
        assert_relative_eq!(f, 2.5 / (1.0 - 1.5 / 5000.0), max_relative = 1e-15);
        assert_relative_eq!(f, 2.5007502250675204, max_relative = 1e-12);
    }

    #[test]
    fn e_threshold_alpha_one_is_mean() {
        let c = cal(vec![1.0, 2.0, 3.0, 6.0]);
        assert_relative_eq!(e_threshold(&c, 1.0).unwrap(), 3.0, max_relative = 1e-15);
    }

    #[test]
    fn e_threshold_is_factor_times_mean() {
        let scores: Vec<f64> = (1..=5000).map(|i| (i as f64).sqrt()).collect();
        let mean = scores.iter().sum::<f64>() / 5000.0;
        let c = cal(scores);
        let t = e_threshold(&c, 0.4).unwrap();
        assert_relative_eq!(t, e_factor(0.4, 5000) * mean, max_relative = 1e-12);
    }

    #[test]
    fn e_threshold_rejects_bad_alpha() {
        let c = cal(vec![1.0, 2.0]);
        assert!(matches!(
            e_threshold(&c, 0.0),
            Err(ConformalError::BadAlpha { .. })
        ));
        assert!(matches!(
            e_threshold(&c, 1.5),
            Err(ConformalError::BadAlpha { .. })
        ));
        // n=2: alpha must exceed 1/3
        assert!(matches!(
            e_threshold(&c, 0.2),
            Err(ConformalError::BadAlpha { .. })
        ));
    }

    #[test]
    fn e_threshold_degenerate_zero_mean() {
        let c = cal(vec![0.0, 0.0, 0.0]);
        assert!(matches!(
            e_threshold(&c, 0.5),
            Err(ConformalError::DegenerateCalibration)
        ));
    }

    #[test]
    fn predict_set_extremes() {
        let model = init_model(&Arch::custom(vec![8, 12, 10]), 5).unwrap();
        let x = vec![0.5f32; 8];
        let all = predict_set(&model, &x, 1e6, Rule::EValue { alpha: 0.4 }).unwrap();
        assert_eq!(all.size(), 10);
        let none = predict_set(&model, &x, 0.0, Rule::PValue { epsilon: 0.4 }).unwrap();
        assert_eq!(none.size(), 0);
    }

    #[test]
    fn predict_set_monotone_in_threshold() {
        let model = init_model(&Arch::custom(vec![8, 12, 10]), 6).unwrap();
        let x: Vec<f32> = (0..8).map(|i| i as f32 / 8.0).collect();
        let mut prev: Option<PredictionSet> = None;
        for t in [0.5, 1.0, 1.5, 2.0, 2.302, 2.5, 3.0, 5.0] {
            let s = predict_set(&model, &x, t, Rule::EValue { alpha: 0.4 }).unwrap();
            if let Some(p) = &prev {
                assert!(
                    p.labels.iter().all(|l| s.labels.contains(l)),
                    "threshold {t}: set not a superset of smaller-threshold set"
                );
            }
            prev = Some(s);
        }
    }

    #[test]
    fn score_of_certain_and_uniform_model() {
        // zero weights, bias saturating class 2 → score(2) = 0
        let mut m = init_model(&Arch::custom(vec![4, 10]), 1).unwrap();
        m.layers[0].weights.iter_mut().for_each(|w| *w = 0.0);
        m.layers[0].bias[2] = 80.0;
        let x = vec![0.1f32; 4];
        assert_eq!(score(&m, &x, 2).unwrap(), 0.0);

        // all-zero model is uniform → score = ln 10 for every label
        let mut u = init_model(&Arch::custom(vec![4, 10]), 1).unwrap();
        u.layers[0].weights.iter_mut().for_each(|w| *w = 0.0);
        for y in 0..10 {
            assert_relative_eq!(
                score(&u, &x, y).unwrap(),
                std::f64::consts::LN_10,
                epsilon = 1e-6
            );
        }
    }

    #[test]
    fn calibrate_identical_examples_identical_scores() {
        use crate::data::{ImageSet, Provenance, IMAGE_BYTES};
        let mut data = vec![0u8; 2 * IMAGE_BYTES];
        data[10] = 128;
        data[IMAGE_BYTES + 10] = 128;
        let set = ImageSet::new(data, vec![4, 4], Provenance::Plaintext).unwrap();
        let model = init_model(&Arch::reference(), 3).unwrap();
        let c = calibrate(&model, &set).unwrap();
        assert_eq!(c.n(), 2);
        assert_eq!(c.scores()[0], c.scores()[1]);
    }

    #[test]
    fn calibrate_is_permutation_invariant() {
        use crate::data::{ImageSet, Provenance, IMAGE_BYTES};
        let mut data = vec![0u8; 4 * IMAGE_BYTES];
        for i in 0..4 {
            data[i * IMAGE_BYTES + i] = 200;
        }
        let set = ImageSet::new(data, vec![0, 1, 2, 3], Provenance::Plaintext).unwrap();
        let model = init_model(&Arch::reference(), 3).unwrap();
        let a = calibrate(&model, &set).unwrap();
        let b = calibrate(&model, &set.subset(&[2, 0, 3, 1])).unwrap();
        assert_eq!(a.scores(), b.scores());
    }

    #[test]
    fn lemma1_uniform_coverage() {
        let freq = mc_validate_lemma1(99, 0.1, 20_000, ScoreSampler::Uniform, 42);
        assert!(freq >= 0.9 - three_sigma(0.9, 20_000), "freq={freq}");
    }

    #[test]
    fn lemma1_exponential_coverage() {
        let freq = mc_validate_lemma1(50, 0.4, 20_000, ScoreSampler::Exponential { rate: 1.0 }, 43);
        assert!(freq >= 0.6 - three_sigma(0.6, 20_000), "freq={freq}");
    }

    #[test]
    fn lemma1_constant_ties_always_covered() {
        let freq = mc_validate_lemma1(20, 0.5, 1000, ScoreSampler::Constant(3.5), 44);
        assert_eq!(freq, 1.0);
    }

    #[test]
    fn lemma2_exponential_violation_rate() {
        let rate = mc_validate_lemma2(500, 0.4, 20_000, ScoreSampler::Exponential { rate: 1.0 }, 45);
        assert!(rate <= 0.4 + three_sigma(0.4, 20_000), "rate={rate}");
    }

    #[test]
    fn lemma2_pareto_heavy_tail_still_bounded() {
        let rate = mc_validate_lemma2(500, 0.4, 20_000, ScoreSampler::Pareto { shape: 1.5 }, 46);
        assert!(rate <= 0.4 + three_sigma(0.4, 20_000), "rate={rate}");
    }

    #[test]
    fn lemma2_constants_never_violate() {
        // ratio = 1 < factor for α < 1
        let rate = mc_validate_lemma2(100, 0.4, 500, ScoreSampler::Constant(2.0), 47);
        assert_eq!(rate, 0.0);
    }

    mod proptests {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(100))]

            // order-statistic agreement with a naive sort oracle
            #[test]
            fn p_threshold_matches_naive_oracle(
                seed in 0u64..10_000,
                n in 1usize..1000,
                epsilon in 0.01f64..0.99,
            ) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
                let mut sorted = raw.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let k = ((1.0 - epsilon) * (n as f64 + 1.0)).floor() as i64;
                let c = CalibrationScores::new(raw, "prop".into()).unwrap();
                match p_threshold(&c, epsilon) {
                    Ok(t) => {
                        prop_assert!(k >= 1 && k <= n as i64);
                        prop_assert_eq!(t, sorted[(k - 1) as usize]);
                    }
                    Err(ConformalError::CoverageInfeasible { .. }) => {
                        prop_assert!(k < 1 || k > n as i64);
                    }
                    Err(e) => prop_assert!(false, "unexpected error {:?}", e),
                }
            }

            // e-threshold is exactly factor × mean for all sampled (α, n)
            #[test]
            fn e_threshold_formula_exact(
                seed in 0u64..10_000,
                n in 1usize..2000,
                alpha in 0.05f64..1.0,
            ) {
                prop_assume!(alpha > 1.0 / (n as f64 + 1.0));
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.001..5.0)).collect();
                let mean = raw.iter().sum::<f64>() / n as f64;
                let c = CalibrationScores::new(raw, "prop".into()).unwrap();
                let t = e_threshold(&c, alpha).unwrap();
                let expected = e_factor(alpha, n) * mean;
                prop_assert!((t - expected).abs() <= 1e-12 * expected.abs().max(1.0));
            }
        }
    }
}
