//! Seeded inputs shared by the criterion benchmarks.

use rand::Rng;
use shiftcp::calibration::{CalibrationSet, TestBatch};
use shiftcp::scores::{softmax, ProbabilityVector, ScoreConfig, ScoreKind, ScoreMatrix};
use shiftcp::seed;

/// Random probability vectors over `k` labels.
pub fn probabilities(n: usize, k: usize, seed: u64) -> Vec<ProbabilityVector> {
    let mut rng = seed::rng(seed);
    (0..n)
        .map(|_| {
            let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            softmax(&logits).expect("finite logits")
        })
        .collect()
}

pub fn positive_values(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed);
    (0..n).map(|_| rng.random_range(0.1..10.0)).collect()
}

/// Calibration set with losses and a matching test batch, both THR-scored.
pub fn calibration_problem(n_cal: usize, n_test: usize, k: usize) -> (CalibrationSet, TestBatch) {
    let config = ScoreConfig::new(ScoreKind::Thr);
    let mut rng = seed::rng(0);
    let cal_probs = probabilities(n_cal, k, 1);
    let labels: Vec<usize> = (0..n_cal).map(|i| i % k).collect();
    let cal_matrix = ScoreMatrix::from_probabilities(&cal_probs, &config, &mut rng).expect("valid");
    let cal = CalibrationSet::from_matrix(&cal_matrix, &labels)
        .and_then(|c| c.with_losses(positive_values(n_cal, 2)))
        .expect("valid calibration set");
    let test_matrix =
        ScoreMatrix::from_probabilities(&probabilities(n_test, k, 3), &config, &mut rng)
            .expect("valid");
    let test = TestBatch::new(test_matrix)
        .with_losses(positive_values(n_test, 4), 5.0)
        .expect("valid test batch");
    (cal, test)
}
