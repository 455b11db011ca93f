//! Coverage, set size and shift severity, plus the per-cell report.

use serde::{Deserialize, Serialize};

use crate::calibration::{Method, PredictionSet};
use crate::error::{Error, Result};
use crate::scores::ScoreKind;

impl AsRef<[usize]> for PredictionSet {
    fn as_ref(&self) -> &[usize] {
        &self.members
    }
}

/// Fraction of samples whose label is in their set.
pub fn coverage<S: AsRef<[usize]>>(sets: &[S], labels: &[usize]) -> Result<f64> {
    if sets.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "prediction sets vs labels",
            left: sets.len(),
            right: labels.len(),
        });
    }
    if sets.is_empty() {
        return Err(Error::Empty("prediction sets"));
    }
    let hits: usize = sets
        .iter()
        .zip(labels)
        .map(|(s, y)| usize::from(s.as_ref().contains(y)))
        .sum();
    Ok(hits as f64 / sets.len() as f64)
}

pub fn avg_set_size<S: AsRef<[usize]>>(sets: &[S]) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::Empty("prediction sets"));
    }
    let total: usize = sets.iter().map(|s| s.as_ref().len()).sum();
    Ok(total as f64 / sets.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Severity {
    pub per_sample: Vec<f64>,
    pub mean: f64,
}

/// Reconstruction losses divided by the in-distribution mean loss.
pub fn shift_severity(raw_losses: &[f64], id_mean: f64) -> Result<Severity> {
    if !(id_mean.is_finite() && id_mean > 0.0) {
        return Err(Error::invalid(format!(
            "in-distribution mean loss must be positive, got {id_mean}"
        )));
    }
    if raw_losses.is_empty() {
        return Err(Error::Empty("losses"));
    }
    let per_sample: Vec<f64> = raw_losses.iter().map(|l| l / id_mean).collect();
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(Severity { per_sample, mean })
}

/// One (method, score, shift, trial) outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub method: Method,
    pub score: ScoreKind,
    pub shift: String,
    pub trial: usize,
    pub coverage: f64,
    pub avg_set_size: f64,
    pub severity: Option<f64>,
    /// The (first) threshold and scale used, for auditing.
    pub q: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub score: ScoreKind,
    pub shift: String,
    pub alpha: f64,
    pub trials: usize,
    pub coverage: f64,
    pub avg_set_size: f64,
    pub severity: Option<f64>,
}

impl ReportRow {
    /// `coverage / set size` with four decimals each.
    pub fn cell(&self) -> String {
        format!("{:.4} / {:.4}", self.coverage, self.avg_set_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub alpha: f64,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn row(&self, method: Method, score: ScoreKind, shift: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.score == score && r.shift == shift)
    }
}

/// Average trials per (method, score, shift) cell. Rows keep the order in
/// which each cell first appears.
pub fn build_report(results: &[TrialResult], alpha: f64) -> Result<ExperimentReport> {
    if results.is_empty() {
        return Err(Error::Empty("trial results"));
    }
    let mut keys: Vec<(Method, ScoreKind, &str)> = Vec::new();
    for r in results {
        let key = (r.method, r.score, r.shift.as_str());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let rows = keys
        .into_iter()
        .map(|(method, score, shift)| {
            let cell: Vec<&TrialResult> = results
                .iter()
                .filter(|r| r.method == method && r.score == score && r.shift == shift)
                .collect();
            let n = cell.len() as f64;
            let severities: Option<Vec<f64>> = cell.iter().map(|r| r.severity).collect();
            ReportRow {
                method,
                score,
                shift: shift.to_string(),
                alpha,
                trials: cell.len(),
                coverage: cell.iter().map(|r| r.coverage).sum::<f64>() / n,
                avg_set_size: cell.iter().map(|r| r.avg_set_size).sum::<f64>() / n,
                severity: severities.map(|s| s.iter().sum::<f64>() / n),
            }
        })
        .collect();
    Ok(ExperimentReport { alpha, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trial(method: Method, shift: &str, trial: usize, coverage: f64, size: f64) -> TrialResult {
        TrialResult {
            method,
            score: ScoreKind::Thr,
            shift: shift.into(),
            trial,
            coverage,
            avg_set_size: size,
            severity: Some(1.0),
            q: 0.5,
            scale: 1.0,
        }
    }

    #[test]
    fn coverage_examples() {
        let sets = vec![vec![1, 2], vec![3], vec![0]];
        assert_eq!(coverage(&sets, &[2, 1, 0]).unwrap(), 2.0 / 3.0);
        assert_eq!(coverage(&sets, &[1, 3, 0]).unwrap(), 1.0);
        let empty: Vec<Vec<usize>> = vec![vec![], vec![]];
        assert_eq!(coverage(&empty, &[0, 1]).unwrap(), 0.0);
        assert!(coverage(&sets, &[0, 1]).is_err());
    }

    #[test]
    fn set_size_examples() {
        assert_eq!(
            avg_set_size(&[vec![0], vec![0, 1], vec![0, 1, 2]]).unwrap(),
            2.0
        );
        assert_eq!(avg_set_size(&[vec![4], vec![2]]).unwrap(), 1.0);
        let full: Vec<Vec<usize>> = vec![(0..5).collect(); 3];
        assert_eq!(avg_set_size(&full).unwrap(), 5.0);
        assert!(avg_set_size::<Vec<usize>>(&[]).is_err());
    }

    #[test]
    fn severity_examples() {
        let s = shift_severity(&[2.0, 4.0], 2.0).unwrap();
        assert_eq!(s.per_sample, vec![1.0, 2.0]);
        let losses = [0.5, 1.5, 1.0];
        let own_mean = losses.iter().sum::<f64>() / 3.0;
        assert!((shift_severity(&losses, own_mean).unwrap().mean - 1.0).abs() < 1e-15);
        assert!(shift_severity(&losses, 0.0).is_err());
        assert!(shift_severity(&losses, -1.0).is_err());
    }

    #[test]
    fn report_averages_trials() {
        let results = vec![
            trial(Method::Split, "none", 0, 0.90, 2.0),
            trial(Method::Split, "none", 1, 0.92, 3.0),
        ];
        let report = build_report(&results, 0.1).unwrap();
        let row = &report.rows[0];
        assert_eq!(row.trials, 2);
        assert!((row.coverage - 0.91).abs() < 1e-12);
        assert_eq!(row.cell(), "0.9100 / 2.5000");
        assert!(build_report(&[], 0.1).is_err());
    }

    #[test]
    fn report_has_one_row_per_cell() {
        let mut results = Vec::new();
        for t in 0..3 {
            for m in Method::ALL {
                for s in ["a", "b"] {
                    results.push(trial(m, s, t, 0.9, 1.0));
                }
            }
        }
        assert_eq!(build_report(&results, 0.1).unwrap().rows.len(), 4 * 2);
    }

    proptest! {
        #[test]
        fn coverage_two_ways_and_monotone_growth(
            rows in prop::collection::vec((prop::collection::btree_set(0usize..6, 0..6), 0usize..6), 1..30),
            pick in 0usize..30,
            extra in 0usize..6,
        ) {
            let (sets, labels): (Vec<Vec<usize>>, Vec<usize>) =
                rows.into_iter().map(|(s, y)| (s.into_iter().collect(), y)).unzip();
            let indicator = coverage(&sets, &labels).unwrap();
            let filtered = sets.iter().zip(&labels).filter(|(s, y)| s.contains(y)).count() as f64
                / sets.len() as f64;
            prop_assert_eq!(indicator, filtered);

            let mut grown = sets.clone();
            let i = pick % grown.len();
            if !grown[i].contains(&extra) {
                grown[i].push(extra);
            }
            prop_assert!(coverage(&grown, &labels).unwrap() >= indicator);
            prop_assert!(avg_set_size(&grown).unwrap() >= avg_set_size(&sets).unwrap());
        }
    }
}
