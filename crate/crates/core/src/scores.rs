//! Nonconformity scores for classification.
//!
//! Every scorer returns a nonconformity value: larger means the label agrees
//! less with the classifier. THR is `1 - p_y`; APS is the probability mass
//! ranked at or above `y`; RAPS adds a rank penalty on top of APS.
//!
//! Ranking is by descending probability, ties broken by ascending label index.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on the sum of a probability vector.
pub const SUM_TOLERANCE: f64 = 1e-6;

/// A validated class-probability vector with at least two entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(values, SUM_TOLERANCE)
    }

    /// Validate with a caller-chosen tolerance on the total mass.
    pub fn with_tolerance(values: Vec<f64>, tolerance: f64) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid(format!(
                "probability vector needs at least 2 entries, got {}",
                values.len()
            )));
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite { index, value });
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::invalid(format!(
                    "probability {value} at index {index} is outside [0, 1]"
                )));
            }
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > tolerance {
            return Err(Error::invalid(format!(
                "probabilities sum to {total}, expected 1 within {tolerance}"
            )));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn num_labels(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label < self.0.len() {
            Ok(())
        } else {
            Err(Error::LabelOutOfRange {
                label,
                num_labels: self.0.len(),
            })
        }
    }

    /// Label indices by descending probability, ties by ascending index.
    pub fn descending_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.0.len()).collect();
        order.sort_by(|&a, &b| self.0[b].total_cmp(&self.0[a]).then(a.cmp(&b)));
        order
    }
}

impl AsRef<[f64]> for ProbabilityVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Result<ProbabilityVector> {
    for (index, &value) in logits.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite { index, value });
        }
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    ProbabilityVector::new(exps.into_iter().map(|e| e / total).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Thr,
    Aps,
    Raps,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 3] = [ScoreKind::Thr, ScoreKind::Aps, ScoreKind::Raps];

    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Thr => "thr",
            ScoreKind::Aps => "aps",
            ScoreKind::Raps => "raps",
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "thr" => Ok(ScoreKind::Thr),
            "aps" => Ok(ScoreKind::Aps),
            "raps" => Ok(ScoreKind::Raps),
            other => Err(Error::invalid(format!("unknown score kind `{other}`"))),
        }
    }
}

/// Scorer choice plus the RAPS penalty and the APS/RAPS randomization switch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub kind: ScoreKind,
    pub lambda: f64,
    pub k_reg: usize,
    pub randomized: bool,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            kind: ScoreKind::Thr,
            lambda: 0.01,
            k_reg: 5,
            randomized: false,
        }
    }
}

impl ScoreConfig {
    pub fn new(kind: ScoreKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::invalid(format!(
                "RAPS lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// Largest score this configuration can produce for `num_labels` labels.
    pub fn max_score(&self, num_labels: usize) -> f64 {
        match self.kind {
            ScoreKind::Thr | ScoreKind::Aps => 1.0,
            ScoreKind::Raps => 1.0 + self.lambda * num_labels.saturating_sub(self.k_reg) as f64,
        }
    }
}

pub fn thr_score(p: &ProbabilityVector, label: usize) -> Result<f64> {
    p.check_label(label)?;
    Ok(1.0 - p.as_slice()[label])
}

/// Returns the APS score and the 1-based rank of `label`.
fn aps_with_rank(p: &ProbabilityVector, label: usize, u: Option<f64>) -> Result<(f64, usize)> {
    p.check_label(label)?;
    let probs = p.as_slice();
    let mut mass = 0.0;
    let mut rank = 0;
    for idx in p.descending_order() {
        mass += probs[idx];
        rank += 1;
        if idx == label {
            break;
        }
    }
    let score = match u {
        Some(u) => mass - u * probs[label],
        None => mass,
    };
    Ok((score, rank))
}

/// Adaptive prediction set score. `u` is the tie-randomization draw; pass
/// `None` for the deterministic variant.
pub fn aps_score(p: &ProbabilityVector, label: usize, u: Option<f64>) -> Result<f64> {
    aps_with_rank(p, label, u).map(|(score, _)| score)
}

pub fn raps_score(
    p: &ProbabilityVector,
    label: usize,
    lambda: f64,
    k_reg: usize,
    u: Option<f64>,
) -> Result<f64> {
    let (score, rank) = aps_with_rank(p, label, u)?;
    Ok(score + lambda * rank.saturating_sub(k_reg) as f64)
}

/// Scores for every candidate label of one sample.
///
/// Randomized APS/RAPS draw a single `u` for the sample, shared by all labels.
pub fn score_all_labels<R: Rng + ?Sized>(
    p: &ProbabilityVector,
    config: &ScoreConfig,
    rng: &mut R,
) -> Vec<f64> {
    let probs = p.as_slice();
    if config.kind == ScoreKind::Thr {
        return probs.iter().map(|&v| 1.0 - v).collect();
    }
    let u = config.randomized.then(|| rng.random::<f64>());
    let mut out = vec![0.0; probs.len()];
    let mut mass = 0.0;
    for (pos, idx) in p.descending_order().into_iter().enumerate() {
        mass += probs[idx];
        let mut score = match u {
            Some(u) => mass - u * probs[idx],
            None => mass,
        };
        if config.kind == ScoreKind::Raps {
            score += config.lambda * (pos + 1).saturating_sub(config.k_reg) as f64;
        }
        out[idx] = score;
    }
    out
}

/// Row-major `N x K` matrix of nonconformity scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    scores: Vec<f64>,
    num_samples: usize,
    num_labels: usize,
    config: ScoreConfig,
}

impl ScoreMatrix {
    pub fn from_probabilities<R: Rng + ?Sized>(
        probs: &[ProbabilityVector],
        config: &ScoreConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let first = probs.first().ok_or(Error::Empty("probability matrix"))?;
        let num_labels = first.num_labels();
        let mut scores = Vec::with_capacity(probs.len() * num_labels);
        for p in probs {
            if p.num_labels() != num_labels {
                return Err(Error::LengthMismatch {
                    what: "labels per probability vector",
                    left: num_labels,
                    right: p.num_labels(),
                });
            }
            scores.extend(score_all_labels(p, config, rng));
        }
        Ok(Self {
            scores,
            num_samples: probs.len(),
            num_labels,
            config: *config,
        })
    }

    /// Wrap precomputed scores. Entries must be finite and non-negative.
    pub fn from_rows(rows: Vec<Vec<f64>>, config: ScoreConfig) -> Result<Self> {
        let num_labels = rows.first().ok_or(Error::Empty("score matrix"))?.len();
        let num_samples = rows.len();
        let mut scores = Vec::with_capacity(num_samples * num_labels);
        for row in rows {
            if row.len() != num_labels {
                return Err(Error::LengthMismatch {
                    what: "score row width",
                    left: num_labels,
                    right: row.len(),
                });
            }
            scores.extend(row);
        }
        if let Some((index, &value)) = scores
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::invalid(format!(
                "score {value} at flat index {index} is not a finite non-negative number"
            )));
        }
        Ok(Self {
            scores,
            num_samples,
            num_labels,
            config,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn kind(&self) -> ScoreKind {
        self.config.kind
    }

    pub fn config(&self) -> &ScoreConfig {
        &self.config
    }

    pub fn row(&self, sample: usize) -> &[f64] {
        &self.scores[sample * self.num_labels..(sample + 1) * self.num_labels]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.scores.chunks_exact(self.num_labels)
    }

    /// The score of each sample at its own label.
    pub fn true_label_scores(&self, labels: &[usize]) -> Result<Vec<f64>> {
        if labels.len() != self.num_samples {
            return Err(Error::LengthMismatch {
                what: "labels vs score rows",
                left: labels.len(),
                right: self.num_samples,
            });
        }
        labels
            .iter()
            .zip(self.rows())
            .map(|(&y, row)| {
                row.get(y).copied().ok_or(Error::LabelOutOfRange {
                    label: y,
                    num_labels: self.num_labels,
                })
            })
            .collect()
    }
}
