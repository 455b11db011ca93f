//! Conformal thresholds and prediction-set assembly.
//!
//! Four methods share one set rule: label `y` of test sample `i` is kept when
//! `score(i, y) / scale <= q`.
//!
//! | method | `q` | `scale` |
//! |---|---|---|
//! | split | `ceil((1-a)(n+1))`-th smallest calibration score | 1 |
//! | rlscp | same as split | `max(1, RL_test)` |
//! | wqlcp | weighted quantile, weights ∝ calibration loss / (test loss + eps) | `max(1, RL_test)` |
//! | wcp-oracle | weighted quantile, weights = density ratios | 1 |
//!
//! `RL_test` is the `ceil((1-a)N)`-th smallest normalized test loss. Dividing a
//! nonconformity score by the scale is the same as multiplying a confidence
//! score by it, so a scale above one only ever adds labels.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{check_alpha, Error, Result};
use crate::scores::{ScoreKind, ScoreMatrix};

/// Absorbs the rounding in `(1 - alpha) * count` when the exact product is an
/// integer.
const RANK_SLACK: f64 = 1e-9;

pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Split,
    Rlscp,
    Wqlcp,
    WcpOracle,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Split,
        Method::Rlscp,
        Method::Wqlcp,
        Method::WcpOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Split => "split",
            Method::Rlscp => "rlscp",
            Method::Wqlcp => "wqlcp",
            Method::WcpOracle => "wcp-oracle",
        }
    }

    pub fn needs_losses(self) -> bool {
        matches!(self, Method::Rlscp | Method::Wqlcp)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "split" | "splitcp" => Ok(Method::Split),
            "rlscp" => Ok(Method::Rlscp),
            "wqlcp" => Ok(Method::Wqlcp),
            "wcp-oracle" | "wcp" => Ok(Method::WcpOracle),
            other => Err(Error::invalid(format!("unknown method `{other}`"))),
        }
    }
}

/// Nonconformity scores of the calibration samples at their true labels,
/// optionally paired with their reconstruction losses.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    scores: Vec<f64>,
    losses: Option<Vec<f64>>,
    kind: ScoreKind,
}

impl CalibrationSet {
    pub fn new(scores: Vec<f64>, kind: ScoreKind) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Empty("calibration set"));
        }
        check_finite(&scores)?;
        Ok(Self {
            scores,
            losses: None,
            kind,
        })
    }

    pub fn from_matrix(matrix: &ScoreMatrix, labels: &[usize]) -> Result<Self> {
        Self::new(matrix.true_label_scores(labels)?, matrix.kind())
    }

    pub fn with_losses(mut self, losses: Vec<f64>) -> Result<Self> {
        if losses.len() != self.scores.len() {
            return Err(Error::LengthMismatch {
                what: "calibration losses vs scores",
                left: losses.len(),
                right: self.scores.len(),
            });
        }
        check_losses(&losses)?;
        self.losses = Some(losses);
        Ok(self)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn losses(&self) -> Option<&[f64]> {
        self.losses.as_deref()
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Test-side inputs: the full score matrix and, for the loss-aware methods,
/// per-sample reconstruction losses with the normalizer that makes them
/// dimensionless.
#[derive(Debug, Clone, PartialEq)]
pub struct TestBatch {
    scores: ScoreMatrix,
    losses: Option<Vec<f64>>,
    normalizer: f64,
}

impl TestBatch {
    pub fn new(scores: ScoreMatrix) -> Self {
        Self {
            scores,
            losses: None,
            normalizer: 1.0,
        }
    }

    pub fn with_losses(mut self, losses: Vec<f64>, normalizer: f64) -> Result<Self> {
        if losses.len() != self.scores.num_samples() {
            return Err(Error::LengthMismatch {
                what: "test losses vs score rows",
                left: losses.len(),
                right: self.scores.num_samples(),
            });
        }
        check_losses(&losses)?;
        check_normalizer(normalizer)?;
        self.losses = Some(losses);
        self.normalizer = normalizer;
        Ok(self)
    }

    pub fn scores(&self) -> &ScoreMatrix {
        &self.scores
    }

    pub fn losses(&self) -> Option<&[f64]> {
        self.losses.as_deref()
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn len(&self) -> usize {
        self.scores.num_samples()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.num_samples() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMethod {
    Split,
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    /// Upper bound on scaled nonconformity; `+inf` keeps every label.
    pub q: f64,
    pub alpha: f64,
    pub method: ThresholdMethod,
    /// Divisor applied to test scores, at least one.
    pub scale: f64,
}

impl Threshold {
    pub fn admits(&self, score: f64) -> bool {
        score / self.scale <= self.q
    }

    fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    /// Ascending label indices.
    pub members: Vec<usize>,
    pub threshold: Threshold,
}

impl PredictionSet {
    pub fn from_scores(scores: &[f64], threshold: Threshold) -> Self {
        let members = scores
            .iter()
            .enumerate()
            .filter(|(_, &s)| threshold.admits(s))
            .map(|(y, _)| y)
            .collect();
        Self { members, threshold }
    }

    pub fn contains(&self, label: usize) -> bool {
        self.members.binary_search(&label).is_ok()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

fn check_losses(losses: &[f64]) -> Result<()> {
    check_finite(losses)?;
    match losses.iter().position(|&l| l < 0.0) {
        Some(i) => Err(Error::invalid(format!(
            "negative loss {} at index {i}",
            losses[i]
        ))),
        None => Ok(()),
    }
}

fn check_normalizer(normalizer: f64) -> Result<()> {
    if normalizer.is_finite() && normalizer > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "loss normalizer must be positive and finite, got {normalizer}"
        )))
    }
}

/// 1-based rank `ceil(level * count)`, at least 1.
fn order_rank(level: f64, count: usize) -> usize {
    let raw = level * count as f64;
    ((raw - RANK_SLACK).ceil().max(1.0)) as usize
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Split-conformal threshold: the `ceil((1-a)(n+1))`-th smallest calibration
/// score, or `+inf` when that rank exceeds `n`.
pub fn split_threshold(cal: &CalibrationSet, alpha: f64) -> Result<Threshold> {
    check_alpha(alpha)?;
    let n = cal.len();
    if n == 0 {
        return Err(Error::Empty("calibration set"));
    }
    let rank = order_rank(1.0 - alpha, n + 1);
    let q = if rank > n {
        f64::INFINITY
    } else {
        sorted(cal.scores())[rank - 1]
    };
    Ok(Threshold {
        q,
        alpha,
        method: ThresholdMethod::Split,
        scale: 1.0,
    })
}

/// Calibration scores sorted once, reused across many weight vectors.
struct SortedScores<'a> {
    scores: &'a [f64],
    order: Vec<usize>,
}

impl<'a> SortedScores<'a> {
    fn new(scores: &'a [f64]) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        Self { scores, order }
    }

    /// Smallest score whose cumulative weight reaches `(1 - alpha)` of the
    /// total. Weights are rescaled by their maximum first, so equal weights
    /// become exactly one and the uniform case reduces to counting.
    fn quantile(&self, weights: &[f64], alpha: f64) -> f64 {
        let max = weights.iter().copied().fold(0.0, f64::max);
        let total: f64 = self.order.iter().map(|&j| weights[j] / max).sum();
        let target = (1.0 - alpha) * total;
        let mut mass = 0.0;
        for (pos, &j) in self.order.iter().enumerate() {
            mass += weights[j] / max;
            let s = self.scores[j];
            let group_ends = self
                .order
                .get(pos + 1)
                .is_none_or(|&next| self.scores[next].total_cmp(&s) != Ordering::Equal);
            if group_ends && mass >= target {
                return s;
            }
        }
        // the final cumulative mass equals `total`, which is >= target
        self.scores[*self.order.last().expect("non-empty")]
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    for (index, &w) in weights.iter().enumerate() {
        if !w.is_finite() {
            return Err(Error::NonFinite { index, value: w });
        }
        if w <= 0.0 {
            return Err(Error::invalid(format!(
                "weight {w} at index {index} must be strictly positive"
            )));
        }
    }
    Ok(())
}

/// `inf { q : sum_j w_j [s_j <= q] >= (1 - alpha) sum_j w_j }`.
///
/// The infimum is always one of the input scores. Multiplying every weight by
/// the same positive constant does not change the result.
pub fn weighted_quantile(scores: &[f64], weights: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if scores.is_empty() {
        return Err(Error::Empty("weighted quantile scores"));
    }
    if scores.len() != weights.len() {
        return Err(Error::LengthMismatch {
            what: "scores vs weights",
            left: scores.len(),
            right: weights.len(),
        });
    }
    check_finite(scores)?;
    check_weights(weights)?;
    Ok(SortedScores::new(scores).quantile(weights, alpha))
}

/// Shift-severity estimate of a test batch: the `ceil((1-a)N)`-th smallest of
/// `loss / normalizer`.
pub fn rl_threshold(test_losses: &[f64], alpha: f64, normalizer: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if test_losses.is_empty() {
        return Err(Error::Empty("test losses"));
    }
    check_losses(test_losses)?;
    check_normalizer(normalizer)?;
    let normalized: Vec<f64> = test_losses.iter().map(|l| l / normalizer).collect();
    let rank = order_rank(1.0 - alpha, normalized.len()).min(normalized.len());
    Ok(sorted(&normalized)[rank - 1])
}

fn check_kinds(test: &TestBatch, cal: &CalibrationSet) -> Result<()> {
    if test.scores().kind() != cal.kind() {
        return Err(Error::ScoreKindMismatch {
            calibration: cal.kind().name(),
            test: test.scores().kind().name(),
        });
    }
    Ok(())
}

fn assemble(test: &TestBatch, threshold: Threshold) -> Vec<PredictionSet> {
    test.scores()
        .rows()
        .map(|row| PredictionSet::from_scores(row, threshold))
        .collect()
}

/// `max(1, RL_test)` for the batch, or a missing-loss error naming `method`.
fn loss_scale(test: &TestBatch, alpha: f64, method: &'static str) -> Result<f64> {
    let losses = test.losses().ok_or(Error::MissingLosses {
        method,
        split: "test",
    })?;
    Ok(rl_threshold(losses, alpha, test.normalizer())?.max(1.0))
}

pub fn splitcp_predict(
    test: &TestBatch,
    cal: &CalibrationSet,
    alpha: f64,
) -> Result<Vec<PredictionSet>> {
    check_kinds(test, cal)?;
    let threshold = split_threshold(cal, alpha)?;
    Ok(assemble(test, threshold))
}

/// Split-conformal threshold with test scores divided by `max(1, RL_test)`.
/// When `RL_test <= 1` the sets equal the split-conformal sets; otherwise every
/// set is a superset of its split-conformal counterpart.
pub fn rlscp_predict(
    test: &TestBatch,
    cal: &CalibrationSet,
    alpha: f64,
) -> Result<Vec<PredictionSet>> {
    check_kinds(test, cal)?;
    let scale = loss_scale(test, alpha, "rlscp")?;
    let threshold = split_threshold(cal, alpha)?.with_scale(scale);
    Ok(assemble(test, threshold))
}

/// Calibration weights `max(L_cal_j, eps) / (L_test + eps)`.
pub fn wqlcp_weights(cal_losses: &[f64], test_loss: f64, epsilon: f64) -> Result<Vec<f64>> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::invalid(format!(
            "epsilon must be positive and finite, got {epsilon}"
        )));
    }
    check_losses(cal_losses)?;
    check_losses(&[test_loss])?;
    let denom = test_loss + epsilon;
    Ok(cal_losses.iter().map(|&l| l.max(epsilon) / denom).collect())
}

/// Which test loss sits in the weight denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// Each test sample uses its own loss, giving one weight vector per sample.
    #[default]
    PerSample,
    /// One weight vector for the batch with `RL_test` as the denominator.
    Aggregate,
}

impl fmt::Display for WeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightMode::PerSample => "per-sample",
            WeightMode::Aggregate => "aggregate",
        })
    }
}

impl std::str::FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-sample" => Ok(WeightMode::PerSample),
            "aggregate" => Ok(WeightMode::Aggregate),
            other => Err(Error::invalid(format!("unknown weight mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WqlcpConfig {
    pub epsilon: f64,
    pub weight_mode: WeightMode,
}

impl Default for WqlcpConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            weight_mode: WeightMode::PerSample,
        }
    }
}

/// Loss-weighted quantile of the calibration scores combined with the
/// `max(1, RL_test)` score scaling.
///
/// Steps: weights from calibration/test loss ratios, weighted quantile `q`,
/// scale `c = max(1, RL_test)`, then `{y : s(i, y) / c <= q}` per sample.
pub fn wqlcp_predict(
    test: &TestBatch,
    cal: &CalibrationSet,
    alpha: f64,
    config: &WqlcpConfig,
) -> Result<Vec<PredictionSet>> {
    check_kinds(test, cal)?;
    check_alpha(alpha)?;
    let cal_losses = cal.losses().ok_or(Error::MissingLosses {
        method: "wqlcp",
        split: "calibration",
    })?;
    let test_losses = test.losses().ok_or(Error::MissingLosses {
        method: "wqlcp",
        split: "test",
    })?;
    let rl_test = rl_threshold(test_losses, alpha, test.normalizer())?;
    let scale = rl_test.max(1.0);
    let sorted = SortedScores::new(cal.scores());
    let threshold_for = |weights: Vec<f64>| Threshold {
        q: sorted.quantile(&weights, alpha),
        alpha,
        method: ThresholdMethod::Weighted,
        scale,
    };

    match config.weight_mode {
        WeightMode::Aggregate => {
            let weights = wqlcp_weights(cal_losses, rl_test, config.epsilon)?;
            Ok(assemble(test, threshold_for(weights)))
        }
        WeightMode::PerSample => test
            .scores()
            .rows()
            .zip(test_losses)
            .map(|(row, &loss)| {
                let weights = wqlcp_weights(cal_losses, loss, config.epsilon)?;
                Ok(PredictionSet::from_scores(row, threshold_for(weights)))
            })
            .collect(),
    }
}

/// Weighted split conformal with caller-supplied likelihood ratios on the
/// calibration points. No weight is placed on the test point itself.
pub fn wcp_oracle_predict(
    test: &TestBatch,
    cal: &CalibrationSet,
    alpha: f64,
    density_ratios: &[f64],
) -> Result<Vec<PredictionSet>> {
    check_kinds(test, cal)?;
    let q = weighted_quantile(cal.scores(), density_ratios, alpha)?;
    let threshold = Threshold {
        q,
        alpha,
        method: ThresholdMethod::Weighted,
        scale: 1.0,
    };
    Ok(assemble(test, threshold))
}
