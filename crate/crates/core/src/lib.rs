//! Conformal prediction for classification under distribution shift.
//!
//! The crate covers the whole pipeline:
//!
//! - [`scores`]: THR, APS and RAPS nonconformity scores from class probabilities.
//! - [`calibration`]: split-conformal thresholds, reconstruction-loss scaled
//!   sets (RLSCP), loss-ratio weighted quantiles (WQLCP) and an oracle
//!   likelihood-ratio weighted baseline (WCP).
//! - [`vae`]: a small dense beta-VAE with hand-written backpropagation whose
//!   per-sample reconstruction loss acts as the shift signal.
//! - [`synthgen`]: Gaussian-mixture data with controllable covariate shift, a
//!   softmax probe classifier and exact density ratios.
//! - [`metrics`], [`io`] and [`experiment`]: evaluation, file formats and the
//!   benchmark grid.
//!
//! All scores are stored in nonconformity orientation: larger means the label
//! conforms less. A label `y` enters a prediction set when
//! `score(y) / scale <= q`.

pub mod calibration;
pub mod error;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod scores;
pub mod seed;
pub mod synthgen;
pub mod vae;

pub use calibration::{
    rl_threshold, rlscp_predict, split_threshold, splitcp_predict, wcp_oracle_predict,
    weighted_quantile, wqlcp_predict, wqlcp_weights, CalibrationSet, PredictionSet, TestBatch,
    Threshold, ThresholdMethod, WeightMode, WqlcpConfig,
};
pub use error::{Error, Result};
pub use metrics::{ExperimentReport, ReportRow};
pub use scores::{softmax, ProbabilityVector, ScoreConfig, ScoreKind, ScoreMatrix};
pub use synthgen::{ShiftSpec, SynthDataset, SynthSpec};
pub use vae::{LossRecord, TrainConfig, VaeParams};
