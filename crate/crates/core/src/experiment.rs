//! Benchmark grid over methods x scores x shift levels x trials.
//!
//! One run fits the probe and the VAE once on a source training split. Every
//! (shift, trial) pair then draws a fresh source calibration split and a
//! shifted test split from its own derived seeds, so trials are independent
//! and can run in parallel. Results are merged in (shift, trial, score,
//! method) order regardless of scheduling.
//!
//! Seeds, all derived from `BenchConfig::seed`:
//!
//! | component | stream | index |
//! |---|---|---|
//! | training split | `TrainData` | 0 |
//! | VAE init, shuffles, noise | `Vae` | 0 |
//! | probe init | `Probe` | 0 |
//! | calibration split | `CalData` | trial |
//! | test split | `TestData` | trial (shared by every shift level) |
//! | randomized score draws | `ScoreNoise` | `shift << 32 | trial` |

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    rl_threshold, rlscp_predict, splitcp_predict, wcp_oracle_predict, wqlcp_predict,
    CalibrationSet, Method, PredictionSet, TestBatch, WqlcpConfig,
};
use crate::error::{Error, Result};
use crate::metrics::{avg_set_size, build_report, coverage, ExperimentReport, TrialResult};
use crate::scores::{ProbabilityVector, ScoreConfig, ScoreKind, ScoreMatrix};
use crate::seed::{self, Stream};
use crate::synthgen::{
    apply_shift, gen_source, oracle_density_ratio, train_probe, GaussianMixture, ProbeConfig,
    ShiftSpec, SoftmaxProbe, SynthDataset, SynthSpec,
};
use crate::vae::{self, TrainConfig, VaeParams};

/// What test losses are divided by before `RL_test` is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossNormalizer {
    /// Mean calibration loss.
    CalibrationMean,
    /// The `(1 - alpha)` order statistic of the calibration losses, the same
    /// statistic `RL_test` takes on the test batch.
    #[default]
    CalibrationQuantile,
}

impl LossNormalizer {
    pub fn value(self, cal_losses: &[f64], alpha: f64) -> Result<f64> {
        if cal_losses.is_empty() {
            return Err(Error::Empty("calibration losses"));
        }
        let v = match self {
            LossNormalizer::CalibrationMean => mean(cal_losses),
            LossNormalizer::CalibrationQuantile => rl_threshold(cal_losses, alpha, 1.0)?,
        };
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numerical(format!("loss normalizer is {v}")))
        }
    }
}

impl std::fmt::Display for LossNormalizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossNormalizer::CalibrationMean => "calibration-mean",
            LossNormalizer::CalibrationQuantile => "calibration-quantile",
        })
    }
}

impl std::str::FromStr for LossNormalizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "calibration-mean" => Ok(LossNormalizer::CalibrationMean),
            "calibration-quantile" => Ok(LossNormalizer::CalibrationQuantile),
            other => Err(Error::invalid(format!("unknown loss normalizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub alpha: f64,
    pub methods: Vec<Method>,
    pub scores: Vec<ScoreKind>,
    /// Mean shifts along the diagonal, in units of `sigma`.
    pub shifts: Vec<f64>,
    pub trials: usize,
    pub train_samples: usize,
    pub cal_samples: usize,
    pub test_samples: usize,
    pub synth: SynthSpec,
    pub vae: TrainConfig,
    pub probe: ProbeConfig,
    pub raps_lambda: f64,
    pub raps_k_reg: usize,
    pub randomized: bool,
    pub wqlcp: WqlcpConfig,
    pub normalizer: LossNormalizer,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let score = ScoreConfig::default();
        Self {
            alpha: 0.1,
            methods: Method::ALL.to_vec(),
            scores: ScoreKind::ALL.to_vec(),
            shifts: vec![0.0, 2.0, 4.0],
            trials: 20,
            train_samples: 2000,
            cal_samples: 1000,
            test_samples: 1000,
            synth: SynthSpec::default(),
            vae: TrainConfig::desk(),
            probe: ProbeConfig::default(),
            raps_lambda: score.lambda,
            raps_k_reg: score.k_reg,
            randomized: score.randomized,
            wqlcp: WqlcpConfig::default(),
            normalizer: LossNormalizer::default(),
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        crate::error::check_alpha(self.alpha)?;
        if self.methods.is_empty() || self.scores.is_empty() || self.shifts.is_empty() {
            return Err(Error::invalid(
                "methods, scores and shifts must be non-empty",
            ));
        }
        if self.trials == 0
            || self.train_samples == 0
            || self.cal_samples == 0
            || self.test_samples == 0
        {
            return Err(Error::invalid("trial count and split sizes must be >= 1"));
        }
        if let Some(s) = self.shifts.iter().find(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("shift level {s} is not finite")));
        }
        if !(self.wqlcp.epsilon.is_finite() && self.wqlcp.epsilon > 0.0) {
            return Err(Error::invalid(format!(
                "epsilon must be positive, got {}",
                self.wqlcp.epsilon
            )));
        }
        self.synth.validate()?;
        self.vae.validate()?;
        self.score_config(ScoreKind::Raps).validate()
    }

    pub fn score_config(&self, kind: ScoreKind) -> ScoreConfig {
        ScoreConfig {
            kind,
            lambda: self.raps_lambda,
            k_reg: self.raps_k_reg,
            randomized: self.randomized,
        }
    }

    pub fn shift_spec(&self, multiples: f64) -> ShiftSpec {
        if multiples == 0.0 {
            ShiftSpec::identity()
        } else {
            ShiftSpec::diagonal(&self.synth, multiples)
        }
    }
}

/// Display name of a shift level, e.g. `2sigma`.
pub fn shift_label(multiples: f64) -> String {
    format!("{multiples}sigma")
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Probe and VAE fit once per run.
#[derive(Debug, Clone)]
pub struct Models {
    pub probe: SoftmaxProbe,
    pub vae: VaeParams,
    pub vae_loss_trace: Vec<f64>,
}

pub fn training_split(config: &BenchConfig) -> Result<SynthDataset> {
    gen_source(&SynthSpec {
        samples: config.train_samples,
        seed: seed::derive(config.seed, Stream::TrainData, 0),
        ..config.synth.clone()
    })
}

pub fn fit_models(config: &BenchConfig) -> Result<Models> {
    let train = training_split(config)?;
    let probe = train_probe(
        &train,
        &ProbeConfig {
            seed: seed::derive(config.seed, Stream::Probe, 0),
            ..config.probe.clone()
        },
    )?;
    let trained = vae::train(
        &train.features,
        &TrainConfig {
            seed: seed::derive(config.seed, Stream::Vae, 0),
            ..config.vae.clone()
        },
    )?;
    Ok(Models {
        probe,
        vae: trained.params,
        vae_loss_trace: trained.loss_trace,
    })
}

/// Probabilities and reconstruction losses for one split.
#[derive(Debug, Clone)]
pub struct ScoredSplit {
    pub data: SynthDataset,
    pub probs: Vec<ProbabilityVector>,
    pub losses: Vec<f64>,
}

impl ScoredSplit {
    pub fn new(data: SynthDataset, models: &Models) -> Result<Self> {
        let probs = models.probe.predict_all(&data.features)?;
        let losses = data
            .features
            .iter()
            .map(|x| models.vae.recon_loss(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            data,
            probs,
            losses,
        })
    }
}

/// Calibration and test splits of one (shift, trial) pair.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub cal: ScoredSplit,
    pub test: ScoredSplit,
    /// Oracle `p_test / p_source` at each calibration point.
    pub density_ratios: Vec<f64>,
}

pub fn trial_data(
    config: &BenchConfig,
    models: &Models,
    shift: f64,
    trial: usize,
) -> Result<TrialData> {
    let cal_spec = SynthSpec {
        samples: config.cal_samples,
        seed: seed::derive(config.seed, Stream::CalData, trial as u64),
        ..config.synth.clone()
    };
    let test_spec = SynthSpec {
        samples: config.test_samples,
        ..config.synth.clone()
    };
    let shift_spec = config.shift_spec(shift);
    let cal = gen_source(&cal_spec)?.with_id_prefix("cal");
    let test = apply_shift(
        &test_spec,
        &shift_spec,
        seed::derive(config.seed, Stream::TestData, trial as u64),
    )?
    .with_id_prefix("test");
    let source = GaussianMixture::source(&config.synth)?;
    let shifted = GaussianMixture::shifted(&config.synth, &shift_spec)?;
    let density_ratios = cal
        .features
        .iter()
        .map(|x| oracle_density_ratio(x, &source, &shifted))
        .collect();
    Ok(TrialData {
        cal: ScoredSplit::new(cal, models)?,
        test: ScoredSplit::new(test, models)?,
        density_ratios,
    })
}

/// Run one method on prepared calibration and test inputs.
pub fn predict(
    method: Method,
    test: &TestBatch,
    cal: &CalibrationSet,
    alpha: f64,
    wqlcp: &WqlcpConfig,
    density_ratios: Option<&[f64]>,
) -> Result<Vec<PredictionSet>> {
    match method {
        Method::Split => splitcp_predict(test, cal, alpha),
        Method::Rlscp => rlscp_predict(test, cal, alpha),
        Method::Wqlcp => wqlcp_predict(test, cal, alpha, wqlcp),
        Method::WcpOracle => {
            let ratios = density_ratios
                .ok_or_else(|| Error::invalid("wcp-oracle needs calibration density ratios"))?;
            wcp_oracle_predict(test, cal, alpha, ratios)
        }
    }
}

/// All configured (score, method) results for one (shift, trial) pair.
pub fn run_trial(
    config: &BenchConfig,
    models: &Models,
    shift_index: usize,
    trial: usize,
) -> Result<Vec<TrialResult>> {
    let shift = config.shifts[shift_index];
    let data = trial_data(config, models, shift, trial)?;
    let normalizer = config.normalizer.value(&data.cal.losses, config.alpha)?;
    let severity = mean(&data.test.losses) / mean(&data.cal.losses);
    let mut rng = seed::derived_rng(
        config.seed,
        Stream::ScoreNoise,
        ((shift_index as u64) << 32) | trial as u64,
    );
    let mut out = Vec::with_capacity(config.scores.len() * config.methods.len());
    for &kind in &config.scores {
        let score_cfg = config.score_config(kind);
        let cal_matrix = ScoreMatrix::from_probabilities(&data.cal.probs, &score_cfg, &mut rng)?;
        let cal = CalibrationSet::from_matrix(&cal_matrix, &data.cal.data.labels)?
            .with_losses(data.cal.losses.clone())?;
        let test_matrix = ScoreMatrix::from_probabilities(&data.test.probs, &score_cfg, &mut rng)?;
        let test = TestBatch::new(test_matrix).with_losses(data.test.losses.clone(), normalizer)?;
        for &method in &config.methods {
            let sets = predict(
                method,
                &test,
                &cal,
                config.alpha,
                &config.wqlcp,
                Some(&data.density_ratios),
            )?;
            let first = sets.first().map(|s| s.threshold);
            out.push(TrialResult {
                method,
                score: kind,
                shift: shift_label(shift),
                trial,
                coverage: coverage(&sets, &data.test.data.labels)?,
                avg_set_size: avg_set_size(&sets)?,
                severity: Some(severity),
                q: first.map_or(f64::NAN, |t| t.q),
                scale: first.map_or(1.0, |t| t.scale),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct BenchOutput {
    pub results: Vec<TrialResult>,
    pub report: ExperimentReport,
}

/// Fit the models, run every (shift, trial) pair in parallel and aggregate.
pub fn run_bench(config: &BenchConfig) -> Result<BenchOutput> {
    config.validate()?;
    let models = fit_models(config)?;
    run_bench_with(config, &models)
}

pub fn run_bench_with(config: &BenchConfig, models: &Models) -> Result<BenchOutput> {
    config.validate()?;
    let pairs: Vec<(usize, usize)> = (0..config.shifts.len())
        .flat_map(|s| (0..config.trials).map(move |t| (s, t)))
        .collect();
    let per_pair: Vec<Vec<TrialResult>> = pairs
        .par_iter()
        .map(|&(s, t)| {
            run_trial(config, models, s, t).map_err(|e| Error::Cell {
                cell: format!("shift={}, trial={t}", shift_label(config.shifts[s])),
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let results: Vec<TrialResult> = per_pair.into_iter().flatten().collect();
    let report = build_report(&results, config.alpha)?;
    Ok(BenchOutput { results, report })
}
