//! Run configuration: JSON file first, command-line flags on top.

use std::path::Path;

use serde::{Deserialize, Serialize};
use shiftcp::calibration::{Method, WeightMode, WqlcpConfig, DEFAULT_EPSILON};
use shiftcp::experiment::{BenchConfig, LossNormalizer};
use shiftcp::scores::{ScoreConfig, ScoreKind};
use shiftcp::synthgen::{ProbeConfig, ShiftSpec, SynthSpec};
use shiftcp::vae::TrainConfig;
use shiftcp::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub alpha: f64,
    pub method: Method,
    pub score: ScoreKind,
    pub epsilon: f64,
    pub beta: f64,
    pub seed: u64,
    pub weight_mode: WeightMode,
    pub normalizer: LossNormalizer,
    pub randomized: bool,
    pub raps_lambda: f64,
    pub raps_k_reg: usize,
    pub synth: SynthSpec,
    /// Shift applied to the test split by `synth`.
    pub shift: ShiftSpec,
    pub train_samples: usize,
    pub cal_samples: usize,
    pub test_samples: usize,
    pub vae: TrainConfig,
    pub probe: ProbeConfig,
    /// Grid axes for `bench`.
    pub methods: Vec<Method>,
    pub scores: Vec<ScoreKind>,
    pub shifts: Vec<f64>,
    pub trials: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let bench = BenchConfig::default();
        let score = ScoreConfig::default();
        Self {
            alpha: 0.1,
            method: Method::Split,
            score: ScoreKind::Thr,
            epsilon: DEFAULT_EPSILON,
            beta: bench.vae.beta,
            seed: 0,
            weight_mode: WeightMode::default(),
            normalizer: LossNormalizer::default(),
            randomized: score.randomized,
            raps_lambda: score.lambda,
            raps_k_reg: score.k_reg,
            synth: bench.synth,
            shift: ShiftSpec::identity(),
            train_samples: bench.train_samples,
            cal_samples: bench.cal_samples,
            test_samples: bench.test_samples,
            vae: bench.vae,
            probe: bench.probe,
            methods: bench.methods,
            scores: bench.scores,
            shifts: bench.shifts,
            trials: bench.trials,
        }
    }
}

/// Flags shared by every subcommand. `None` keeps the file or default value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub alpha: Option<f64>,
    pub method: Option<Method>,
    pub score: Option<ScoreKind>,
    pub beta: Option<f64>,
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, flags: &Overrides) -> Result<Self> {
        let mut config: RunConfig = match path {
            Some(p) => shiftcp::io::read_json(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = flags.alpha {
            config.alpha = v;
        }
        if let Some(v) = flags.method {
            config.method = v;
            config.methods = vec![v];
        }
        if let Some(v) = flags.score {
            config.score = v;
            config.scores = vec![v];
        }
        if let Some(v) = flags.beta {
            config.beta = v;
        }
        if let Some(v) = flags.epsilon {
            config.epsilon = v;
        }
        if let Some(v) = flags.seed {
            config.seed = v;
        }
        config.vae.beta = config.beta;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidAlpha(self.alpha));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Invalid(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        self.synth.validate()?;
        self.shift.validate(self.synth.dim)?;
        self.vae.validate()?;
        self.score_config().validate()
    }

    pub fn score_config(&self) -> ScoreConfig {
        ScoreConfig {
            kind: self.score,
            lambda: self.raps_lambda,
            k_reg: self.raps_k_reg,
            randomized: self.randomized,
        }
    }

    pub fn wqlcp(&self) -> WqlcpConfig {
        WqlcpConfig {
            epsilon: self.epsilon,
            weight_mode: self.weight_mode,
        }
    }

    pub fn bench(&self) -> BenchConfig {
        BenchConfig {
            alpha: self.alpha,
            methods: self.methods.clone(),
            scores: self.scores.clone(),
            shifts: self.shifts.clone(),
            trials: self.trials,
            train_samples: self.train_samples,
            cal_samples: self.cal_samples,
            test_samples: self.test_samples,
            synth: self.synth.clone(),
            vae: self.vae.clone(),
            probe: self.probe.clone(),
            raps_lambda: self.raps_lambda,
            raps_k_reg: self.raps_k_reg,
            randomized: self.randomized,
            wqlcp: self.wqlcp(),
            normalizer: self.normalizer,
            seed: self.seed,
        }
    }
}
