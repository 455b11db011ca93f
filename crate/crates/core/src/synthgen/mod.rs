//! Synthetic classification data with controllable covariate shift.
//!
//! Class `k` of `K` is an isotropic Gaussian centred at
//! `(r cos(2 pi k / K), r sin(2 pi k / K), 0, ..., 0)`. A [`ShiftSpec`] moves
//! every centre by a common vector, scales the covariance and rotates the first
//! two coordinates; an optional fraction of samples is replaced by uniform
//! outliers labelled by their nearest (shifted) class centre.
//!
//! Without outliers both the source and the shifted distributions are
//! Gaussian mixtures with known parameters, so exact density ratios are
//! available for the oracle-weighted baseline.

mod probe;

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub use probe::{train_probe, ProbeConfig, SoftmaxProbe};

/// Outliers are drawn uniformly from `[-(r + OUTLIER_MARGIN * sigma), ...]^d`.
const OUTLIER_MARGIN: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub radius: f64,
    /// Per-coordinate standard deviation of every class.
    pub sigma: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            dim: 8,
            radius: 4.0,
            sigma: 1.0,
            samples: 1000,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.dim < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 dimensions, got {}",
                self.dim
            )));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::invalid(format!(
                "radius must be positive, got {}",
                self.radius
            )));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::invalid(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.samples == 0 {
            return Err(Error::invalid("samples per split must be >= 1"));
        }
        Ok(())
    }

    pub fn class_means(&self) -> Vec<Vec<f64>> {
        (0..self.num_classes)
            .map(|k| {
                let angle = 2.0 * PI * k as f64 / self.num_classes as f64;
                let mut m = vec![0.0; self.dim];
                m[0] = self.radius * angle.cos();
                m[1] = self.radius * angle.sin();
                m
            })
            .collect()
    }

    pub fn with_samples(&self, samples: usize) -> Self {
        Self {
            samples,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShiftSpec {
    /// Added to every class mean; empty means no shift.
    pub mean_shift: Vec<f64>,
    /// Multiplies every class covariance.
    pub cov_multiplier: f64,
    /// Rotation of the first two coordinates, radians.
    pub rotation: f64,
    pub ood_fraction: f64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self {
            mean_shift: Vec::new(),
            cov_multiplier: 1.0,
            rotation: 0.0,
            ood_fraction: 0.0,
        }
    }
}

impl ShiftSpec {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Mean shift of `multiples * sigma` along the all-ones diagonal.
    pub fn diagonal(spec: &SynthSpec, multiples: f64) -> Self {
        let per_coord = multiples * spec.sigma / (spec.dim as f64).sqrt();
        Self {
            mean_shift: vec![per_coord; spec.dim],
            ..Self::default()
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !self.mean_shift.is_empty() && self.mean_shift.len() != dim {
            return Err(Error::LengthMismatch {
                what: "mean shift vs feature dimension",
                left: self.mean_shift.len(),
                right: dim,
            });
        }
        if self.mean_shift.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mean shift must be finite"));
        }
        if !(self.cov_multiplier.is_finite() && self.cov_multiplier > 0.0) {
            return Err(Error::invalid(format!(
                "covariance multiplier must be positive, got {}",
                self.cov_multiplier
            )));
        }
        if !self.rotation.is_finite() {
            return Err(Error::invalid("rotation must be finite"));
        }
        if !(0.0..=1.0).contains(&self.ood_fraction) {
            return Err(Error::invalid(format!(
                "ood fraction must lie in [0, 1], got {}",
                self.ood_fraction
            )));
        }
        Ok(())
    }

    pub fn shift_norm(&self) -> f64 {
        self.mean_shift.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn offset(&self, coord: usize) -> f64 {
        self.mean_shift.get(coord).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Shifted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub ids: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub domain: Domain,
}

impl SynthDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Prefix every id, e.g. `cal-17`.
    pub fn with_id_prefix(mut self, prefix: &str) -> Self {
        for id in &mut self.ids {
            *id = format!("{prefix}-{id}");
        }
        self
    }
}

fn rotate(x: &mut [f64], angle: f64) {
    if angle != 0.0 {
        let (s, c) = angle.sin_cos();
        let (a, b) = (x[0], x[1]);
        x[0] = c * a - s * b;
        x[1] = s * a + c * b;
    }
}

/// Class centres as seen after the shift: `R (mu_k + delta)`.
fn shifted_means(spec: &SynthSpec, shift: &ShiftSpec) -> Vec<Vec<f64>> {
    spec.class_means()
        .into_iter()
        .map(|mut m| {
            for (j, v) in m.iter_mut().enumerate() {
                *v += shift.offset(j);
            }
            rotate(&mut m, shift.rotation);
            m
        })
        .collect()
}

fn nearest(means: &[Vec<f64>], x: &[f64]) -> usize {
    let dist = |m: &Vec<f64>| m.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    (0..means.len())
        .min_by(|&a, &b| dist(&means[a]).total_cmp(&dist(&means[b])))
        .expect("at least two classes")
}

fn generate(
    spec: &SynthSpec,
    shift: &ShiftSpec,
    seed: u64,
    domain: Domain,
) -> Result<SynthDataset> {
    spec.validate()?;
    shift.validate(spec.dim)?;
    let n = spec.samples;
    let k = spec.num_classes;
    let mut rng = seed::rng(seed);

    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(&mut rng);

    let n_ood = (shift.ood_fraction * n as f64).round() as usize;
    let mut is_outlier = vec![false; n];
    if n_ood > 0 {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        for &i in &idx[..n_ood] {
            is_outlier[i] = true;
        }
    }

    let means = spec.class_means();
    let centres = shifted_means(spec, shift);
    let std = spec.sigma * shift.cov_multiplier.sqrt();
    let half_width = spec.radius + OUTLIER_MARGIN * spec.sigma;

    let mut features = Vec::with_capacity(n);
    for i in 0..n {
        if is_outlier[i] {
            let x: Vec<f64> = (0..spec.dim)
                .map(|_| rng.random_range(-half_width..half_width))
                .collect();
            labels[i] = nearest(&centres, &x);
            features.push(x);
        } else {
            let mean = &means[labels[i]];
            let mut x: Vec<f64> = (0..spec.dim)
                .map(|j| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    mean[j] + shift.offset(j) + std * e
                })
                .collect();
            rotate(&mut x, shift.rotation);
            features.push(x);
        }
    }

    Ok(SynthDataset {
        ids: (0..n).map(|i| i.to_string()).collect(),
        features,
        labels,
        num_classes: k,
        domain,
    })
}

/// In-distribution sample of `spec.samples` points seeded by `spec.seed`.
pub fn gen_source(spec: &SynthSpec) -> Result<SynthDataset> {
    generate(spec, &ShiftSpec::identity(), spec.seed, Domain::Source)
}

/// Sample from the shifted distribution. With the identity shift this follows
/// the same generator path as [`gen_source`], so equal seeds give equal data.
pub fn apply_shift(spec: &SynthSpec, shift: &ShiftSpec, seed: u64) -> Result<SynthDataset> {
    generate(spec, shift, seed, Domain::Shifted)
}

/// Equal-weight isotropic Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub means: Vec<Vec<f64>>,
    pub sigma: f64,
}

impl GaussianMixture {
    pub fn source(spec: &SynthSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            means: spec.class_means(),
            sigma: spec.sigma,
        })
    }

    pub fn shifted(spec: &SynthSpec, shift: &ShiftSpec) -> Result<Self> {
        spec.validate()?;
        shift.validate(spec.dim)?;
        if shift.ood_fraction > 0.0 {
            return Err(Error::invalid(
                "density ratio has no closed form when outliers are mixed in",
            ));
        }
        Ok(Self {
            means: shifted_means(spec, shift),
            sigma: spec.sigma * shift.cov_multiplier.sqrt(),
        })
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = x.len() as f64;
        let var = self.sigma * self.sigma;
        let exponents: Vec<f64> = self
            .means
            .iter()
            .map(|m| -m.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (2.0 * var))
            .collect();
        let max = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + exponents.iter().map(|e| (e - max).exp()).sum::<f64>().ln();
        lse - (self.means.len() as f64).ln() - 0.5 * d * (2.0 * PI * var).ln()
    }
}

/// `p_shifted(x) / p_source(x)`, evaluated in the log domain.
pub fn oracle_density_ratio(x: &[f64], source: &GaussianMixture, shifted: &GaussianMixture) -> f64 {
    (shifted.log_density(x) - source.log_density(x)).exp()
}
