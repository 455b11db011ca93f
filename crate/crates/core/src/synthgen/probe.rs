//! Multinomial logistic regression fit by full-batch gradient descent. It
//! stands in for a pretrained backbone and supplies class probabilities.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SynthDataset;
use crate::error::{Error, Result};
use crate::scores::{softmax, ProbabilityVector};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxProbe {
    /// Row-major `K x d`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub num_classes: usize,
    pub dim: usize,
}

impl SoftmaxProbe {
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.dim)
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
            .collect()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<ProbabilityVector> {
        if x.len() != self.dim {
            return Err(Error::LengthMismatch {
                what: "probe input width",
                left: x.len(),
                right: self.dim,
            });
        }
        softmax(&self.logits(x))
    }

    pub fn predict_all(&self, features: &[Vec<f64>]) -> Result<Vec<ProbabilityVector>> {
        features.iter().map(|x| self.predict_proba(x)).collect()
    }

    pub fn accuracy(&self, data: &SynthDataset) -> Result<f64> {
        let mut hits = 0usize;
        for (x, &y) in data.features.iter().zip(&data.labels) {
            let p = self.predict_proba(x)?;
            if p.descending_order()[0] == y {
                hits += 1;
            }
        }
        Ok(hits as f64 / data.len() as f64)
    }
}

/// Fit by gradient descent on the mean cross-entropy over the whole set.
/// Weights start from `N(0, 0.01^2)` draws seeded by `config.seed`.
pub fn train_probe(train: &SynthDataset, config: &ProbeConfig) -> Result<SoftmaxProbe> {
    if train.is_empty() {
        return Err(Error::Empty("probe training set"));
    }
    if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) || config.epochs == 0 {
        return Err(Error::invalid(
            "probe needs a positive learning rate and >= 1 epoch",
        ));
    }
    let k = train.num_classes;
    let d = train.dim();
    if let Some(&y) = train.labels.iter().find(|&&y| y >= k) {
        return Err(Error::LabelOutOfRange {
            label: y,
            num_labels: k,
        });
    }
    let mut rng = seed::rng(config.seed);
    let init = Normal::new(0.0, 0.01).expect("valid std");
    let mut probe = SoftmaxProbe {
        weights: (0..k * d).map(|_| init.sample(&mut rng)).collect(),
        bias: vec![0.0; k],
        num_classes: k,
        dim: d,
    };

    let n = train.len() as f64;
    for epoch in 0..config.epochs {
        let mut grad_w = vec![0.0; k * d];
        let mut grad_b = vec![0.0; k];
        let mut loss = 0.0;
        for (x, &y) in train.features.iter().zip(&train.labels) {
            let p = softmax(&probe.logits(x))?;
            let p = p.as_slice();
            loss -= p[y].max(f64::MIN_POSITIVE).ln();
            for c in 0..k {
                let g = p[c] - if c == y { 1.0 } else { 0.0 };
                grad_b[c] += g;
                for (gw, xv) in grad_w[c * d..(c + 1) * d].iter_mut().zip(x) {
                    *gw += g * xv;
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: 0,
                loss: loss / n,
            });
        }
        let step = config.learning_rate / n;
        for (w, g) in probe.weights.iter_mut().zip(&grad_w) {
            *w -= step * g;
        }
        for (b, g) in probe.bias.iter_mut().zip(&grad_b) {
            *b -= step * g;
        }
    }
    Ok(probe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{gen_source, SynthSpec};

    #[test]
    fn separable_two_class_data_is_fit() {
        let spec = SynthSpec {
            num_classes: 2,
            dim: 3,
            radius: 20.0,
            sigma: 0.1,
            samples: 200,
            seed: 1,
        };
        let data = gen_source(&spec).unwrap();
        let probe = train_probe(&data, &ProbeConfig::default()).unwrap();
        assert!(probe.accuracy(&data).unwrap() >= 0.99);
    }

    #[test]
    fn outputs_are_probability_vectors() {
        let spec = SynthSpec {
            samples: 300,
            ..SynthSpec::default()
        };
        let data = gen_source(&spec).unwrap();
        let probe = train_probe(
            &data,
            &ProbeConfig {
                epochs: 20,
                ..ProbeConfig::default()
            },
        )
        .unwrap();
        for p in probe.predict_all(&data.features).unwrap() {
            assert_eq!(p.num_labels(), 10);
        }
        assert!(probe.predict_proba(&[100.0; 8]).is_ok());
        assert!(probe.predict_proba(&[0.0; 3]).is_err());
    }

    #[test]
    fn sample_order_does_not_change_the_fit() {
        let spec = SynthSpec {
            num_classes: 3,
            dim: 4,
            samples: 120,
            ..SynthSpec::default()
        };
        let data = gen_source(&spec).unwrap();
        let mut reversed = data.clone();
        reversed.features.reverse();
        reversed.labels.reverse();
        let cfg = ProbeConfig {
            epochs: 50,
            ..ProbeConfig::default()
        };
        let a = train_probe(&data, &cfg).unwrap();
        let b = train_probe(&reversed, &cfg).unwrap();
        for (x, y) in a
            .weights
            .iter()
            .chain(&a.bias)
            .zip(b.weights.iter().chain(&b.bias))
        {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
