use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use super::{sample_gradient, TrainConfig, VaeParams};
use crate::error::{Error, Result};
use crate::seed;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedVae {
    pub params: VaeParams,
    /// Sample-weighted mean objective of each epoch.
    pub loss_trace: Vec<f64>,
}

/// AdamW state: first and second moments per tensor.
struct AdamW {
    m: VaeParams,
    v: VaeParams,
    step: i32,
    lr: f64,
    weight_decay: f64,
}

impl AdamW {
    fn new(params: &VaeParams, lr: f64, weight_decay: f64) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            lr,
            weight_decay,
        }
    }

    fn update(&mut self, params: &mut VaeParams, grad: &VaeParams) {
        self.step += 1;
        let bias1 = 1.0 - ADAM_BETA1.powi(self.step);
        let bias2 = 1.0 - ADAM_BETA2.powi(self.step);
        let decay = 1.0 - self.lr * self.weight_decay;
        let grads = grad.tensors();
        for (((p, m), v), g) in params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(grads)
        {
            for i in 0..p.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] = p[i] * decay - self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Mini-batch AdamW on the mean of `recon + beta * kl` over each batch.
///
/// One RNG stream seeded from `config.seed` drives initialization, the
/// per-epoch shuffle and the reparameterization noise, consumed in that order,
/// so equal seeds give bit-identical parameters.
pub fn train(data: &[Vec<f64>], config: &TrainConfig) -> Result<TrainedVae> {
    config.validate()?;
    let input_dim = data.first().ok_or(Error::Empty("VAE training set"))?.len();
    if input_dim == 0 {
        return Err(Error::invalid("VAE inputs must have at least one feature"));
    }
    if let Some(bad) = data.iter().position(|x| x.len() != input_dim) {
        return Err(Error::invalid(format!(
            "training row {bad} has width {}, expected {input_dim}",
            data[bad].len()
        )));
    }

    let mut rng = seed::rng(config.seed);
    let mut params = VaeParams::init(input_dim, config.hidden_dim, config.latent_dim, &mut rng);
    let mut optimizer = AdamW::new(&params, config.learning_rate, config.weight_decay);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut noise = vec![0.0; config.latent_dim];
    let mut loss_trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grad = params.zeros_like();
            let mut batch_total = 0.0;
            for &i in batch {
                for n in noise.iter_mut() {
                    *n = StandardNormal.sample(&mut rng);
                }
                batch_total +=
                    sample_gradient(&params, &data[i], &noise, config.beta, &mut grad)?.loss();
            }
            if !batch_total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    loss: batch_total / batch.len() as f64,
                });
            }
            let inv = 1.0 / batch.len() as f64;
            for t in grad.tensors_mut() {
                t.iter_mut().for_each(|g| *g *= inv);
            }
            optimizer.update(&mut params, &grad);
            if !params.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    loss: f64::NAN,
                });
            }
            epoch_total += batch_total;
        }
        loss_trace.push(epoch_total / data.len() as f64);
    }
    Ok(TrainedVae { params, loss_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blob(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seed::rng(seed);
        (0..n)
            .map(|_| {
                let t: f64 = rng.random_range(-1.0..1.0);
                vec![t, 2.0 * t, -t, 0.5 + 0.1 * rng.random::<f64>()]
            })
            .collect()
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            epochs: 30,
            learning_rate: 5e-3,
            batch_size: 32,
            hidden_dim: 8,
            latent_dim: 2,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_reduces_loss() {
        let out = train(&blob(256, 1), &quick_config()).unwrap();
        assert_eq!(out.loss_trace.len(), 30);
        assert!(out.loss_trace.iter().all(|l| l.is_finite()));
        assert!(out.loss_trace.last().unwrap() < &out.loss_trace[0]);
    }

    #[test]
    fn equal_seeds_give_identical_params() {
        let data = blob(100, 2);
        let a = train(&data, &quick_config()).unwrap();
        let b = train(&data, &quick_config()).unwrap();
        assert_eq!(a, b);
        let c = train(
            &data,
            &TrainConfig {
                seed: 4,
                ..quick_config()
            },
        )
        .unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn divergence_is_reported() {
        let data = vec![vec![1e200, -1e200]; 4];
        let err = train(&data, &quick_config()).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Diverged {
                    epoch: 0,
                    batch: 0,
                    ..
                }
            ),
            "{err}"
        );
        assert!(err.is_numerical());
    }

    #[test]
    fn rejects_ragged_or_empty_data() {
        assert!(train(&[], &quick_config()).is_err());
        assert!(train(&[vec![1.0, 2.0], vec![1.0]], &quick_config()).is_err());
    }
}
