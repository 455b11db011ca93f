//! Dense beta-VAE used as the source of per-sample reconstruction losses.
//!
//! Encoder: `x -> tanh(W1 x + b1) -> (mu, log_var)`, both heads linear.
//! Decoder: `z -> tanh(W3 z + b3) -> W4 h + b4`.
//!
//! The training objective per sample is `||x - x_hat||^2 + beta * KL(q(z|x) || N(0, I))`
//! with `x_hat` decoded from a reparameterized draw. The reconstruction loss
//! reported for calibration decodes the posterior mean instead, so it does not
//! depend on any noise draw.

mod backprop;
mod checkpoint;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use backprop::{grad_check, sample_gradient};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use train::{train, TrainedVae};

/// Fully connected layer, weights row-major `n_out x n_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weight: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        let weight = (0..n_in * n_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            n_in,
            n_out,
            weight,
            bias: vec![0.0; n_out],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.n_in)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeParams {
    pub encoder_hidden: Dense,
    pub encoder_mean: Dense,
    pub encoder_log_var: Dense,
    pub decoder_hidden: Dense,
    pub decoder_out: Dense,
}

pub(crate) const TENSOR_NAMES: [&str; 10] = [
    "encoder_hidden.weight",
    "encoder_hidden.bias",
    "encoder_mean.weight",
    "encoder_mean.bias",
    "encoder_log_var.weight",
    "encoder_log_var.bias",
    "decoder_hidden.weight",
    "decoder_hidden.bias",
    "decoder_out.weight",
    "decoder_out.bias",
];

impl VaeParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize, latent_dim: usize) -> Self {
        Self {
            encoder_hidden: Dense::zeros(input_dim, hidden_dim),
            encoder_mean: Dense::zeros(hidden_dim, latent_dim),
            encoder_log_var: Dense::zeros(hidden_dim, latent_dim),
            decoder_hidden: Dense::zeros(latent_dim, hidden_dim),
            decoder_out: Dense::zeros(hidden_dim, input_dim),
        }
    }

    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dim: usize,
        latent_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            encoder_hidden: Dense::glorot(input_dim, hidden_dim, rng),
            encoder_mean: Dense::glorot(hidden_dim, latent_dim, rng),
            encoder_log_var: Dense::glorot(hidden_dim, latent_dim, rng),
            decoder_hidden: Dense::glorot(latent_dim, hidden_dim, rng),
            decoder_out: Dense::glorot(hidden_dim, input_dim, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder_hidden.n_in
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder_hidden.n_out
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder_mean.n_out
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden_dim(), self.latent_dim())
    }

    /// Tensors in checkpoint order, see `TENSOR_NAMES`.
    pub fn tensors(&self) -> [&[f64]; 10] {
        [
            &self.encoder_hidden.weight,
            &self.encoder_hidden.bias,
            &self.encoder_mean.weight,
            &self.encoder_mean.bias,
            &self.encoder_log_var.weight,
            &self.encoder_log_var.bias,
            &self.decoder_hidden.weight,
            &self.decoder_hidden.bias,
            &self.decoder_out.weight,
            &self.decoder_out.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 10] {
        [
            &mut self.encoder_hidden.weight,
            &mut self.encoder_hidden.bias,
            &mut self.encoder_mean.weight,
            &mut self.encoder_mean.bias,
            &mut self.encoder_log_var.weight,
            &mut self.encoder_log_var.bias,
            &mut self.decoder_hidden.weight,
            &mut self.decoder_hidden.bias,
            &mut self.decoder_out.weight,
            &mut self.decoder_out.bias,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::LengthMismatch {
                what: "VAE input width",
                left: x.len(),
                right: self.input_dim(),
            });
        }
        Ok(())
    }

    /// Posterior mean and log-variance for `x`.
    pub fn encode(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(x)?;
        let hidden: Vec<f64> = self
            .encoder_hidden
            .forward(x)
            .into_iter()
            .map(f64::tanh)
            .collect();
        Ok((
            self.encoder_mean.forward(&hidden),
            self.encoder_log_var.forward(&hidden),
        ))
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim() {
            return Err(Error::LengthMismatch {
                what: "VAE latent width",
                left: z.len(),
                right: self.latent_dim(),
            });
        }
        let hidden: Vec<f64> = self
            .decoder_hidden
            .forward(z)
            .into_iter()
            .map(f64::tanh)
            .collect();
        Ok(self.decoder_out.forward(&hidden))
    }

    /// `||x - decode(mu(x))||^2`.
    pub fn recon_loss(&self, x: &[f64]) -> Result<f64> {
        let (mu, _) = self.encode(x)?;
        let x_hat = self.decode(&mu)?;
        Ok(squared_distance(x, &x_hat))
    }

    /// Reconstruction and KL terms for one sample with a fixed noise draw.
    pub fn elbo_terms(&self, x: &[f64], noise: &[f64], beta: f64) -> Result<ElboTerms> {
        let (mu, log_var) = self.encode(x)?;
        let z = reparameterize(&mu, &log_var, noise);
        let x_hat = self.decode(&z)?;
        Ok(ElboTerms {
            recon: squared_distance(x, &x_hat),
            kl: kl_gaussian(&mu, &log_var),
            beta,
        })
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// `z = mu + exp(log_var / 2) * noise`.
pub fn reparameterize(mu: &[f64], log_var: &[f64], noise: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(log_var)
        .zip(noise)
        .map(|((m, lv), n)| m + (0.5 * lv).exp() * n)
        .collect()
}

/// KL divergence of `N(mu, diag(exp(log_var)))` from `N(0, I)`, in nats.
pub fn kl_gaussian(mu: &[f64], log_var: &[f64]) -> f64 {
    -0.5 * mu
        .iter()
        .zip(log_var)
        .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms {
    pub recon: f64,
    pub kl: f64,
    pub beta: f64,
}

impl ElboTerms {
    pub fn loss(&self) -> f64 {
        self.recon + self.beta * self.kl
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta: f64,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-4,
            batch_size: 256,
            beta: 1.2,
            latent_dim: 4,
            hidden_dim: 32,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults with a learning rate that converges on small synthetic sets.
    pub fn desk() -> Self {
        Self {
            learning_rate: 1e-3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        if self.latent_dim == 0 || self.hidden_dim == 0 {
            return bad("latent and hidden widths must be >= 1".into());
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        Ok(())
    }
}

/// Per-sample reconstruction loss, raw and divided by the normalizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub sample_id: String,
    pub raw_loss: f64,
    pub normalized_loss: f64,
}

/// Reconstruction losses for a batch, in input order.
///
/// Without an explicit normalizer the batch's own mean loss is used, which is
/// the right choice when `data` is the calibration split.
pub fn batch_losses(
    ids: &[String],
    data: &[Vec<f64>],
    params: &VaeParams,
    normalizer: Option<f64>,
) -> Result<Vec<LossRecord>> {
    if ids.len() != data.len() {
        return Err(Error::LengthMismatch {
            what: "sample ids vs rows",
            left: ids.len(),
            right: data.len(),
        });
    }
    if data.is_empty() {
        return Err(Error::Empty("loss batch"));
    }
    let raw = data
        .iter()
        .map(|x| params.recon_loss(x))
        .collect::<Result<Vec<_>>>()?;
    let normalizer = normalizer.unwrap_or_else(|| raw.iter().sum::<f64>() / raw.len() as f64);
    if !(normalizer.is_finite() && normalizer > 0.0) {
        return Err(Error::Numerical(format!(
            "loss normalizer {normalizer} is not positive"
        )));
    }
    Ok(ids
        .iter()
        .zip(raw)
        .map(|(id, raw_loss)| LossRecord {
            sample_id: id.clone(),
            raw_loss,
            normalized_loss: raw_loss / normalizer,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand_distr::{Distribution, StandardNormal};

    fn biased(params: &mut VaeParams) {
        params.encoder_mean.bias = vec![0.3, -0.7];
        params.encoder_log_var.bias = vec![-0.2, 0.4];
        params.decoder_out.bias = vec![1.0, 2.0, 3.0];
    }

    #[test]
    fn zero_weights_pass_biases_through() {
        let mut p = VaeParams::zeros(3, 5, 2);
        biased(&mut p);
        let (mu, lv) = p.encode(&[4.0, -1.0, 9.0]).unwrap();
        assert_eq!(mu, vec![0.3, -0.7]);
        assert_eq!(lv, vec![-0.2, 0.4]);
        assert_eq!(p.decode(&[5.0, 5.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn shapes_and_saturation() {
        let p = VaeParams::init(8, 32, 4, &mut seed::rng(3));
        let x = [1e3, -1e3, 1e3, -1e3, 1e3, -1e3, 1e3, -1e3];
        let (mu, lv) = p.encode(&x).unwrap();
        assert_eq!((mu.len(), lv.len()), (4, 4));
        assert!(mu.iter().chain(&lv).all(|v| v.is_finite()));
        assert_eq!(p.decode(&mu).unwrap().len(), 8);
        assert!(p.encode(&[1.0; 7]).is_err());
        assert!(p.decode(&[1.0; 3]).is_err());
    }

    #[test]
    fn decode_of_mean_is_deterministic() {
        let p = VaeParams::init(8, 16, 4, &mut seed::rng(9));
        let x = [0.5; 8];
        let (mu, _) = p.encode(&x).unwrap();
        assert_eq!(p.decode(&mu).unwrap(), p.decode(&mu).unwrap());
        assert_eq!(p.recon_loss(&x).unwrap(), p.recon_loss(&x).unwrap());
    }

    #[test]
    fn reparameterize_examples() {
        let mu = [0.5, -1.0];
        assert_eq!(reparameterize(&mu, &[0.3, 2.0], &[0.0, 0.0]), mu.to_vec());
        assert_eq!(
            reparameterize(&mu, &[0.0, 0.0], &[0.25, 2.0]),
            vec![0.75, 1.0]
        );
    }

    #[test]
    fn reparameterized_variance_tracks_log_var() {
        let mut rng = seed::rng(11);
        for log_var in [-1.0f64, 0.0, 1.5] {
            let draws: Vec<f64> = (0..10_000)
                .map(|_| {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    reparameterize(&[2.0], &[log_var], &[n])[0]
                })
                .collect();
            let mean = draws.iter().sum::<f64>() / draws.len() as f64;
            let var =
                draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
            let expected = log_var.exp();
            assert!(
                (var - expected).abs() / expected < 0.05,
                "var {var} vs {expected}"
            );
        }
    }

    #[test]
    fn recon_loss_examples() {
        // zero net reconstructs [0, 0]
        let p = VaeParams::zeros(2, 3, 1);
        assert_eq!(p.recon_loss(&[1.0, 0.0]).unwrap(), 1.0);
        let mut q = VaeParams::zeros(2, 3, 1);
        q.decoder_out.bias = vec![1.0, 0.0];
        assert_eq!(q.recon_loss(&[1.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_gaussian(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(kl_gaussian(&[1.0], &[0.0]), 0.5);
        let mut rng = seed::rng(5);
        for _ in 0..200 {
            let mu: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let lv: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            assert!(kl_gaussian(&mu, &lv) >= 0.0);
        }
        assert!(kl_gaussian(&[0.0], &[0.1]) > 0.0);
        assert!(kl_gaussian(&[1e-3], &[0.0]) > 0.0);
    }

    #[test]
    fn elbo_loss_combines_terms() {
        let p = VaeParams::init(3, 4, 2, &mut seed::rng(2));
        let t = p.elbo_terms(&[0.1, 0.2, 0.3], &[0.5, -0.5], 1.2).unwrap();
        assert!(t.recon >= 0.0 && t.kl >= 0.0);
        assert_eq!(t.loss(), t.recon + 1.2 * t.kl);
    }

    #[test]
    fn batch_losses_examples() {
        let p = VaeParams::init(2, 4, 1, &mut seed::rng(1));
        let data = vec![vec![0.0, 1.0], vec![2.0, -1.0], vec![0.5, 0.5]];
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let records = batch_losses(&ids, &data, &p, None).unwrap();
        let mean = records.iter().map(|r| r.normalized_loss).sum::<f64>() / 3.0;
        assert!((mean - 1.0).abs() < 1e-12);
        for (r, (id, x)) in records.iter().zip(ids.iter().zip(&data)) {
            assert_eq!(&r.sample_id, id);
            assert_eq!(r.raw_loss, p.recon_loss(x).unwrap());
        }
        let fixed = batch_losses(&ids, &data, &p, Some(2.0)).unwrap();
        assert_eq!(fixed[1].normalized_loss, fixed[1].raw_loss / 2.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for broken in [
            TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                beta: -0.1,
                ..TrainConfig::default()
            },
        ] {
            assert!(broken.validate().is_err());
        }
    }
}
