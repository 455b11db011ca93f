//! Hand-written gradients of the per-sample objective and a finite-difference
//! check against them.

use super::{kl_gaussian, Dense, ElboTerms, VaeParams};
use crate::error::{Error, Result};

/// Relative errors are measured against `max(|analytic|, |numeric|, FLOOR)`.
const RELATIVE_FLOOR: f64 = 1e-6;

/// Adds `upstream x input^T` to the weight gradient and `upstream` to the bias.
fn accumulate_dense(layer: &mut Dense, upstream: &[f64], input: &[f64]) {
    for (o, &g) in upstream.iter().enumerate() {
        layer.bias[o] += g;
        let row = &mut layer.weight[o * layer.n_in..(o + 1) * layer.n_in];
        for (w, &x) in row.iter_mut().zip(input) {
            *w += g * x;
        }
    }
}

/// `W^T upstream`.
fn backprop_input(layer: &Dense, upstream: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; layer.n_in];
    for (row, &g) in layer.weight.chunks_exact(layer.n_in).zip(upstream) {
        for (o, &w) in out.iter_mut().zip(row) {
            *o += g * w;
        }
    }
    out
}

/// Adds the gradient of `recon + beta * kl` for one sample into `grad` and
/// returns the sample's terms. `noise` is the reparameterization draw.
pub fn sample_gradient(
    params: &VaeParams,
    x: &[f64],
    noise: &[f64],
    beta: f64,
    grad: &mut VaeParams,
) -> Result<ElboTerms> {
    if x.len() != params.input_dim() || noise.len() != params.latent_dim() {
        return Err(Error::LengthMismatch {
            what: "VAE sample input/noise width",
            left: x.len() + noise.len(),
            right: params.input_dim() + params.latent_dim(),
        });
    }
    let h1: Vec<f64> = params
        .encoder_hidden
        .forward(x)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let mu = params.encoder_mean.forward(&h1);
    let log_var = params.encoder_log_var.forward(&h1);
    let std: Vec<f64> = log_var.iter().map(|lv| (0.5 * lv).exp()).collect();
    let z: Vec<f64> = mu
        .iter()
        .zip(&std)
        .zip(noise)
        .map(|((m, s), n)| m + s * n)
        .collect();
    let h2: Vec<f64> = params
        .decoder_hidden
        .forward(&z)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let x_hat = params.decoder_out.forward(&h2);

    let residual: Vec<f64> = x_hat.iter().zip(x).map(|(a, b)| a - b).collect();
    let terms = ElboTerms {
        recon: residual.iter().map(|r| r * r).sum(),
        kl: kl_gaussian(&mu, &log_var),
        beta,
    };

    let d_out: Vec<f64> = residual.iter().map(|r| 2.0 * r).collect();
    accumulate_dense(&mut grad.decoder_out, &d_out, &h2);
    let d_h2 = backprop_input(&params.decoder_out, &d_out);
    let d_a2: Vec<f64> = d_h2
        .iter()
        .zip(&h2)
        .map(|(g, h)| g * (1.0 - h * h))
        .collect();
    accumulate_dense(&mut grad.decoder_hidden, &d_a2, &z);
    let d_z = backprop_input(&params.decoder_hidden, &d_a2);

    let d_mu: Vec<f64> = d_z.iter().zip(&mu).map(|(g, m)| g + beta * m).collect();
    let d_log_var: Vec<f64> = d_z
        .iter()
        .zip(&std)
        .zip(noise)
        .zip(&log_var)
        .map(|(((g, s), n), lv)| g * n * 0.5 * s + beta * 0.5 * (lv.exp() - 1.0))
        .collect();
    accumulate_dense(&mut grad.encoder_mean, &d_mu, &h1);
    accumulate_dense(&mut grad.encoder_log_var, &d_log_var, &h1);
    let d_h1: Vec<f64> = backprop_input(&params.encoder_mean, &d_mu)
        .into_iter()
        .zip(backprop_input(&params.encoder_log_var, &d_log_var))
        .map(|(a, b)| a + b)
        .collect();
    let d_a1: Vec<f64> = d_h1
        .iter()
        .zip(&h1)
        .map(|(g, h)| g * (1.0 - h * h))
        .collect();
    accumulate_dense(&mut grad.encoder_hidden, &d_a1, x);

    Ok(terms)
}

/// Largest relative disagreement between the analytic gradient and central
/// finite differences with the given step, over every parameter.
pub fn grad_check(
    params: &VaeParams,
    x: &[f64],
    noise: &[f64],
    beta: f64,
    step: f64,
) -> Result<f64> {
    let mut analytic = params.zeros_like();
    sample_gradient(params, x, noise, beta, &mut analytic)?;
    let objective = |p: &VaeParams| -> Result<f64> { Ok(p.elbo_terms(x, noise, beta)?.loss()) };

    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for t in 0..10 {
        for i in 0..params.tensors()[t].len() {
            let original = params.tensors()[t][i];
            probe.tensors_mut()[t][i] = original + step;
            let plus = objective(&probe)?;
            probe.tensors_mut()[t][i] = original - step;
            let minus = objective(&probe)?;
            probe.tensors_mut()[t][i] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let exact = analytic.tensors()[t][i];
            let scale = exact.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            worst = worst.max((exact - numeric).abs() / scale);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    #[test]
    fn tiny_network_matches_finite_differences() {
        let mut rng = seed::rng(17);
        let params = VaeParams::init(4, 3, 2, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let err = grad_check(&params, &x, &[0.3, -1.1], 1.2, 1e-5).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn bias_gradients_match_closed_form_on_zero_net() {
        let mut p = VaeParams::zeros(3, 2, 2);
        p.encoder_mean.bias = vec![0.4, -0.2];
        p.encoder_log_var.bias = vec![0.3, -0.5];
        p.decoder_out.bias = vec![1.0, -2.0, 0.5];
        let beta = 1.2;
        let mut g = p.zeros_like();
        sample_gradient(&p, &[0.0; 3], &[0.7, -0.4], beta, &mut g).unwrap();

        assert_eq!(g.decoder_out.bias, vec![2.0, -4.0, 1.0]);
        for j in 0..2 {
            assert!((g.encoder_mean.bias[j] - beta * p.encoder_mean.bias[j]).abs() < 1e-15);
            let lv = p.encoder_log_var.bias[j];
            assert!((g.encoder_log_var.bias[j] - beta * 0.5 * (lv.exp() - 1.0)).abs() < 1e-15);
        }
        assert!(grad_check(&p, &[0.0; 3], &[0.7, -0.4], beta, 1e-5).unwrap() < 1e-4);
    }

    #[test]
    fn zero_beta_drops_kl_gradient() {
        let mut rng = seed::rng(4);
        let p = VaeParams::init(3, 4, 2, &mut rng);
        let x = [0.2, -0.4, 1.0];
        // with noise 0 and beta 0 only the reconstruction path contributes,
        // so the log-variance head gets no gradient at all
        let mut g = p.zeros_like();
        sample_gradient(&p, &x, &[0.0, 0.0], 0.0, &mut g).unwrap();
        assert!(g
            .encoder_log_var
            .weight
            .iter()
            .chain(&g.encoder_log_var.bias)
            .all(|&v| v == 0.0));
    }

    #[test]
    fn coarse_step_degrades_agreement() {
        let mut rng = seed::rng(23);
        let params = VaeParams::init(4, 3, 2, &mut rng);
        let x = [0.9, -1.3, 0.4, 2.0];
        let noise = [0.5, 1.5];
        let fine = grad_check(&params, &x, &noise, 1.2, 1e-5).unwrap();
        let coarse = grad_check(&params, &x, &noise, 1.2, 1e-1).unwrap();
        assert!(coarse > 10.0 * fine, "coarse {coarse} fine {fine}");
    }
}
