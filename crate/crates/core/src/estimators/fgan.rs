//! Variational f-divergence loss for implicit model fitting.
//!
//! l(theta, lambda, Y) = E_{model(theta)}[lambda] - f*(lambda(Y)), where
//! the model expectation is a Monte Carlo mean over base draws pushed
//! through theta. The base draws are fixed at construction (common random
//! numbers), so the objective is a smooth deterministic function of theta
//! and the model term can be cached per (theta, lambda) pair.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, Mutex};

use crate::data::Dataset;
use crate::divergences::{FDivergence, RatioModel};
use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::saddle::SaddleLoss;
use crate::sieves::Sieve;

pub struct FganLoss {
    div: FDivergence,
    model: Arc<dyn RatioModel>,
    base: Vec<Vec<f64>>,
    lambda_sieve: Sieve,
    cache: Mutex<Option<(u64, f64)>>,
}

fn coord_key(theta: &[f64], lambda: &[f64]) -> u64 {
    let mut h = DefaultHasher::new();
    for v in theta.iter().chain(lambda) {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

impl FganLoss {
    pub fn new(
        div: FDivergence,
        model: Arc<dyn RatioModel>,
        m_samples: usize,
        lambda_sieve: Sieve,
        seed: u64,
    ) -> Result<Self> {
        if m_samples == 0 {
            return Err(Error::invalid("model sample count must be positive"));
        }
        if lambda_sieve.output_dim() != 1 {
            return Err(Error::invalid("adversary must be scalar-valued"));
        }
        if lambda_sieve.input_dim() != model.sample_dim() {
            return Err(Error::invalid("adversary input dim must match sample dim"));
        }
        let mut rng = rng_from(seed, &[0xF6A4]);
        let base = model.draw_base(m_samples, &mut rng);
        Ok(FganLoss {
            div,
            model,
            base,
            lambda_sieve,
            cache: Mutex::new(None),
        })
    }

    pub fn divergence(&self) -> &FDivergence {
        &self.div
    }

    pub fn lambda_sieve(&self) -> &Sieve {
        &self.lambda_sieve
    }

    /// Adversary value at a point: sieve output squashed into the
    /// conjugate domain.
    pub fn lambda_at(&self, lambda: &[f64], y: &[f64]) -> Result<f64> {
        let mut out = [0.0];
        self.lambda_sieve.eval(lambda, y, &mut out)?;
        Ok(self.div.squash(out[0]))
    }

    /// Monte Carlo mean of the adversary under the theta-pushforward.
    fn model_term(&self, theta: &[f64], lambda: &[f64]) -> Result<f64> {
        let key = coord_key(theta, lambda);
        if let Some((k, v)) = *self.cache.lock().unwrap() {
            if k == key {
                return Ok(v);
            }
        }
        let mut out = vec![0.0; self.model.sample_dim()];
        let mut acc = 0.0;
        for b in &self.base {
            self.model.push(theta, b, &mut out);
            acc += self.lambda_at(lambda, &out)?;
        }
        let v = acc / self.base.len() as f64;
        *self.cache.lock().unwrap() = Some((key, v));
        Ok(v)
    }
}

impl SaddleLoss for FganLoss {
    fn theta_dim(&self) -> usize {
        self.model.theta_dim()
    }

    fn lambda_dim(&self) -> usize {
        self.lambda_sieve.dim()
    }

    fn eval(&self, theta: &[f64], lambda: &[f64], y: &[f64]) -> Result<f64> {
        let gain = self.model_term(theta, lambda)?;
        let lam = self.lambda_at(lambda, y)?;
        Ok(gain - self.div.conjugate(lam)?)
    }

    fn grad_theta_batch(&self, theta: &[f64], lambda: &[f64], _data: &Dataset) -> Result<Vec<f64>> {
        // Only the model term moves with theta; central differences on it.
        let h = 1e-5 * (1.0 + theta.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        let mut grad = vec![0.0; theta.len()];
        let mut probe = theta.to_vec();
        for j in 0..theta.len() {
            let orig = probe[j];
            probe[j] = orig + h;
            let up = self.model_term(&probe, lambda)?;
            probe[j] = orig - h;
            let dn = self.model_term(&probe, lambda)?;
            probe[j] = orig;
            grad[j] = (up - dn) / (2.0 * h);
        }
        Ok(grad)
    }

    fn grad_lambda_batch(&self, theta: &[f64], lambda: &[f64], data: &Dataset) -> Result<Vec<f64>> {
        let d = self.lambda_sieve.dim();
        let mut grad = vec![0.0; d];
        let mut out = vec![0.0; self.model.sample_dim()];
        let mut raw = [0.0];
        // Gain term: mean over model draws of d lambda / d coords.
        let m = self.base.len() as f64;
        let mut gain_grad = vec![0.0; d];
        for b in &self.base {
            self.model.push(theta, b, &mut out);
            self.lambda_sieve.eval(lambda, &out, &mut raw)?;
            let w = self.div.squash_deriv(raw[0]);
            self.lambda_sieve.grad_coords(lambda, &out, &[w], &mut gain_grad)?;
        }
        // Payment term: mean over data of f*'(lambda) d lambda / d coords.
        let n = data.n() as f64;
        let mut pay_grad = vec![0.0; d];
        for row in data.rows() {
            let y = &row[..self.lambda_sieve.input_dim()];
            self.lambda_sieve.eval(lambda, y, &mut raw)?;
            let lam = self.div.squash(raw[0]);
            let w = self.div.conjugate_prime(lam)? * self.div.squash_deriv(raw[0]);
            self.lambda_sieve.grad_coords(lambda, y, &[w], &mut pay_grad)?;
        }
        for i in 0..d {
            grad[i] = gain_grad[i] / m - pay_grad[i] / n;
        }
        Ok(grad)
    }
}

/// Dual divergence value with the closed-form adversary
/// lambda*(y) = f'(dQ_theta/dP(y)), using the model's exact ratio.
pub fn analytic_dual_estimate(
    div: &FDivergence,
    model: &dyn RatioModel,
    theta: &[f64],
    data: &Dataset,
    m_samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = rng_from(seed, &[0xF6A5]);
    let base = model.draw_base(m_samples, &mut rng);
    let mut out = vec![0.0; model.sample_dim()];
    let mut gain = 0.0;
    for b in &base {
        model.push(theta, b, &mut out);
        let r = model
            .log_ratio(theta, &out)
            .ok_or_else(|| Error::UnsupportedModel("model lacks a closed-form ratio".into()))?
            .exp();
        gain += div.analytic_adversary(r)?;
    }
    gain /= m_samples as f64;
    let mut pay = 0.0;
    for row in data.rows() {
        let r = model
            .log_ratio(theta, row)
            .ok_or_else(|| Error::UnsupportedModel("model lacks a closed-form ratio".into()))?
            .exp();
        let lam = div.analytic_adversary(r)?;
        pay += div.conjugate(lam)?;
    }
    pay /= data.n() as f64;
    Ok(gain - pay)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergences::{DivergenceFamily, GaussianLocation};
    use crate::saddle::mean_loss;
    use crate::sieves::{Activation, SieveKind};
    use rand::Rng as _;

    fn model() -> Arc<dyn RatioModel> {
        Arc::new(GaussianLocation {
            data_mean: 0.0,
            sigma: 1.0,
        })
    }

    fn tiny_net() -> Sieve {
        Sieve::new(
            "adv",
            SieveKind::Network {
                input_dim: 1,
                output_dim: 1,
                depth: 2,
                width: 4,
                max_nonzero: 1000,
                weight_clip: 10.0,
                output_clip: 20.0,
                activation: Activation::Tanh,
            },
        )
        .unwrap()
    }

    fn std_normal_data(n: usize, seed: u64) -> Dataset {
        use rand_distr::StandardNormal;
        let mut rng = rng_from(seed, &[]);
        Dataset::from_scalars((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
    }

    #[test]
    fn zero_adversary_zero_loss() {
        let div = FDivergence::raw(DivergenceFamily::ChiSquared);
        let loss = FganLoss::new(div, model(), 64, tiny_net(), 3).unwrap();
        let zeros = vec![0.0; loss.lambda_dim()];
        // Zero net weights give lambda = squash(0) = 0; f*(0) = 0.
        let v = loss.eval(&[0.7], &zeros, &[1.2]).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn model_equals_data_gives_zero_analytic_dual() {
        let div = FDivergence::normalized(DivergenceFamily::KullbackLeibler).unwrap();
        let data = std_normal_data(500, 5);
        // theta at the data mean: the ratio is identically 1.
        let v = analytic_dual_estimate(&div, model().as_ref(), &[0.0], &data, 500, 9).unwrap();
        assert!(v.abs() < 1e-14, "{v}");
    }

    #[test]
    fn kl_analytic_dual_recovers_half() {
        // KL(N(1,1) || N(0,1)) = 0.5.
        let div = FDivergence::normalized(DivergenceFamily::KullbackLeibler).unwrap();
        let data = std_normal_data(20_000, 21);
        let v = analytic_dual_estimate(&div, model().as_ref(), &[1.0], &data, 20_000, 22).unwrap();
        assert!((v - 0.5).abs() < 0.05, "{v}");
    }

    #[test]
    fn model_term_cached_and_deterministic() {
        let div = FDivergence::normalized(DivergenceFamily::KullbackLeibler).unwrap();
        let loss = FganLoss::new(div, model(), 128, tiny_net(), 7).unwrap();
        let mut rng = rng_from(8, &[]);
        let lam: Vec<f64> = (0..loss.lambda_dim()).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let a = loss.eval(&[0.4], &lam, &[0.3]).unwrap();
        let b = loss.eval(&[0.4], &lam, &[0.3]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lambda_gradient_matches_finite_differences() {
        let div = FDivergence::normalized(DivergenceFamily::KullbackLeibler).unwrap();
        let loss = FganLoss::new(div, model(), 32, tiny_net(), 11).unwrap();
        let data = std_normal_data(16, 12);
        let mut rng = rng_from(13, &[]);
        let lam: Vec<f64> = (0..loss.lambda_dim()).map(|_| rng.gen_range(-0.4..0.4)).collect();
        let theta = [0.6];
        let grad = loss.grad_lambda_batch(&theta, &lam, &data).unwrap();
        let h = 1e-6;
        for i in 0..lam.len() {
            let mut up = lam.clone();
            let mut dn = lam.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (mean_loss(&loss, &theta, &up, &data).unwrap()
                - mean_loss(&loss, &theta, &dn, &data).unwrap())
                / (2.0 * h);
            assert!(
                (grad[i] - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                "coord {i}: {} vs {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn theta_gradient_matches_finite_differences_of_objective() {
        let div = FDivergence::normalized(DivergenceFamily::KullbackLeibler).unwrap();
        let loss = FganLoss::new(div, model(), 64, tiny_net(), 15).unwrap();
        let data = std_normal_data(16, 16);
        let mut rng = rng_from(17, &[]);
        let lam: Vec<f64> = (0..loss.lambda_dim()).map(|_| rng.gen_range(-0.4..0.4)).collect();
        let grad = loss.grad_theta_batch(&[0.5], &lam, &data).unwrap();
        let h = 1e-4;
        let fd = (mean_loss(&loss, &[0.5 + h], &lam, &data).unwrap()
            - mean_loss(&loss, &[0.5 - h], &lam, &data).unwrap())
            / (2.0 * h);
        assert!((grad[0] - fd).abs() < 1e-6 * (1.0 + fd.abs()));
    }
}
