//! Smoothed Bellman residual loss for entropy-regularized MDPs.
//!
//! Rows carry transitions (s, a, s+); the outer parameter stacks a value
//! function V and per-state action logits normalized through log-softmax,
//! and the adversary scores each (s, a) cell. The per-row loss is
//!   (R(s,a) + beta V(s+) - V(s) - log P(a|s)) lambda(s,a) - lambda(s,a)^2 / 2,
//! whose inner maximum is the conditional mean Bellman residual per cell.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{linear_in_coords, linear_lambda_matrix, solve_quadratic_argmax};
use crate::saddle::SaddleLoss;
use crate::sieves::Sieve;

pub type RewardFn = Arc<dyn Fn(usize, usize) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct MdpBatch {
    pub beta: f64,
    pub n_states: usize,
    pub n_actions: usize,
    pub reward: RewardFn,
    pub s_col: usize,
    pub a_col: usize,
    pub s_plus_col: usize,
}

impl MdpBatch {
    pub fn new(
        beta: f64,
        n_states: usize,
        n_actions: usize,
        reward: RewardFn,
        s_col: usize,
        a_col: usize,
        s_plus_col: usize,
    ) -> Result<Self> {
        if !(0.0 < beta && beta < 1.0) {
            return Err(Error::invalid("discount must lie in (0, 1)"));
        }
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("state and action counts must be positive"));
        }
        Ok(MdpBatch {
            beta,
            n_states,
            n_actions,
            reward,
            s_col,
            a_col,
            s_plus_col,
        })
    }
}

pub struct SbeedLoss {
    batch: MdpBatch,
    v_sieve: Sieve,
    logits_sieve: Sieve,
    lambda_sieve: Sieve,
}

fn log_softmax(logits: &[f64], a: usize) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    logits[a] - lse
}

impl SbeedLoss {
    pub fn new(batch: MdpBatch, v_sieve: Sieve, logits_sieve: Sieve, lambda_sieve: Sieve) -> Result<Self> {
        if v_sieve.output_dim() != 1 {
            return Err(Error::invalid("value sieve must be scalar-valued"));
        }
        if logits_sieve.output_dim() != batch.n_actions
            || lambda_sieve.output_dim() != batch.n_actions
        {
            return Err(Error::invalid(
                "logits and adversary sieves must have one output per action",
            ));
        }
        Ok(SbeedLoss {
            batch,
            v_sieve,
            logits_sieve,
            lambda_sieve,
        })
    }

    pub fn v_dim(&self) -> usize {
        self.v_sieve.dim()
    }

    pub fn v_sieve(&self) -> &Sieve {
        &self.v_sieve
    }

    pub fn lambda_sieve(&self) -> &Sieve {
        &self.lambda_sieve
    }

    fn split<'a>(&self, theta: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        theta.split_at(self.v_sieve.dim())
    }

    /// Bellman residual delta for one transition row.
    fn residual(&self, theta: &[f64], row: &[f64]) -> Result<(f64, usize, usize)> {
        let (vc, lc) = self.split(theta);
        let s = row[self.batch.s_col];
        let a = row[self.batch.a_col] as usize;
        let sp = row[self.batch.s_plus_col];
        if a >= self.batch.n_actions {
            return Err(Error::invalid(format!("action index {a} out of range")));
        }
        let mut v = [0.0];
        self.v_sieve.eval(vc, &[s], &mut v)?;
        let mut vp = [0.0];
        self.v_sieve.eval(vc, &[sp], &mut vp)?;
        let mut logits = vec![0.0; self.batch.n_actions];
        self.logits_sieve.eval(lc, &[s], &mut logits)?;
        let logp = log_softmax(&logits, a);
        let r = (self.batch.reward)(row[self.batch.s_col] as usize, a);
        Ok((r + self.batch.beta * vp[0] - v[0] - logp, s as usize, a))
    }

    fn lambda_at(&self, lambda: &[f64], s: f64, a: usize) -> Result<f64> {
        let mut lam = vec![0.0; self.batch.n_actions];
        self.lambda_sieve.eval(lambda, &[s], &mut lam)?;
        Ok(lam[a])
    }
}

impl SaddleLoss for SbeedLoss {
    fn theta_dim(&self) -> usize {
        self.v_sieve.dim() + self.logits_sieve.dim()
    }

    fn lambda_dim(&self) -> usize {
        self.lambda_sieve.dim()
    }

    fn eval(&self, theta: &[f64], lambda: &[f64], y: &[f64]) -> Result<f64> {
        let (delta, _, a) = self.residual(theta, y)?;
        let lam = self.lambda_at(lambda, y[self.batch.s_col], a)?;
        Ok(delta * lam - 0.5 * lam * lam)
    }

    fn grad_theta_batch(&self, theta: &[f64], lambda: &[f64], data: &Dataset) -> Result<Vec<f64>> {
        let (vc, lc) = self.split(theta);
        let (vd, ld) = (self.v_sieve.dim(), self.logits_sieve.dim());
        let mut grad = vec![0.0; vd + ld];
        let na = self.batch.n_actions;
        let mut logits = vec![0.0; na];
        for row in data.rows() {
            let (_, _, a) = self.residual(theta, row)?;
            let s = row[self.batch.s_col];
            let sp = row[self.batch.s_plus_col];
            let lam = self.lambda_at(lambda, s, a)?;
            // d l / d V-coords: lam * (beta dV(s+) - dV(s)).
            self.v_sieve
                .grad_coords(vc, &[sp], &[lam * self.batch.beta], &mut grad[..vd])?;
            self.v_sieve.grad_coords(vc, &[s], &[-lam], &mut grad[..vd])?;
            // d l / d logits: -lam * (1{a'=a} - softmax(s)).
            self.logits_sieve.eval(lc, &[s], &mut logits)?;
            let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let z: f64 = logits.iter().map(|&v| (v - max).exp()).sum();
            let mut upstream = vec![0.0; na];
            for ap in 0..na {
                let pi = (logits[ap] - max).exp() / z;
                upstream[ap] = -lam * (if ap == a { 1.0 } else { 0.0 } - pi);
            }
            self.logits_sieve.grad_coords(lc, &[s], &upstream, &mut grad[vd..])?;
        }
        let n = data.n() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok(grad)
    }

    fn grad_lambda_batch(&self, theta: &[f64], lambda: &[f64], data: &Dataset) -> Result<Vec<f64>> {
        let na = self.batch.n_actions;
        let mut grad = vec![0.0; self.lambda_sieve.dim()];
        for row in data.rows() {
            let (delta, _, a) = self.residual(theta, row)?;
            let s = row[self.batch.s_col];
            let lam = self.lambda_at(lambda, s, a)?;
            let mut upstream = vec![0.0; na];
            upstream[a] = delta - lam;
            self.lambda_sieve.grad_coords(lambda, &[s], &upstream, &mut grad)?;
        }
        let n = data.n() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok(grad)
    }

    fn inner_argmax(&self, theta: &[f64], data: &Dataset, _space: &Sieve) -> Option<Result<Vec<f64>>> {
        if !linear_in_coords(&self.lambda_sieve) {
            return None;
        }
        Some(self.solve_inner(theta, data))
    }
}

impl SbeedLoss {
    fn solve_inner(&self, theta: &[f64], data: &Dataset) -> Result<Vec<f64>> {
        let d = self.lambda_sieve.dim();
        let zeros = vec![0.0; d];
        let mut rhs = DVector::zeros(d);
        let mut g = DMatrix::zeros(d, d);
        for row in data.rows() {
            let (delta, _, a) = self.residual(theta, row)?;
            let u = linear_lambda_matrix(&self.lambda_sieve, &zeros, &[row[self.batch.s_col]])?;
            let ua = &u[a * d..(a + 1) * d];
            for i in 0..d {
                if ua[i] == 0.0 {
                    continue;
                }
                rhs[i] += delta * ua[i];
                for j in 0..d {
                    g[(i, j)] += ua[i] * ua[j];
                }
            }
        }
        // Unvisited (s, a) cells leave zero rows; pin them at 0.
        let ridge = 1e-12 * (1.0 + g.trace() / d as f64);
        solve_quadratic_argmax(rhs, g, ridge)
    }
}

/// Tabular sieves (indicator basis over state indices) for an MDP with
/// `n_states` states: edges between consecutive integer states.
pub fn tabular_sieve(id: &str, n_states: usize, output_dim: usize) -> Result<Sieve> {
    let edges: Vec<f64> = (1..n_states).map(|s| s as f64 - 0.5).collect();
    Sieve::binned(id, edges, output_dim)
}
